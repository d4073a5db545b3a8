#pragma once

#include <cstddef>
#include <vector>

#include "soda/label_space.hpp"
#include "soda/network.hpp"

namespace soda {

/// Probabilities are clamped to [kProbEpsilon, 1 - kProbEpsilon] before
/// taking logarithms; outside that range a term has zero gradient.
inline constexpr double kProbEpsilon = 1e-7;

struct LossWeights {
  double recognizer = 1.0;
  double domain_general = 1.0;
  double common_labeled = 1.0;
  double common_unlabeled = 1.0;

  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

enum class Group { source, target_labeled, target_unlabeled };

/// Head probabilities for a minibatch (columns/entries are samples) with
/// each sample's group and, for labeled samples, its label vector.
struct LossBatch {
  Matrix y_hat;
  Vector d_g_hat;
  Vector d_c_hat;
  Vector r_hat;
  /// Weights applied to unlabeled samples in the discriminator losses.
  /// Empty means "use r_hat". Always treated as constants.
  Vector unlabeled_weight;
  std::vector<Group> groups;
  std::vector<const LabelVector*> labels;  // nullptr for unlabeled samples
  const LabelTopology* topology = nullptr;

  std::size_t size() const { return groups.size(); }
  void validate() const;
};

struct LossReport {
  double l_gy = 0.0;
  double l_r = 0.0;
  double l_dg = 0.0;
  double l_dc_label = 0.0;
  double l_dc_un = 0.0;
  double total = 0.0;
  std::size_t n_source = 0;
  std::size_t n_target_labeled = 0;
  std::size_t n_target_unlabeled = 0;
};

// Each loss returns its value and, when `grad` is non-null, adds
// `scale` * dLoss/dlogit into the matching head's entries.

/// Masked multi-label binary cross-entropy over source and labeled-target
/// samples.
double loss_classifier(const LossBatch& b, OutputGradients* grad = nullptr, double scale = 1.0);

/// General domain discriminator loss with unlabeled samples weighted by r.
double loss_domain_general(const LossBatch& b, OutputGradients* grad = nullptr,
                           double scale = 1.0);

/// Common-label discriminator loss restricted to labeled samples that carry
/// at least one common label.
double loss_domain_common_labeled(const LossBatch& b, OutputGradients* grad = nullptr,
                                  double scale = 1.0);

/// Common-label discriminator loss on unlabeled target samples, weighted by r.
double loss_domain_common_unlabeled(const LossBatch& b, OutputGradients* grad = nullptr,
                                    double scale = 1.0);

/// Recognizer cross-entropy: target 1 iff the labeled sample has a common label.
double loss_recognizer(const LossBatch& b, OutputGradients* grad = nullptr, double scale = 1.0);

/// l_gy + weighted discriminator and recognizer terms. Throws
/// NumericalAbort naming the first non-finite part.
double total_objective(const LossReport& parts, const LossWeights& w);

/// All five terms and the total; gradients are accumulated with the loss
/// weights applied. Throws NumericalAbort on non-finite values.
LossReport compute_losses(const LossBatch& b, const LossWeights& w,
                          OutputGradients* grad = nullptr);

}  // namespace soda
