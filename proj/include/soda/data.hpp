#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <vector>

#include "soda/image.hpp"
#include "soda/label_space.hpp"

namespace soda {

/// One image with its domain tag. Unlabeled samples never expose labels
/// through training_labels(); synthetic and manifest-provided ground truth
/// for them is kept apart and only reachable via evaluation_labels().
class Sample {
 public:
  static Sample labeled(Image image, Domain domain, LabelVector labels);
  static Sample unlabeled(Image image, std::optional<LabelVector> hidden_labels = std::nullopt);

  const Image& image() const { return image_; }
  Domain domain() const { return domain_; }
  bool is_labeled() const { return labels_.has_value(); }

  const LabelVector* training_labels() const { return labels_ ? &*labels_ : nullptr; }
  const LabelVector* evaluation_labels() const {
    if (labels_) return &*labels_;
    return hidden_ ? &*hidden_ : nullptr;
  }

  /// Copy with hidden ground truth removed; what the trainer receives.
  Sample without_hidden_labels() const;

  bool operator==(const Sample&) const = default;

 private:
  Image image_;
  Domain domain_ = Domain::source;
  std::optional<LabelVector> labels_;
  std::optional<LabelVector> hidden_;
};

using Dataset = std::vector<Sample>;

struct OpenSetData {
  LabelTopology topology;
  Dataset source;
  Dataset target_labeled;
  Dataset target_unlabeled;
};

struct ShiftParams {
  double gamma = 0.4;
  double noise_sigma = 0.25;
  double vignette = 0.8;

  bool operator==(const ShiftParams&) const = default;
};

/// Fixed label scheme: source {A,B,C}, target {A,D}, common {A}.
struct SyntheticSpec {
  std::size_t canvas_size = 32;
  std::size_t n_source = 400;
  std::size_t n_target_labeled = 60;
  std::size_t n_target_unlabeled = 140;
  ShiftParams shift;
  double multilabel_prob = 0.2;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const SyntheticSpec&) const = default;
};

LabelTopology synthetic_topology();

OpenSetData generate_synthetic(const SyntheticSpec& spec);

/// Target-domain appearance shift: gamma, then vignette, then additive
/// Gaussian noise, then clipping to [0,1]. Identity when gamma = 1 and
/// vignette = sigma = 0.
void apply_domain_shift(Image& image, const ShiftParams& shift, std::mt19937_64& rng);

struct ManifestOptions {
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 1;
};

/// CSV with header `path,domain,labeled,labels`. Paths are relative to the
/// manifest. labeled=0 rows become unlabeled target samples; any labels on
/// such rows are retained as hidden evaluation labels.
OpenSetData load_manifest(const std::filesystem::path& path, const LabelTopology& topology,
                          const ManifestOptions& options = {});

/// Writes images/<group>_<index>.png plus manifest.csv under `directory`.
/// Returns the manifest path.
std::filesystem::path write_manifest(const OpenSetData& data,
                                     const std::filesystem::path& directory);

/// Shuffles `target` with `seed` and moves the first round(fraction * n)
/// samples into the labeled set; the remainder become unlabeled samples
/// that keep their labels as hidden ground truth.
std::pair<Dataset, Dataset> split_target(const Dataset& target, double labeled_fraction,
                                         std::uint64_t seed);

struct GroupSizes {
  std::size_t source = 8;
  std::size_t target_labeled = 4;
  std::size_t target_unlabeled = 8;

  std::size_t total() const { return source + target_labeled + target_unlabeled; }
  bool operator==(const GroupSizes&) const = default;
};

struct Batch {
  std::vector<Sample> source_group;
  std::vector<Sample> target_labeled_group;
  std::vector<Sample> target_unlabeled_group;

  std::size_t size() const {
    return source_group.size() + target_labeled_group.size() + target_unlabeled_group.size();
  }
};

/// Independent uniform draws per group. Unlabeled samples are stripped of
/// hidden labels before they enter the batch.
Batch sample_batch(const OpenSetData& data, const GroupSizes& sizes, std::mt19937_64& rng,
                   bool with_replacement = true);

}  // namespace soda
