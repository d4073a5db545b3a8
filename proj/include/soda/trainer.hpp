#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "soda/data.hpp"
#include "soda/evaluation.hpp"
#include "soda/network.hpp"
#include "soda/objectives.hpp"
#include "soda/optimizer.hpp"

namespace soda {

enum class GrlSchedule { constant, ramp };

struct TrainConfig {
  std::size_t steps = 2000;
  AdamConfig adam;
  LossWeights weights;
  GroupSizes group_sizes;
  GrlSchedule grl_schedule = GrlSchedule::ramp;
  double grl_constant = 1.0;
  std::uint64_t seed = 0;
  std::size_t eval_every = 100;
  std::size_t checkpoint_every = 0;  // 0: same as eval_every
  std::filesystem::path checkpoint_path;  // empty: no checkpoints
  std::filesystem::path metrics_path;     // empty: no metrics log
  /// When false, unlabeled samples get weight 1 in the discriminator
  /// losses instead of the recognizer output.
  bool recognizer_weights = true;
  bool detach_recognizer = false;
  /// Share of labeled target samples held out for model selection.
  double val_fraction = 0.2;
  bool eval_pad = false;
  PadConfig pad;
  bool resume = false;

  void validate() const;
  double grl_coeff_at(std::size_t step) const;  // step is 1-based
  bool operator==(const TrainConfig&) const = default;
};

struct TrainRecord {
  std::size_t step = 0;
  LossReport losses;
  std::optional<std::vector<LabelAuc>> auc_by_label;      // unlabeled target, hidden labels
  std::optional<std::vector<LabelAuc>> val_auc_by_label;  // held-out labeled target
  std::optional<double> pad;
  double seconds = 0.0;
};

/// One JSON object, no trailing newline.
std::string to_json_line(const TrainRecord& record);

/// Images, groups and training labels of a batch in source, labeled-target,
/// unlabeled-target order. Unlabeled entries have null labels.
struct BatchLayout {
  std::vector<const Image*> images;
  std::vector<Group> groups;
  std::vector<const LabelVector*> labels;
};
BatchLayout layout_of(const Batch& batch);

/// Forward pass, the five losses and the backward pass for one batch.
/// Gradients are accumulated into `grads` (a zeros_like() model); the model
/// itself is not changed.
LossReport compute_gradients(const Model& model, const Batch& batch, const LabelTopology& topology,
                             const TrainConfig& config, Model& grads,
                             ReversalWiring wiring = ReversalWiring::reversed);

/// Forward all groups, compute the five losses, backpropagate with the
/// reversal layer in front of both discriminators, and apply one Adam
/// update to every parameter. Throws NumericalAbort on a non-finite loss
/// or gradient, before any parameter changes.
LossReport train_step(Model& model, Adam& optimizer, const Batch& batch,
                      const LabelTopology& topology, const TrainConfig& config);

struct FitResult {
  Model final_model;
  Model best_model;
  double best_score = -1.0;
  std::vector<TrainRecord> log;
  std::size_t completed_steps = 0;
};

/// Called after each step; returning false stops the run early (the state
/// on disk is whatever the last checkpoint holds).
using StepCallback = std::function<bool(const TrainRecord&)>;

FitResult fit(const OpenSetData& data, const ModelConfig& model_config, const TrainConfig& config,
              const StepCallback& on_step = {});

std::filesystem::path best_checkpoint_path(const std::filesystem::path& checkpoint_path);

}  // namespace soda
