#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "soda/data.hpp"
#include "soda/evaluation.hpp"
#include "soda/network.hpp"
#include "soda/trainer.hpp"

namespace soda {

/// dg only reproduces the semi-supervised DANN baseline; all off is plain
/// supervised training on source and labeled target.
struct AblationSwitches {
  bool enable_dg = true;
  bool enable_dc = true;
  bool enable_r = true;

  bool operator==(const AblationSwitches&) const = default;
};

struct ManifestSource {
  std::string path;
  std::vector<std::string> source_labels;
  std::vector<std::string> target_labels;
  ManifestOptions options;

  bool operator==(const ManifestSource& o) const {
    return path == o.path && source_labels == o.source_labels &&
           target_labels == o.target_labels && options.height == o.options.height &&
           options.width == o.options.width && options.channels == o.options.channels;
  }
};

struct RunConfig {
  std::string output_dir = "run";
  std::optional<SyntheticSpec> synthetic;
  std::optional<ManifestSource> manifest;
  std::size_t feature_dim = 64;
  std::size_t hidden_dim = 64;
  std::vector<std::size_t> conv_widths{16, 32, 64};
  TrainConfig train;
  PadConfig pad;
  AblationSwitches ablation;

  void validate() const;
  ModelConfig model_config(const LabelTopology& topology) const;
  /// Train config with ablation switches folded into the loss weights.
  TrainConfig effective_train_config() const;
  bool operator==(const RunConfig&) const = default;
};

nlohmann::json to_json(const RunConfig& config);
/// Missing fields take defaults; unknown keys are rejected. A document
/// without a data section uses the default synthetic benchmark.
RunConfig run_config_from_json(const nlohmann::json& doc);

/// Sets `doc` at a dotted path, e.g. ("train.steps", "50"). The value is
/// parsed as JSON when possible, otherwise kept as a string.
void apply_override(nlohmann::json& doc, const std::string& dotted_key, const std::string& value);

/// Reads `path` (if given), applies `--key=value` overrides, then parses.
RunConfig load_run_config(const std::optional<std::filesystem::path>& path,
                          const std::vector<std::string>& overrides);

}  // namespace soda
