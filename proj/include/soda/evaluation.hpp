#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "soda/data.hpp"
#include "soda/label_space.hpp"
#include "soda/network.hpp"

namespace soda {

/// Probability that a random positive outranks a random negative, ties
/// counted one half, via mid-ranks. Throws UndefinedAuc when either class
/// is absent.
double auc_roc(std::span<const double> scores, std::span<const int> labels);

struct LabelAuc {
  std::string label;
  std::optional<double> auc;  // nullopt when only one class is present
};

/// AUC for each target-domain label, in target label order. `truth` holds
/// one label vector per column of `probabilities`.
std::vector<LabelAuc> per_label_auc(const Matrix& probabilities,
                                    std::span<const LabelVector* const> truth,
                                    const LabelTopology& topology);

/// Scores target-domain samples that carry evaluation labels (true or
/// hidden). Throws InvalidInput when no such sample exists.
std::vector<LabelAuc> per_label_auc(const Model& model, std::span<const Sample> samples,
                                    const LabelTopology& topology);

/// Mean over defined entries; NaN when none is defined.
double mean_auc(const std::vector<LabelAuc>& aucs);
std::optional<double> auc_for(const std::vector<LabelAuc>& aucs, const std::string& label);

/// Features (feature_dim x N) and probabilities (|L| x N), evaluated in chunks.
Matrix extract_features(const Model& model, std::span<const Sample> samples);
Matrix predict(const Model& model, std::span<const Sample> samples);

struct PadConfig {
  std::vector<double> c_grid{0.01, 0.1, 1.0, 10.0, 100.0};
  double split_fraction = 0.5;  // held-out share of each domain
  std::size_t epochs = 50;
  double step_size = 0.1;
  std::uint64_t seed = 0;
  std::size_t repeats = 1;

  void validate() const;
  bool operator==(const PadConfig&) const = default;
};

struct PadResult {
  double distance = 0.0;          // mean over repeats
  std::vector<double> distances;  // one per repeat
  std::vector<double> min_errors; // one per repeat
};

/// 2 (1 - 2 eps).
double pad_from_error(double error);

/// Rows are samples. Trains a linear max-margin classifier per C on a
/// stratified split and converts the smallest held-out error to a distance.
PadResult proxy_a_distance(const Matrix& source_features, const Matrix& target_features,
                           const PadConfig& config);

struct SaliencyMap {
  std::string label;
  std::size_t height = 0;  // last conv map shape
  std::size_t width = 0;
  std::vector<double> grid;  // height * width, row-major, >= 0
  Image overlay;             // map bilinearly upsampled to image size, 1 channel
};

/// Grad-CAM over the last convolutional activation map for the label's
/// pre-sigmoid logit.
SaliencyMap grad_cam(const Model& model, const Image& image, const std::string& label,
                     const LabelTopology& topology);

/// Mass-weighted centroid (row, col) of the upsampled map in pixel
/// coordinates; nullopt for an all-zero map.
std::optional<std::pair<double, double>> saliency_centroid(const SaliencyMap& map);

/// Writes an RGB overlay PNG and a JSON sidecar {label, image_path, map_shape}.
void write_saliency(const SaliencyMap& map, const Image& image,
                    const std::filesystem::path& png_path,
                    const std::filesystem::path& sidecar_path);

struct FeatureTable {
  std::vector<Domain> domains;
  std::vector<bool> labeled;
  std::vector<std::vector<std::string>> labels;
  Matrix features;  // rows are samples

  Matrix rows_for(Domain d) const;
};

/// CSV `domain,labeled,labels,f0..f{D-1}`, 17 significant digits.
void export_features(const Model& model, std::span<const Sample> samples,
                     const LabelTopology& topology, const std::filesystem::path& path);
FeatureTable read_features(const std::filesystem::path& path);

}  // namespace soda
