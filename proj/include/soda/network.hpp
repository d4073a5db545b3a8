#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "soda/image.hpp"
#include "soda/layers.hpp"

namespace soda {

struct ExtractorConfig {
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 1;
  std::vector<std::size_t> conv_widths{16, 32, 64};
  std::size_t feature_dim = 64;

  bool operator==(const ExtractorConfig&) const = default;
};

/// State a feature extractor keeps between forward and backward.
struct ExtractorCache {
  virtual ~ExtractorCache() = default;
  /// Last convolutional activation map (channels x samples*h*w) and its
  /// spatial shape, retained for saliency.
  FeatureMap last_conv;
  std::size_t last_conv_height = 0;
  std::size_t last_conv_width = 0;
};

/// Pluggable image -> feature vector map with hand-written backward pass.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;

  virtual std::unique_ptr<FeatureExtractor> clone() const = 0;
  virtual std::unique_ptr<FeatureExtractor> zeros_like() const = 0;
  virtual const ExtractorConfig& config() const = 0;
  std::size_t feature_dim() const { return config().feature_dim; }

  virtual void init(std::mt19937_64& rng) = 0;
  /// Returns features, feature_dim x N. Throws InvalidInput on shape mismatch.
  virtual Matrix forward(std::span<const Image* const> images,
                         std::unique_ptr<ExtractorCache>* cache) const = 0;
  /// Accumulates parameter gradients into `grad` (same concrete type).
  /// When `d_last_conv` is non-null it receives dL/d(last conv map).
  virtual void backward(const ExtractorCache& cache, const Matrix& dh, FeatureExtractor& grad,
                        FeatureMap* d_last_conv = nullptr) const = 0;
  virtual std::vector<NamedParam> parameters() = 0;
};

/// Blocks of [conv3x3 -> ReLU -> 2x2 max-pool], then flatten -> affine.
class ConvExtractor final : public FeatureExtractor {
 public:
  explicit ConvExtractor(ExtractorConfig config);

  std::unique_ptr<FeatureExtractor> clone() const override;
  std::unique_ptr<FeatureExtractor> zeros_like() const override;
  const ExtractorConfig& config() const override { return config_; }

  void init(std::mt19937_64& rng) override;
  Matrix forward(std::span<const Image* const> images,
                 std::unique_ptr<ExtractorCache>* cache) const override;
  void backward(const ExtractorCache& cache, const Matrix& dh, FeatureExtractor& grad,
                FeatureMap* d_last_conv) const override;
  std::vector<NamedParam> parameters() override;

 private:
  struct Cache;

  ExtractorConfig config_;
  std::vector<Conv3x3> convs_;
  Linear projection_;
};

/// Identity forward. Backward replaces the upstream gradient g by -coeff * g.
inline const Matrix& gradient_reversal(const Matrix& h) { return h; }
Matrix gradient_reversal_backward(const Matrix& upstream, double coeff);

/// 2 / (1 + exp(-10 p)) - 1 for training progress p in [0,1].
double grl_ramp(double progress);

struct ModelConfig {
  ExtractorConfig extractor;
  std::size_t num_labels = 0;
  std::size_t hidden_dim = 64;

  bool operator==(const ModelConfig&) const = default;
};

/// Per-batch outputs; columns/entries are samples in input order.
struct ForwardTrace {
  Matrix h;             // feature_dim x N
  Matrix y_logit;       // |L| x N
  Matrix y_hat;         // |L| x N
  Vector d_g_logit, d_c_logit, r_logit;
  Vector d_g_hat, d_c_hat, r_hat;

  std::unique_ptr<ExtractorCache> extractor_cache;
  Mlp::Cache dg_cache, dc_cache, r_cache;

  std::size_t size() const { return static_cast<std::size_t>(h.cols()); }
};

/// Loss gradients with respect to the pre-sigmoid logits of each head.
struct OutputGradients {
  Matrix y;  // |L| x N
  Vector d_g, d_c, r;

  static OutputGradients zeros(std::size_t num_labels, std::size_t n);
};

enum class ReversalWiring {
  reversed,  // discriminator gradients reach the extractor as -coeff * g
  identity,  // plain backpropagation (used for gradient checking)
};

struct BackwardOptions {
  ReversalWiring wiring = ReversalWiring::reversed;
  bool detach_recognizer = false;  // stop L_R gradients at h
};

/// Feature extractor, multi-label classifier, general and common-label
/// domain discriminators, and the common-label recognizer.
class Model {
 public:
  Model() = default;
  Model(const ModelConfig& config, std::uint64_t seed);
  Model(const ModelConfig& config, std::unique_ptr<FeatureExtractor> extractor,
        std::uint64_t seed);

  Model(const Model& other);
  Model& operator=(const Model& other);
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  /// Same architecture, all parameters zero.
  Model zeros_like() const;

  const ModelConfig& config() const { return config_; }
  std::size_t feature_dim() const { return config_.extractor.feature_dim; }
  std::size_t num_labels() const { return config_.num_labels; }

  double grl_coeff = 1.0;

  FeatureExtractor& extractor() { return *extractor_; }
  const FeatureExtractor& extractor() const { return *extractor_; }
  Linear classifier;
  Mlp dg_head;
  Mlp dc_head;
  Mlp r_head;

  Matrix forward_features(std::span<const Image* const> images) const;
  Matrix classify(const Matrix& h) const;  // probabilities, |L| x N
  Vector discriminate_general(const Matrix& h) const;
  Vector discriminate_common(const Matrix& h) const;
  Vector recognize(const Matrix& h) const;

  ForwardTrace forward(std::span<const Image* const> images) const;
  /// Accumulates parameter gradients into `grad` (a zeros_like() model).
  void backward(const ForwardTrace& trace, const OutputGradients& dout, Model& grad,
                const BackwardOptions& options = {}) const;

  /// All parameters in a fixed declared order: extractor, classifier,
  /// dg_head, dc_head, r_head.
  std::vector<NamedParam> parameters();

 private:
  ModelConfig config_;
  std::unique_ptr<FeatureExtractor> extractor_;
};

std::vector<const Image*> image_pointers(std::span<const Image> images);

}  // namespace soda
