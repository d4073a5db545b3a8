#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstddef>
#include <random>
#include <string>
#include <vector>

namespace soda {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
// Feature maps: one row per channel, columns ordered (sample, y, x).
using FeatureMap = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct NamedParam {
  std::string name;
  Matrix* value;
};

/// Uniform(-sqrt(6/fan_in), sqrt(6/fan_in)).
void init_uniform_fan_in(Matrix& weight, std::size_t fan_in, std::mt19937_64& rng);

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

/// Affine map over batch columns: y = W x + b.
struct Linear {
  Matrix weight;  // out x in
  Matrix bias;    // out x 1

  Linear() = default;
  Linear(std::size_t in, std::size_t out);

  std::size_t in_dim() const { return static_cast<std::size_t>(weight.cols()); }
  std::size_t out_dim() const { return static_cast<std::size_t>(weight.rows()); }

  void init(std::mt19937_64& rng);
  Matrix forward(const Matrix& x) const;
  /// Accumulates parameter gradients into `grad` and returns dL/dx.
  Matrix backward(const Matrix& x, const Matrix& dy, Linear& grad) const;
  void append_params(const std::string& prefix, std::vector<NamedParam>& out);
};

/// Two hidden affine+ReLU layers and a one-unit output logit.
struct Mlp {
  Linear hidden1;
  Linear hidden2;
  Linear output;

  struct Cache {
    Matrix a1;  // post-ReLU hidden activations
    Matrix a2;
  };

  Mlp() = default;
  Mlp(std::size_t in, std::size_t hidden);

  void init(std::mt19937_64& rng);
  /// Returns logits, 1 x N.
  Matrix forward(const Matrix& x, Cache* cache) const;
  Matrix backward(const Matrix& x, const Cache& cache, const Matrix& dlogit, Mlp& grad) const;
  void append_params(const std::string& prefix, std::vector<NamedParam>& out);
};

/// 3x3 convolution, stride 1, zero padding 1.
struct Conv3x3 {
  Matrix weight;  // out_channels x (in_channels * 9)
  Matrix bias;    // out_channels x 1

  Conv3x3() = default;
  Conv3x3(std::size_t in_channels, std::size_t out_channels);

  std::size_t in_channels() const { return static_cast<std::size_t>(weight.cols()) / 9; }
  std::size_t out_channels() const { return static_cast<std::size_t>(weight.rows()); }

  void init(std::mt19937_64& rng);
  void append_params(const std::string& prefix, std::vector<NamedParam>& out);
};

FeatureMap im2col3x3(const FeatureMap& x, std::size_t n, std::size_t h, std::size_t w);
FeatureMap col2im3x3(const FeatureMap& cols, std::size_t channels, std::size_t n, std::size_t h,
                     std::size_t w);

/// 2x2 max pooling, stride 2. `argmax` receives the flat source column of
/// each pooled output.
FeatureMap max_pool2(const FeatureMap& x, std::size_t n, std::size_t h, std::size_t w,
                     Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& argmax);
FeatureMap max_pool2_backward(
    const FeatureMap& dy,
    const Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& argmax,
    std::size_t input_cols);

}  // namespace soda
