#include "soda/layers.hpp"

#include <cmath>

namespace soda {

void init_uniform_fan_in(Matrix& weight, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (Eigen::Index j = 0; j < weight.cols(); ++j)
    for (Eigen::Index i = 0; i < weight.rows(); ++i) weight(i, j) = u(rng);
}

Linear::Linear(std::size_t in, std::size_t out)
    : weight(Matrix::Zero(out, in)), bias(Matrix::Zero(out, 1)) {}

void Linear::init(std::mt19937_64& rng) {
  init_uniform_fan_in(weight, in_dim(), rng);
  bias.setZero();
}

Matrix Linear::forward(const Matrix& x) const {
  Matrix y = weight * x;
  y.colwise() += bias.col(0);
  return y;
}

Matrix Linear::backward(const Matrix& x, const Matrix& dy, Linear& grad) const {
  grad.weight.noalias() += dy * x.transpose();
  grad.bias.col(0) += dy.rowwise().sum();
  return weight.transpose() * dy;
}

void Linear::append_params(const std::string& prefix, std::vector<NamedParam>& out) {
  out.push_back({prefix + ".weight", &weight});
  out.push_back({prefix + ".bias", &bias});
}

Mlp::Mlp(std::size_t in, std::size_t hidden)
    : hidden1(in, hidden), hidden2(hidden, hidden), output(hidden, 1) {}

void Mlp::init(std::mt19937_64& rng) {
  hidden1.init(rng);
  hidden2.init(rng);
  output.init(rng);
}

Matrix Mlp::forward(const Matrix& x, Cache* cache) const {
  Matrix a1 = hidden1.forward(x).cwiseMax(0.0);
  Matrix a2 = hidden2.forward(a1).cwiseMax(0.0);
  Matrix logit = output.forward(a2);
  if (cache) {
    cache->a1 = std::move(a1);
    cache->a2 = std::move(a2);
  }
  return logit;
}

Matrix Mlp::backward(const Matrix& x, const Cache& cache, const Matrix& dlogit, Mlp& grad) const {
  Matrix da2 = output.backward(cache.a2, dlogit, grad.output);
  da2.array() *= (cache.a2.array() > 0.0).cast<double>();
  Matrix da1 = hidden2.backward(cache.a1, da2, grad.hidden2);
  da1.array() *= (cache.a1.array() > 0.0).cast<double>();
  return hidden1.backward(x, da1, grad.hidden1);
}

void Mlp::append_params(const std::string& prefix, std::vector<NamedParam>& out) {
  hidden1.append_params(prefix + ".hidden1", out);
  hidden2.append_params(prefix + ".hidden2", out);
  output.append_params(prefix + ".output", out);
}

Conv3x3::Conv3x3(std::size_t in_channels, std::size_t out_channels)
    : weight(Matrix::Zero(out_channels, in_channels * 9)), bias(Matrix::Zero(out_channels, 1)) {}

void Conv3x3::init(std::mt19937_64& rng) {
  init_uniform_fan_in(weight, static_cast<std::size_t>(weight.cols()), rng);
  bias.setZero();
}

void Conv3x3::append_params(const std::string& prefix, std::vector<NamedParam>& out) {
  out.push_back({prefix + ".weight", &weight});
  out.push_back({prefix + ".bias", &bias});
}

FeatureMap im2col3x3(const FeatureMap& x, std::size_t n, std::size_t h, std::size_t w) {
  const std::size_t channels = static_cast<std::size_t>(x.rows());
  const std::size_t plane = h * w;
  FeatureMap cols = FeatureMap::Zero(channels * 9, n * plane);
  for (std::size_t c = 0; c < channels; ++c) {
    const double* src = x.row(c).data();
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        double* dst = cols.row(c * 9 + ky * 3 + kx).data();
        const int oy = ky - 1;
        const int ox = kx - 1;
        for (std::size_t s = 0; s < n; ++s) {
          const double* sp = src + s * plane;
          double* dp = dst + s * plane;
          for (std::size_t y = 0; y < h; ++y) {
            const long sy = static_cast<long>(y) + oy;
            if (sy < 0 || sy >= static_cast<long>(h)) continue;
            const std::size_t x0 = ox < 0 ? 1 : 0;
            const std::size_t x1 = ox > 0 ? w - 1 : w;
            const double* srow = sp + sy * w + ox;
            double* drow = dp + y * w;
            for (std::size_t xx = x0; xx < x1; ++xx) drow[xx] = srow[xx];
          }
        }
      }
    }
  }
  return cols;
}

FeatureMap col2im3x3(const FeatureMap& cols, std::size_t channels, std::size_t n, std::size_t h,
                     std::size_t w) {
  const std::size_t plane = h * w;
  FeatureMap x = FeatureMap::Zero(channels, n * plane);
  for (std::size_t c = 0; c < channels; ++c) {
    double* dst = x.row(c).data();
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const double* src = cols.row(c * 9 + ky * 3 + kx).data();
        const int oy = ky - 1;
        const int ox = kx - 1;
        for (std::size_t s = 0; s < n; ++s) {
          const double* sp = src + s * plane;
          double* dp = dst + s * plane;
          for (std::size_t y = 0; y < h; ++y) {
            const long sy = static_cast<long>(y) + oy;
            if (sy < 0 || sy >= static_cast<long>(h)) continue;
            const std::size_t x0 = ox < 0 ? 1 : 0;
            const std::size_t x1 = ox > 0 ? w - 1 : w;
            double* drow = dp + sy * w + ox;
            const double* srow = sp + y * w;
            for (std::size_t xx = x0; xx < x1; ++xx) drow[xx] += srow[xx];
          }
        }
      }
    }
  }
  return x;
}

FeatureMap max_pool2(const FeatureMap& x, std::size_t n, std::size_t h, std::size_t w,
                     Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& argmax) {
  const std::size_t oh = h / 2;
  const std::size_t ow = w / 2;
  const auto channels = x.rows();
  FeatureMap y(channels, n * oh * ow);
  argmax.resize(channels, n * oh * ow);
  for (Eigen::Index c = 0; c < channels; ++c) {
    const double* src = x.row(c).data();
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t py = 0; py < oh; ++py) {
        for (std::size_t px = 0; px < ow; ++px) {
          const std::size_t base = s * h * w + 2 * py * w + 2 * px;
          std::size_t best = base;
          for (std::size_t k : {base + 1, base + w, base + w + 1}) {
            if (src[k] > src[best]) best = k;
          }
          const std::size_t o = s * oh * ow + py * ow + px;
          y(c, o) = src[best];
          argmax(c, o) = static_cast<int>(best);
        }
      }
    }
  }
  return y;
}

FeatureMap max_pool2_backward(
    const FeatureMap& dy,
    const Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& argmax,
    std::size_t input_cols) {
  FeatureMap dx = FeatureMap::Zero(dy.rows(), static_cast<Eigen::Index>(input_cols));
  for (Eigen::Index c = 0; c < dy.rows(); ++c)
    for (Eigen::Index o = 0; o < dy.cols(); ++o) dx(c, argmax(c, o)) += dy(c, o);
  return dx;
}

}  // namespace soda
