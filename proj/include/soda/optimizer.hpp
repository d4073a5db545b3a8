#pragma once

#include <cstdint>
#include <vector>

#include "soda/network.hpp"

namespace soda {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  bool operator==(const AdamConfig&) const = default;
};

struct AdamState {
  AdamConfig config;
  std::uint64_t t = 0;
  std::vector<Matrix> m;  // first moments, in Model::parameters() order
  std::vector<Matrix> v;  // second moments

  bool operator==(const AdamState&) const = default;
};

/// Adaptive moment estimation with bias correction.
class Adam {
 public:
  Adam(const AdamConfig& config, Model& model);
  explicit Adam(AdamState state) : state_(std::move(state)) {}

  /// One update of every parameter of `model` from the matching entries of
  /// `grads` (a model of identical shape).
  void step(Model& model, Model& grads);

  const AdamState& state() const { return state_; }

 private:
  AdamState state_;
};

}  // namespace soda
