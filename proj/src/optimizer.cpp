#include "soda/optimizer.hpp"

#include <cmath>

#include "soda/error.hpp"

namespace soda {

Adam::Adam(const AdamConfig& config, Model& model) {
  if (!(config.learning_rate >= 0.0)) throw InvalidInput("learning rate must be >= 0");
  state_.config = config;
  for (const auto& p : model.parameters()) {
    state_.m.push_back(Matrix::Zero(p.value->rows(), p.value->cols()));
    state_.v.push_back(Matrix::Zero(p.value->rows(), p.value->cols()));
  }
}

void Adam::step(Model& model, Model& grads) {
  auto params = model.parameters();
  auto gs = grads.parameters();
  if (params.size() != state_.m.size() || gs.size() != params.size())
    throw InvalidInput("optimizer state does not match model");
  const auto& c = state_.config;
  ++state_.t;
  const double t = static_cast<double>(state_.t);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Matrix& p = *params[k].value;
    const Matrix& g = *gs[k].value;
    Matrix& m = state_.m[k];
    Matrix& v = state_.v[k];
    m = c.beta1 * m + (1.0 - c.beta1) * g;
    v = c.beta2 * v + (1.0 - c.beta2) * g.cwiseProduct(g);
    p.array() -= c.learning_rate * (m.array() / bc1) / ((v.array() / bc2).sqrt() + c.epsilon);
  }
}

}  // namespace soda
