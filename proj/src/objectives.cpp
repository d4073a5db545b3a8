#include "soda/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "soda/error.hpp"

namespace soda {

void LossWeights::validate() const {
  for (double w : {recognizer, domain_general, common_labeled, common_unlabeled}) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw InvalidInput("loss weights must be finite and >= 0");
  }
}

void LossBatch::validate() const {
  const auto n = static_cast<Eigen::Index>(groups.size());
  if (!topology) throw InvalidInput("loss batch has no topology");
  if (labels.size() != groups.size() || y_hat.cols() != n || d_g_hat.size() != n ||
      d_c_hat.size() != n || r_hat.size() != n)
    throw InvalidInput("loss batch fields disagree on sample count");
  if (unlabeled_weight.size() != 0 && unlabeled_weight.size() != n)
    throw InvalidInput("unlabeled weight length mismatch");
  if (static_cast<std::size_t>(y_hat.rows()) != topology->size())
    throw InvalidInput("classifier output length does not match topology");
}

namespace {

double clamp_prob(double p) { return std::clamp(p, kProbEpsilon, 1.0 - kProbEpsilon); }

// -log(p) and its derivative with respect to the logit z, p = sigmoid(z).
// Values use the clamped probability; derivatives are taken in logit space
// and stay nonzero past the clamp, so a saturated head can still recover.
double neg_log(double p) { return -std::log(clamp_prob(p)); }
double neg_log_dz(double p) { return -(1.0 - p); }
// -log(1 - p) and its logit derivative.
double neg_log1m(double p) { return -std::log(1.0 - clamp_prob(p)); }
double neg_log1m_dz(double p) { return p; }

const LabelVector& require_labels(const LossBatch& b, std::size_t i) {
  if (!b.labels[i]) throw InvalidInput("labeled sample " + std::to_string(i) + " has no labels");
  return *b.labels[i];
}

std::size_t count(const LossBatch& b, Group g) {
  return static_cast<std::size_t>(std::count(b.groups.begin(), b.groups.end(), g));
}

double weight_of(const LossBatch& b, std::size_t i) {
  const auto k = static_cast<Eigen::Index>(i);
  return b.unlabeled_weight.size() ? b.unlabeled_weight(k) : b.r_hat(k);
}

}  // namespace

double loss_classifier(const LossBatch& b, OutputGradients* grad, double scale) {
  b.validate();
  std::size_t n = 0;
  for (Group g : b.groups) n += g != Group::target_unlabeled;
  if (n == 0) return 0.0;

  double total = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    if (b.groups[i] == Group::target_unlabeled) continue;
    const LabelVector& lv = require_labels(b, i);
    double active = 0.0;
    for (double m : lv.mask) active += m;
    if (active == 0.0) continue;
    double sum = 0.0;
    for (std::size_t l = 0; l < lv.values.size(); ++l) {
      if (lv.mask[l] == 0.0) continue;
      const double p = b.y_hat(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(i));
      const double y = lv.values[l];
      sum += y * neg_log(p) + (1.0 - y) * neg_log1m(p);
      if (grad) {
        const double dz = y * neg_log_dz(p) + (1.0 - y) * neg_log1m_dz(p);
        grad->y(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(i)) +=
            scale * dz / (active * static_cast<double>(n));
      }
    }
    total += sum / active;
  }
  return total / static_cast<double>(n);
}

double loss_domain_general(const LossBatch& b, OutputGradients* grad, double scale) {
  b.validate();
  const double ns = static_cast<double>(count(b, Group::source));
  const double nl = static_cast<double>(count(b, Group::target_labeled));
  const double nu = static_cast<double>(count(b, Group::target_unlabeled));
  double src = 0.0, tl = 0.0, tu = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    const double p = b.d_g_hat(k);
    switch (b.groups[i]) {
      case Group::source:
        src += neg_log(p);
        if (grad) grad->d_g(k) += scale * neg_log_dz(p) / ns;
        break;
      case Group::target_labeled:
        tl += neg_log1m(p);
        if (grad) grad->d_g(k) += scale * neg_log1m_dz(p) / nl;
        break;
      case Group::target_unlabeled: {
        const double r = weight_of(b, i);
        tu += r * neg_log1m(p);
        if (grad) grad->d_g(k) += scale * r * neg_log1m_dz(p) / nu;
        break;
      }
    }
  }
  return (ns ? src / ns : 0.0) + (nl ? tl / nl : 0.0) + (nu ? tu / nu : 0.0);
}

double loss_domain_common_labeled(const LossBatch& b, OutputGradients* grad, double scale) {
  b.validate();
  std::vector<std::size_t> src, tl;
  for (std::size_t i = 0; i < b.size(); ++i) {
    if (b.groups[i] == Group::target_unlabeled) continue;
    if (!has_common_label(require_labels(b, i), *b.topology)) continue;
    (b.groups[i] == Group::source ? src : tl).push_back(i);
  }
  double loss = 0.0;
  if (!src.empty()) {
    double sum = 0.0;
    for (std::size_t i : src) {
      const auto k = static_cast<Eigen::Index>(i);
      sum += neg_log(b.d_c_hat(k));
      if (grad) grad->d_c(k) += scale * neg_log_dz(b.d_c_hat(k)) / src.size();
    }
    loss += sum / static_cast<double>(src.size());
  }
  if (!tl.empty()) {
    double sum = 0.0;
    for (std::size_t i : tl) {
      const auto k = static_cast<Eigen::Index>(i);
      sum += neg_log1m(b.d_c_hat(k));
      if (grad) grad->d_c(k) += scale * neg_log1m_dz(b.d_c_hat(k)) / tl.size();
    }
    loss += sum / static_cast<double>(tl.size());
  }
  return loss;
}

double loss_domain_common_unlabeled(const LossBatch& b, OutputGradients* grad, double scale) {
  b.validate();
  const double nu = static_cast<double>(count(b, Group::target_unlabeled));
  if (nu == 0.0) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    if (b.groups[i] != Group::target_unlabeled) continue;
    const auto k = static_cast<Eigen::Index>(i);
    const double r = weight_of(b, i);
    sum += r * neg_log1m(b.d_c_hat(k));
    if (grad) grad->d_c(k) += scale * r * neg_log1m_dz(b.d_c_hat(k)) / nu;
  }
  return sum / nu;
}

double loss_recognizer(const LossBatch& b, OutputGradients* grad, double scale) {
  b.validate();
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < b.size(); ++i) {
    if (b.groups[i] == Group::target_unlabeled) continue;
    (has_common_label(require_labels(b, i), *b.topology) ? pos : neg).push_back(i);
  }
  double loss = 0.0;
  if (!pos.empty()) {
    double sum = 0.0;
    for (std::size_t i : pos) {
      const auto k = static_cast<Eigen::Index>(i);
      sum += neg_log(b.r_hat(k));
      if (grad) grad->r(k) += scale * neg_log_dz(b.r_hat(k)) / pos.size();
    }
    loss += sum / static_cast<double>(pos.size());
  }
  if (!neg.empty()) {
    double sum = 0.0;
    for (std::size_t i : neg) {
      const auto k = static_cast<Eigen::Index>(i);
      sum += neg_log1m(b.r_hat(k));
      if (grad) grad->r(k) += scale * neg_log1m_dz(b.r_hat(k)) / neg.size();
    }
    loss += sum / static_cast<double>(neg.size());
  }
  return loss;
}

namespace {

void require_finite(double v, const char* name) {
  if (!std::isfinite(v)) throw NumericalAbort(std::string("non-finite loss term ") + name);
}

}  // namespace

double total_objective(const LossReport& p, const LossWeights& w) {
  require_finite(p.l_gy, "l_gy");
  require_finite(p.l_r, "l_r");
  require_finite(p.l_dg, "l_dg");
  require_finite(p.l_dc_label, "l_dc_label");
  require_finite(p.l_dc_un, "l_dc_un");
  const double total = p.l_gy + w.recognizer * p.l_r + w.domain_general * p.l_dg +
                       w.common_labeled * p.l_dc_label + w.common_unlabeled * p.l_dc_un;
  require_finite(total, "total");
  return total;
}

LossReport compute_losses(const LossBatch& b, const LossWeights& w, OutputGradients* grad) {
  w.validate();
  LossReport r;
  r.n_source = count(b, Group::source);
  r.n_target_labeled = count(b, Group::target_labeled);
  r.n_target_unlabeled = count(b, Group::target_unlabeled);
  r.l_gy = loss_classifier(b, grad, 1.0);
  r.l_r = loss_recognizer(b, grad, w.recognizer);
  r.l_dg = loss_domain_general(b, grad, w.domain_general);
  r.l_dc_label = loss_domain_common_labeled(b, grad, w.common_labeled);
  r.l_dc_un = loss_domain_common_unlabeled(b, grad, w.common_unlabeled);
  r.total = total_objective(r, w);
  return r;
}

}  // namespace soda
