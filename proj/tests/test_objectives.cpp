#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "soda/error.hpp"
#include "soda/objectives.hpp"
#include "soda/trainer.hpp"
#include "test_util.hpp"

using namespace soda;

namespace {

const double kLn2 = std::log(2.0);

struct Row {
  Group group;
  std::vector<std::string> labels;  // ignored for unlabeled rows
  std::vector<double> y_hat;
  double d_g = 0.5, d_c = 0.5, r = 0.5;
};

// Owns label vectors so the LossBatch pointers stay valid.
struct Fixture {
  LabelTopology topology;
  std::vector<LabelVector> owned;
  LossBatch batch;

  Fixture(LabelTopology t, const std::vector<Row>& rows) : topology(std::move(t)) {
    const auto n = static_cast<Eigen::Index>(rows.size());
    owned.reserve(rows.size());
    batch.topology = &topology;
    batch.y_hat = Matrix::Constant(static_cast<Eigen::Index>(topology.size()), n, 0.5);
    batch.d_g_hat.resize(n);
    batch.d_c_hat.resize(n);
    batch.r_hat.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Row& r = rows[static_cast<std::size_t>(i)];
      batch.groups.push_back(r.group);
      if (r.group == Group::target_unlabeled) {
        batch.labels.push_back(nullptr);
      } else {
        owned.push_back(encode_labels(r.labels, r.group == Group::source ? Domain::source : Domain::target, topology));
        batch.labels.push_back(&owned.back());
      }
      for (std::size_t l = 0; l < r.y_hat.size(); ++l) batch.y_hat(static_cast<Eigen::Index>(l), i) = r.y_hat[l];
      batch.d_g_hat(i) = r.d_g;
      batch.d_c_hat(i) = r.d_c;
      batch.r_hat(i) = r.r;
    }
  }
};

LabelTopology one_label() { return build_topology({"A"}, {"A"}); }
LabelTopology xray() { return build_topology({"No Finding", "Pneumonia"}, {"No Finding", "Pneumonia", "COVID-19"}); }

}  // namespace

TEST_CASE("classifier loss examples") {
  Fixture half(one_label(), {{Group::source, {"A"}, {0.5}}});
  CHECK(std::abs(loss_classifier(half.batch) - kLn2) < 1e-12);

  Fixture perfect(xray(), {{Group::source, {"Pneumonia"}, {0.0, 1.0, 0.3}},
                           {Group::target_labeled, {"COVID-19"}, {0.0, 0.0, 1.0}}});
  CHECK(loss_classifier(perfect.batch) <= -std::log(1.0 - kProbEpsilon) + 1e-15);
}

TEST_CASE("mask-inactive labels contribute nothing") {
  Fixture a(xray(), {{Group::source, {"Pneumonia"}, {0.2, 0.7, 0.1}}});
  Fixture b(xray(), {{Group::source, {"Pneumonia"}, {0.2, 0.7, 0.9}}});
  CHECK(loss_classifier(a.batch) == loss_classifier(b.batch));
  auto g = OutputGradients::zeros(3, 1);
  loss_classifier(a.batch, &g);
  CHECK(g.y(2, 0) == 0.0);
  CHECK(g.y(1, 0) != 0.0);
}

TEST_CASE("unlabeled rows are ignored by the classifier and rows without labels are rejected") {
  Fixture f(one_label(), {{Group::source, {"A"}, {0.5}}, {Group::target_unlabeled, {}, {0.01}}});
  CHECK(std::abs(loss_classifier(f.batch) - kLn2) < 1e-12);
  f.batch.labels[0] = nullptr;
  CHECK_THROWS_AS(loss_classifier(f.batch), InvalidInput);
}

TEST_CASE("general discriminator loss examples") {
  Fixture perfect(one_label(), {{Group::source, {"A"}, {}, 1.0}, {Group::target_labeled, {"A"}, {}, 0.0}});
  CHECK(loss_domain_general(perfect.batch) < 1e-6);

  Fixture halves(one_label(), {{Group::source, {"A"}, {}, 0.5},
                               {Group::target_labeled, {"A"}, {}, 0.5},
                               {Group::target_unlabeled, {}, {}, 0.5, 0.5, 1.0}});
  CHECK(std::abs(loss_domain_general(halves.batch) - 3.0 * kLn2) < 1e-12);

  Fixture zero_r(one_label(), {{Group::source, {"A"}, {}, 0.5},
                               {Group::target_unlabeled, {}, {}, 0.9, 0.5, 0.0}});
  CHECK(std::abs(loss_domain_general(zero_r.batch) - kLn2) < 1e-12);
  auto g = OutputGradients::zeros(1, 2);
  loss_domain_general(zero_r.batch, &g);
  CHECK(g.d_g(1) == 0.0);
}

TEST_CASE("common-label discriminator on labeled samples") {
  const auto t = build_topology({"A", "B"}, {"A", "D"});
  Fixture f(t, {{Group::source, {"A"}, {}, 0.5, 0.8}, {Group::target_labeled, {"D", "A"}, {}, 0.5, 0.3}});
  CHECK(std::abs(loss_domain_common_labeled(f.batch) - (-std::log(0.8) - std::log(0.7))) < 1e-12);

  Fixture with_specific(t, {{Group::source, {"A"}, {}, 0.5, 0.8},
                            {Group::target_labeled, {"D", "A"}, {}, 0.5, 0.3},
                            {Group::source, {"B"}, {}, 0.5, 0.01},
                            {Group::target_labeled, {"D"}, {}, 0.5, 0.99}});
  CHECK(loss_domain_common_labeled(with_specific.batch) == loss_domain_common_labeled(f.batch));

  Fixture one(t, {{Group::source, {"A"}, {}, 0.5, 1.0}});
  CHECK(loss_domain_common_labeled(one.batch) < 1e-6);

  Fixture none(t, {{Group::source, {"B"}, {}, 0.5, 0.3}, {Group::target_unlabeled, {}, {}, 0.5, 0.3, 1.0}});
  CHECK(loss_domain_common_labeled(none.batch) == 0.0);
}

TEST_CASE("common-label discriminator on unlabeled samples") {
  Fixture a(one_label(), {{Group::target_unlabeled, {}, {}, 0.5, 0.0, 1.0}});
  CHECK(loss_domain_common_unlabeled(a.batch) < 1e-6);
  Fixture b(one_label(), {{Group::target_unlabeled, {}, {}, 0.5, 0.5, 0.5}});
  CHECK(std::abs(loss_domain_common_unlabeled(b.batch) - 0.5 * kLn2) < 1e-12);
  Fixture empty(one_label(), {{Group::source, {"A"}, {}, 0.5, 0.2}});
  CHECK(loss_domain_common_unlabeled(empty.batch) == 0.0);
}

TEST_CASE("recognizer loss examples") {
  const auto t = build_topology({"A", "B"}, {"A", "D"});
  Fixture common(t, {{Group::source, {"A"}, {}, 0.5, 0.5, 1.0}});
  CHECK(loss_recognizer(common.batch) < 1e-6);
  Fixture specific(t, {{Group::source, {"B"}, {}, 0.5, 0.5, 0.5}});
  CHECK(std::abs(loss_recognizer(specific.batch) - kLn2) < 1e-12);
  Fixture both(t, {{Group::source, {"A"}, {}, 0.5, 0.5, 0.5}, {Group::target_labeled, {"D"}, {}, 0.5, 0.5, 0.5}});
  CHECK(std::abs(loss_recognizer(both.batch) - 2.0 * kLn2) < 1e-12);
}

TEST_CASE("total objective weighting") {
  LossReport p;
  p.l_gy = 0.5;
  p.l_r = 0.2;
  p.l_dg = 0.3;
  p.l_dc_label = 0.1;
  p.l_dc_un = 0.05;
  CHECK(std::abs(total_objective(p, LossWeights{}) - 1.15) < 1e-12);
  CHECK(total_objective(p, LossWeights{0, 0, 0, 0}) == p.l_gy);
  p.l_dg = std::numeric_limits<double>::quiet_NaN();
  try {
    total_objective(p, LossWeights{});
    FAIL("expected abort");
  } catch (const NumericalAbort& e) {
    CHECK(std::string(e.what()).find("l_dg") != std::string::npos);
  }
  CHECK_THROWS_AS(LossWeights({-1, 0, 0, 0}).validate(), InvalidInput);
}

namespace {

// Straight-line reference for all five terms.
LossReport reference(const LossBatch& b) {
  auto c = [](double p) { return std::min(std::max(p, kProbEpsilon), 1.0 - kProbEpsilon); };
  const auto& t = *b.topology;
  LossReport r;
  double gy = 0, ng = 0;
  double dg[3] = {0, 0, 0}, ndg[3] = {0, 0, 0};
  double dcs = 0, ndcs = 0, dct = 0, ndct = 0, dcu = 0, ndcu = 0;
  double rp = 0, nrp = 0, rn = 0, nrn = 0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    const int g = static_cast<int>(b.groups[i]);
    ndg[g] += 1;
    if (b.groups[i] == Group::source) dg[g] += -std::log(c(b.d_g_hat(k)));
    else if (b.groups[i] == Group::target_labeled) dg[g] += -std::log(1 - c(b.d_g_hat(k)));
    else dg[g] += -b.r_hat(k) * std::log(1 - c(b.d_g_hat(k)));
    if (b.groups[i] == Group::target_unlabeled) {
      dcu += -b.r_hat(k) * std::log(1 - c(b.d_c_hat(k)));
      ndcu += 1;
      continue;
    }
    const LabelVector& lv = *b.labels[i];
    double s = 0, m = 0;
    bool common = false;
    for (std::size_t l = 0; l < t.size(); ++l) {
      if (lv.values[l] == 1.0 && t.is_common(l)) common = true;
      if (lv.mask[l] == 0.0) continue;
      const double p = c(b.y_hat(static_cast<Eigen::Index>(l), k));
      s += -(lv.values[l] * std::log(p) + (1 - lv.values[l]) * std::log(1 - p));
      m += 1;
    }
    gy += s / m;
    ng += 1;
    if (common) {
      rp += -std::log(c(b.r_hat(k)));
      nrp += 1;
      if (b.groups[i] == Group::source) {
        dcs += -std::log(c(b.d_c_hat(k)));
        ndcs += 1;
      } else {
        dct += -std::log(1 - c(b.d_c_hat(k)));
        ndct += 1;
      }
    } else {
      rn += -std::log(1 - c(b.r_hat(k)));
      nrn += 1;
    }
  }
  auto mean = [](double s, double n) { return n > 0 ? s / n : 0.0; };
  r.l_gy = mean(gy, ng);
  r.l_dg = mean(dg[0], ndg[0]) + mean(dg[1], ndg[1]) + mean(dg[2], ndg[2]);
  r.l_dc_label = mean(dcs, ndcs) + mean(dct, ndct);
  r.l_dc_un = mean(dcu, ndcu);
  r.l_r = mean(rp, nrp) + mean(rn, nrn);
  return r;
}

}  // namespace

TEST_CASE("losses match a straight-line reference on random batches of up to 4 samples") {
  const auto t = build_topology({"A", "B", "C"}, {"A", "D"});
  const std::vector<std::vector<std::string>> src_sets = {{"A"}, {"B"}, {"C"}, {"A", "B"}, {"B", "C"}, {}};
  const std::vector<std::vector<std::string>> tgt_sets = {{"A"}, {"D"}, {"A", "D"}, {}};
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t n = 1 + rng() % 4;
    std::vector<Row> rows;
    for (std::size_t i = 0; i < n; ++i) {
      Row r;
      r.group = static_cast<Group>(rng() % 3);
      if (r.group == Group::source) r.labels = src_sets[rng() % src_sets.size()];
      if (r.group == Group::target_labeled) r.labels = tgt_sets[rng() % tgt_sets.size()];
      for (int l = 0; l < 4; ++l) r.y_hat.push_back(u(rng));
      r.d_g = u(rng);
      r.d_c = u(rng);
      r.r = u(rng);
      rows.push_back(r);
    }
    Fixture f(t, rows);
    const auto got = compute_losses(f.batch, LossWeights{});
    const auto ref = reference(f.batch);
    REQUIRE(std::abs(got.l_gy - ref.l_gy) < 1e-12);
    REQUIRE(std::abs(got.l_dg - ref.l_dg) < 1e-12);
    REQUIRE(std::abs(got.l_dc_label - ref.l_dc_label) < 1e-12);
    REQUIRE(std::abs(got.l_dc_un - ref.l_dc_un) < 1e-12);
    REQUIRE(std::abs(got.l_r - ref.l_r) < 1e-12);
    for (double v : {got.l_gy, got.l_dg, got.l_dc_label, got.l_dc_un, got.l_r}) REQUIRE(v >= 0.0);
  }
}

TEST_CASE("losses stay non-negative at extreme probabilities") {
  const auto t = build_topology({"A", "B"}, {"A", "D"});
  for (double p : {0.0, 1e-300, 0.5, 1.0 - 1e-17, 1.0}) {
    Fixture f(t, {{Group::source, {"A"}, {p, p, p}, p, p, p},
                  {Group::target_labeled, {"D"}, {p, p, p}, p, p, p},
                  {Group::target_unlabeled, {}, {}, p, p, p}});
    const auto r = compute_losses(f.batch, LossWeights{});
    for (double v : {r.l_gy, r.l_dg, r.l_dc_label, r.l_dc_un, r.l_r}) {
      CHECK(v >= 0.0);
      CHECK(std::isfinite(v));
    }
  }
}

TEST_CASE("removing a group changes only that group's terms") {
  const auto t = build_topology({"A", "B"}, {"A", "D"});
  Fixture full(t, {{Group::source, {"A"}, {0.3, 0.6, 0.5}, 0.7, 0.6, 0.8},
                   {Group::target_labeled, {"A"}, {0.4, 0.5, 0.2}, 0.4, 0.3, 0.6},
                   {Group::target_unlabeled, {}, {}, 0.2, 0.35, 0.7}});
  Fixture no_unl(t, {{Group::source, {"A"}, {0.3, 0.6, 0.5}, 0.7, 0.6, 0.8},
                     {Group::target_labeled, {"A"}, {0.4, 0.5, 0.2}, 0.4, 0.3, 0.6}});
  const auto a = compute_losses(full.batch, LossWeights{});
  const auto b = compute_losses(no_unl.batch, LossWeights{});
  CHECK(a.l_gy == b.l_gy);
  CHECK(a.l_r == b.l_r);
  CHECK(a.l_dc_label == b.l_dc_label);
  CHECK(b.l_dc_un == 0.0);
  CHECK(std::abs((a.l_dg - b.l_dg) - (-0.7 * std::log(0.8))) < 1e-12);
}

TEST_CASE("logit gradients match finite differences of each loss") {
  const auto t = build_topology({"A", "B"}, {"A", "D"});
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  std::vector<Row> rows = {{Group::source, {"A"}, {u(rng), u(rng), u(rng)}, u(rng), u(rng), u(rng)},
                           {Group::source, {"B"}, {u(rng), u(rng), u(rng)}, u(rng), u(rng), u(rng)},
                           {Group::target_labeled, {"A", "D"}, {u(rng), u(rng), u(rng)}, u(rng), u(rng), u(rng)},
                           {Group::target_unlabeled, {}, {}, u(rng), u(rng), u(rng)}};
  Fixture f(t, rows);
  const LossWeights w{0.7, 1.3, 0.4, 2.0};
  auto g = OutputGradients::zeros(3, 4);
  compute_losses(f.batch, w, &g);
  auto logit = [](double p) { return std::log(p / (1 - p)); };
  auto sig = [](double z) { return 1 / (1 + std::exp(-z)); };
  const double h = 1e-6;
  auto total = [&](const LossBatch& b) {
    // r_hat enters the discriminator terms as a frozen weight.
    LossBatch c = b;
    c.unlabeled_weight = f.batch.r_hat;
    return compute_losses(c, w).total;
  };
  auto check = [&](auto get, double analytic) {
    LossBatch up = f.batch, down = f.batch;
    double& pu = get(up);
    double& pd = get(down);
    const double z = logit(pu);
    pu = sig(z + h);
    pd = sig(z - h);
    const double numeric = (total(up) - total(down)) / (2 * h);
    CHECK(std::abs(numeric - analytic) < 1e-7);
  };
  for (Eigen::Index i = 0; i < 4; ++i) {
    check([&](LossBatch& b) -> double& { return b.d_g_hat(i); }, g.d_g(i));
    check([&](LossBatch& b) -> double& { return b.d_c_hat(i); }, g.d_c(i));
    check([&](LossBatch& b) -> double& { return b.r_hat(i); }, g.r(i));
    for (Eigen::Index l = 0; l < 3; ++l) check([&](LossBatch& b) -> double& { return b.y_hat(l, i); }, g.y(l, i));
  }
}

TEST_CASE("stop-gradient: discriminator losses send exactly zero gradient to the recognizer") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto data = generate_synthetic(testing::tiny_spec(seed));
    Model m(testing::tiny_model(data.topology.size()), seed);
    std::mt19937_64 rng(seed);
    const Batch batch = sample_batch(data, GroupSizes{3, 2, 4}, rng);
    TrainConfig cfg;
    cfg.weights = LossWeights{0.0, 1.0, 0.0, 1.0};
    Model g = m.zeros_like();
    compute_gradients(m, batch, data.topology, cfg, g);
    std::vector<NamedParam> r;
    g.r_head.append_params("r", r);
    for (const auto& p : r) REQUIRE(p.value->isZero(0.0));
    // Sanity: the discriminator heads did receive gradient.
    CHECK_FALSE(g.dg_head.output.weight.isZero(0.0));
  }
}

TEST_CASE("doubling lambda_Dg exactly doubles the general discriminator gradient") {
  const auto data = generate_synthetic(testing::tiny_spec(1));
  Model m(testing::tiny_model(data.topology.size()), 5);
  std::mt19937_64 rng(2);
  const Batch batch = sample_batch(data, GroupSizes{3, 2, 3}, rng);
  TrainConfig one, two;
  two.weights.domain_general = 2.0;
  Model g1 = m.zeros_like(), g2 = m.zeros_like();
  compute_gradients(m, batch, data.topology, one, g1);
  compute_gradients(m, batch, data.topology, two, g2);
  std::vector<NamedParam> a, b;
  g1.dg_head.append_params("dg", a);
  g2.dg_head.append_params("dg", b);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(*b[i].value == (2.0 * *a[i].value).eval());
}

TEST_CASE("one reversed step moves a target feature toward the source decision") {
  // Extractor h = theta * x with one parameter; frozen discriminator
  // d = sigmoid(w h + b) calls large h "source".
  const double w = 1.5, b = -0.5, x_t = 0.8, lr = 0.1, coeff = 1.0;
  double theta = 0.3;
  const auto t = one_label();
  auto d_of = [&](double th) { return 1.0 / (1.0 + std::exp(-(w * th * x_t + b))); };
  const double before = d_of(theta);

  Fixture f(t, {{Group::target_labeled, {"A"}, {0.5}, before}});
  auto g = OutputGradients::zeros(1, 1);
  loss_domain_general(f.batch, &g);
  Matrix dh(1, 1);
  dh(0, 0) = g.d_g(0) * w;  // through the frozen discriminator
  const double dtheta = gradient_reversal_backward(dh, coeff)(0, 0) * x_t;
  theta -= lr * dtheta;

  CHECK(d_of(theta) > before);
  // Without the reversal the same step would make the discriminator more right.
  CHECK(d_of(0.3 - lr * dh(0, 0) * x_t) < before);
}
