#include <doctest.h>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "soda/data.hpp"
#include "soda/error.hpp"
#include "test_util.hpp"

using namespace soda;
namespace fs = std::filesystem;

namespace {

const fs::path kFixtures = SODA_FIXTURE_DIR;

double mean_pixel(const Image& img) {
  double s = 0;
  for (double p : img.pixels) s += p;
  return s / static_cast<double>(img.pixels.size());
}

// Per-image mean intensity of samples carrying label `name` (primary or
// secondary) in the given datasets.
std::vector<double> label_means(const std::vector<const Dataset*>& sets, const LabelTopology& t,
                                const std::string& name, bool only = false) {
  const auto idx = *t.index_of(name);
  std::vector<double> out;
  for (const auto* set : sets)
    for (const auto& s : *set) {
      const auto& v = s.evaluation_labels()->values;
      double total = 0;
      for (double x : v) total += x;
      if (v[idx] == 1.0 && (!only || total == 1.0)) out.push_back(mean_pixel(s.image()));
    }
  return out;
}

std::pair<double, double> mean_and_se(const std::vector<double>& xs) {
  double m = 0;
  for (double x : xs) m += x;
  m /= static_cast<double>(xs.size());
  double v = 0;
  for (double x : xs) v += (x - m) * (x - m);
  v /= static_cast<double>(xs.size() - 1);
  return {m, std::sqrt(v / static_cast<double>(xs.size()))};
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("synthetic generation is deterministic") {
  SyntheticSpec spec;
  spec.seed = 7;
  const auto a = generate_synthetic(spec);
  const auto b = generate_synthetic(spec);
  CHECK(a.source == b.source);
  CHECK(a.target_labeled == b.target_labeled);
  CHECK(a.target_unlabeled == b.target_unlabeled);
  spec.seed = 8;
  CHECK_FALSE(generate_synthetic(spec).source == a.source);
}

TEST_CASE("synthetic counts, domains and label scheme") {
  SyntheticSpec spec;
  const auto d = generate_synthetic(spec);
  CHECK(d.source.size() == 400);
  CHECK(d.target_labeled.size() == 60);
  CHECK(d.target_unlabeled.size() == 140);
  CHECK(d.topology == build_topology({"A", "B", "C"}, {"A", "D"}));
  for (const auto& s : d.source) {
    CHECK(s.domain() == Domain::source);
    REQUIRE(s.training_labels());
    const auto n = decode_labels(*s.training_labels(), d.topology).size();
    CHECK((n == 1 || n == 2));
  }
  for (const auto& s : d.target_unlabeled) {
    CHECK(s.domain() == Domain::target);
    CHECK_FALSE(s.is_labeled());
    CHECK(s.training_labels() == nullptr);
    REQUIRE(s.evaluation_labels());
    CHECK(s.evaluation_labels()->mask[1] == 0.0);  // B is not a target label
  }
}

TEST_CASE("multilabel probability controls second labels") {
  SyntheticSpec spec;
  spec.multilabel_prob = 0.0;
  for (const auto& s : generate_synthetic(spec).source)
    CHECK(decode_labels(*s.training_labels(), synthetic_topology()).size() == 1);
  spec.multilabel_prob = 1.0;
  for (const auto& s : generate_synthetic(spec).source)
    CHECK(decode_labels(*s.training_labels(), synthetic_topology()).size() == 2);
}

TEST_CASE("zero counts are rejected") {
  for (int which = 0; which < 3; ++which) {
    SyntheticSpec spec;
    (which == 0 ? spec.n_source : which == 1 ? spec.n_target_labeled : spec.n_target_unlabeled) = 0;
    CHECK_THROWS_AS(generate_synthetic(spec), InvalidInput);
  }
  SyntheticSpec spec;
  spec.shift.gamma = 0.0;
  CHECK_THROWS_AS(generate_synthetic(spec), InvalidInput);
  spec = {};
  spec.multilabel_prob = 1.5;
  CHECK_THROWS_AS(generate_synthetic(spec), InvalidInput);
}

TEST_CASE("every pixel stays in [0,1] over random specs") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    SyntheticSpec spec;
    spec.canvas_size = 8 + rng() % 25;
    spec.n_source = 5;
    spec.n_target_labeled = 5;
    spec.n_target_unlabeled = 5;
    spec.shift.gamma = 0.1 + 3.0 * u(rng);
    spec.shift.noise_sigma = 0.5 * u(rng);
    spec.shift.vignette = u(rng);
    spec.multilabel_prob = u(rng);
    spec.seed = rng();
    const auto d = generate_synthetic(spec);
    for (const auto* set : {&d.source, &d.target_labeled, &d.target_unlabeled})
      for (const auto& s : *set)
        for (double p : s.image().pixels) REQUIRE((p >= 0.0 && p <= 1.0));
  }
}

TEST_CASE("identity shift leaves images untouched") {
  std::mt19937_64 rng(1);
  auto img = testing::random_image(16, 16, 1, rng);
  const auto before = img;
  apply_domain_shift(img, ShiftParams{1.0, 0.0, 0.0}, rng);
  CHECK(img == before);
}

TEST_CASE("no shift: label A pixel statistics agree across domains") {
  SyntheticSpec spec;
  spec.shift = ShiftParams{1.0, 0.0, 0.0};
  spec.n_source = 600;
  spec.n_target_labeled = 300;
  spec.n_target_unlabeled = 300;
  const auto d = generate_synthetic(spec);
  // Images showing only A, since the other labels differ between domains.
  const auto [ms, ses] = mean_and_se(label_means({&d.source}, d.topology, "A", true));
  const auto [mt, set] =
      mean_and_se(label_means({&d.target_labeled, &d.target_unlabeled}, d.topology, "A", true));
  CHECK(std::abs(ms - mt) < 4.0 * std::sqrt(ses * ses + set * set));
}

TEST_CASE("default shift moves label A intensity by more than 3 standard errors") {
  const auto d = generate_synthetic(SyntheticSpec{});
  const auto [ms, ses] = mean_and_se(label_means({&d.source}, d.topology, "A"));
  const auto [mt, set] = mean_and_se(label_means({&d.target_labeled, &d.target_unlabeled}, d.topology, "A"));
  CHECK(std::abs(ms - mt) > 3.0 * std::max(ses, set));
}

TEST_CASE("labeled fraction of the default and 40/60 counts") {
  SyntheticSpec spec;
  CHECK(static_cast<double>(spec.n_target_labeled) / (spec.n_target_labeled + spec.n_target_unlabeled) ==
        doctest::Approx(0.3));
  spec.n_target_labeled = 80;
  spec.n_target_unlabeled = 120;
  CHECK(static_cast<double>(spec.n_target_labeled) / (spec.n_target_labeled + spec.n_target_unlabeled) ==
        doctest::Approx(0.4));
}

TEST_CASE("split_target makes a 40/60 split and keeps hidden labels") {
  const auto d = generate_synthetic(SyntheticSpec{});
  Dataset all = d.target_labeled;
  for (const auto& s : d.target_unlabeled) all.push_back(s);
  for (auto& s : all)
    if (!s.is_labeled()) s = Sample::labeled(s.image(), Domain::target, *s.evaluation_labels());
  const auto [lab, unl] = split_target(all, 0.4, 3);
  CHECK(lab.size() == 80);
  CHECK(unl.size() == 120);
  for (const auto& s : lab) CHECK(s.is_labeled());
  for (const auto& s : unl) {
    CHECK_FALSE(s.is_labeled());
    CHECK(s.evaluation_labels() != nullptr);
  }
  const auto again = split_target(all, 0.4, 3);
  CHECK(again.first == lab);
  CHECK_THROWS_AS(split_target(all, 1.5, 0), InvalidInput);
}

TEST_CASE("sample_batch sizes and determinism") {
  const auto d = generate_synthetic(testing::tiny_spec());
  std::mt19937_64 r1(9), r2(9);
  for (int i = 0; i < 5; ++i) {
    const auto a = sample_batch(d, GroupSizes{8, 4, 8}, r1);
    const auto b = sample_batch(d, GroupSizes{8, 4, 8}, r2);
    CHECK(a.source_group.size() == 8);
    CHECK(a.target_labeled_group.size() == 4);
    CHECK(a.target_unlabeled_group.size() == 8);
    CHECK(a.source_group == b.source_group);
    CHECK(a.target_unlabeled_group == b.target_unlabeled_group);
  }
  const auto only = sample_batch(d, GroupSizes{8, 0, 0}, r1);
  CHECK(only.source_group.size() == 8);
  CHECK(only.target_labeled_group.empty());
  CHECK(only.target_unlabeled_group.empty());
  CHECK_THROWS_AS(sample_batch(d, GroupSizes{0, 0, 0}, r1), InvalidInput);
}

TEST_CASE("batches never carry hidden labels") {
  const auto d = generate_synthetic(testing::tiny_spec());
  std::mt19937_64 rng(2);
  for (int i = 0; i < 20; ++i) {
    const auto b = sample_batch(d, GroupSizes{2, 2, 8}, rng);
    for (const auto& s : b.target_unlabeled_group) {
      CHECK(s.training_labels() == nullptr);
      CHECK(s.evaluation_labels() == nullptr);
    }
    for (const auto& s : b.target_labeled_group) CHECK(s.domain() == Domain::target);
    for (const auto& s : b.source_group) CHECK(s.domain() == Domain::source);
  }
}

TEST_CASE("without replacement draws distinct samples") {
  const auto d = generate_synthetic(testing::tiny_spec());
  std::mt19937_64 rng(4);
  const auto b = sample_batch(d, GroupSizes{24, 12, 16}, rng, false);
  std::set<std::vector<double>> seen;
  for (const auto& s : b.source_group) seen.insert(s.image().pixels);
  CHECK(seen.size() == 24);
  CHECK_THROWS_AS(sample_batch(d, GroupSizes{25, 0, 0}, rng, false), InvalidInput);
}

TEST_CASE("manifest with one row per group") {
  const auto t = build_topology({"A", "B", "C"}, {"A", "D"});
  const auto d = load_manifest(kFixtures / "manifest.csv", t, ManifestOptions{4, 4, 1});
  CHECK(d.source.size() == 1);
  CHECK(d.target_labeled.size() == 1);
  CHECK(d.target_unlabeled.size() == 1);
  CHECK(decode_labels(*d.target_unlabeled[0].evaluation_labels(), t) == std::vector<std::string>{"A", "D"});
  CHECK(d.target_unlabeled[0].training_labels() == nullptr);
}

TEST_CASE("gray and RGB fixtures convert to the configured channels") {
  const auto t = build_topology({"A", "B", "C"}, {"A", "D"});
  for (std::size_t channels : {1u, 3u}) {
    const auto d = load_manifest(kFixtures / "manifest.csv", t, ManifestOptions{4, 4, channels});
    const auto& gray = d.source[0].image();
    const auto& rgb = d.target_labeled[0].image();
    CHECK(gray.channels == channels);
    CHECK(rgb.channels == channels);
    CHECK(gray.at(0, 3, 0) == doctest::Approx(1.0));
    CHECK(gray.at(0, 1, 0) == doctest::Approx(64.0 / 255.0));
    if (channels == 1) {
      CHECK(rgb.at(0, 0) == doctest::Approx(0.299).epsilon(1e-3));  // red luma
      CHECK(rgb.at(3, 0) == doctest::Approx(0.114).epsilon(1e-3));  // blue luma
    } else {
      CHECK(rgb.at(0, 0, 0) == doctest::Approx(1.0));
      CHECK(rgb.at(0, 0, 2) == doctest::Approx(0.0));
      CHECK(rgb.at(3, 0, 2) == doctest::Approx(1.0));
      CHECK(gray.at(0, 1, 0) == gray.at(0, 1, 2));
    }
  }
  const auto big = load_manifest(kFixtures / "manifest.csv", t, ManifestOptions{8, 8, 1});
  CHECK(big.source[0].image().height == 8);
}

TEST_CASE("manifest row errors name the row") {
  const auto t = build_topology({"A", "B", "C"}, {"A", "D"});
  try {
    load_manifest(kFixtures / "bad_domain.csv", t, ManifestOptions{4, 4, 1});
    FAIL("expected rejection");
  } catch (const InvalidInput& e) {
    CHECK(std::string(e.what()).find("3") != std::string::npos);
    CHECK(std::string(e.what()).find("D") != std::string::npos);
  }
  const auto dir = testing::temp_dir("manifest_errors");
  auto write = [&](const std::string& body) {
    std::ofstream(dir / "m.csv") << body;
    return dir / "m.csv";
  };
  fs::copy_file(kFixtures / "gray.png", dir / "gray.png");
  CHECK_THROWS_AS(load_manifest(write("path,domain,labeled\n"), t), InvalidInput);
  CHECK_THROWS_AS(load_manifest(write("path,domain,labeled,labels\ngray.png,mars,1,A\n"), t), InvalidInput);
  CHECK_THROWS_AS(load_manifest(write("path,domain,labeled,labels\ngray.png,source,2,A\n"), t), InvalidInput);
  CHECK_THROWS_AS(load_manifest(write("path,domain,labeled,labels\nnope.png,source,1,A\n"), t), InvalidInput);
  CHECK_THROWS_AS(load_manifest(write("path,domain,labeled,labels\ngray.png,source,0,\n"), t), InvalidInput);
  CHECK_THROWS_AS(load_manifest(dir / "absent.csv", t), IoError);
  fs::remove_all(dir);
}

TEST_CASE("synthetic data round-trips through a manifest") {
  auto spec = testing::tiny_spec(3);
  const auto d = generate_synthetic(spec);
  const auto dir = testing::temp_dir("manifest_rt");
  const auto path = write_manifest(d, dir / "a");
  write_manifest(d, dir / "b");
  CHECK(read_file(path) == read_file(dir / "b" / "manifest.csv"));

  const auto back = load_manifest(path, d.topology, ManifestOptions{8, 8, 1});
  REQUIRE(back.source.size() == d.source.size());
  REQUIRE(back.target_unlabeled.size() == d.target_unlabeled.size());
  for (std::size_t i = 0; i < d.source.size(); ++i) {
    CHECK(*back.source[i].training_labels() == *d.source[i].training_labels());
    for (std::size_t p = 0; p < d.source[i].image().pixels.size(); ++p)
      REQUIRE(std::abs(back.source[i].image().pixels[p] - d.source[i].image().pixels[p]) <= 0.5 / 255.0 + 1e-12);
  }
  for (std::size_t i = 0; i < d.target_unlabeled.size(); ++i)
    CHECK(*back.target_unlabeled[i].evaluation_labels() == *d.target_unlabeled[i].evaluation_labels());
  fs::remove_all(dir);
}
