#include <doctest.h>

#include <fstream>

#include "soda/error.hpp"
#include "soda/run_config.hpp"
#include "test_util.hpp"

using namespace soda;
using nlohmann::json;

TEST_CASE("default config round-trips through JSON") {
  RunConfig c;
  c.synthetic = SyntheticSpec{};
  CHECK(run_config_from_json(to_json(c)) == c);
  // An empty document is the default synthetic benchmark.
  CHECK(run_config_from_json(json::object()) == c);
}

TEST_CASE("non-default config round-trips") {
  RunConfig c;
  c.output_dir = "out/x";
  c.manifest = ManifestSource{"data/m.csv", {"A", "B"}, {"A", "D"}, ManifestOptions{16, 16, 3}};
  c.feature_dim = 12;
  c.hidden_dim = 7;
  c.conv_widths = {4, 8};
  c.train.steps = 33;
  c.train.adam.learning_rate = 2.5e-4;
  c.train.weights = {0.5, 0.25, 0.0, 2.0};
  c.train.group_sizes = {3, 1, 5};
  c.train.grl_schedule = GrlSchedule::constant;
  c.train.grl_constant = 0.7;
  c.train.seed = 12345678901234ULL;
  c.train.val_fraction = 0.0;
  c.train.detach_recognizer = true;
  c.pad.c_grid = {1.0};
  c.pad.repeats = 4;
  c.ablation = {true, false, true};
  const auto back = run_config_from_json(to_json(c));
  CHECK(back == c);
  CHECK(to_json(back) == to_json(c));
}

TEST_CASE("overrides use dotted keys and JSON values") {
  json doc = json::object();
  apply_override(doc, "train.steps", "50");
  apply_override(doc, "train.grl_schedule", "constant");
  apply_override(doc, "ablation.enable_dc", "false");
  apply_override(doc, "model.conv_widths", "[2,4]");
  const auto c = run_config_from_json(doc);
  CHECK(c.train.steps == 50);
  CHECK(c.train.grl_schedule == GrlSchedule::constant);
  CHECK_FALSE(c.ablation.enable_dc);
  CHECK(c.conv_widths == std::vector<std::size_t>{2, 4});

  const auto dir = testing::temp_dir("run_config");
  std::ofstream(dir / "c.json") << R"({"train": {"steps": 10, "seed": 4}})";
  const auto l = load_run_config(dir / "c.json", {"--train.steps=20"});
  CHECK(l.train.steps == 20);
  CHECK(l.train.seed == 4);
  CHECK_THROWS_AS(load_run_config(dir / "missing.json", {}), IoError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("invalid configs are rejected") {
  auto bad = [](const std::string& text) { return run_config_from_json(json::parse(text)); };
  CHECK_THROWS_AS(bad(R"({"trian": {}})"), InvalidInput);
  CHECK_THROWS_AS(bad(R"({"train": {"stpes": 3}})"), InvalidInput);
  CHECK_THROWS_AS(bad(R"({"train": {"steps": -5}})"), InvalidInput);
  CHECK_THROWS_AS(bad(R"({"train": {"steps": 2.5}})"), InvalidInput);
  CHECK_THROWS_AS(bad(R"({"train": {"steps": "many"}})"), InvalidInput);
  CHECK_THROWS_AS(bad(R"({"train": {"lambda_dg": -1}})"), InvalidInput);
  CHECK_THROWS_AS(bad(R"({"train": {"grl_schedule": "cosine"}})"), InvalidInput);
  CHECK_THROWS_AS(bad(R"({"model": {"conv_widths": [4, -1]}})"), InvalidInput);
  CHECK_THROWS_AS(bad(R"({"data": {"synthetic": {}, "manifest": "m.csv"}})"), InvalidInput);
  CHECK_THROWS_AS(bad(R"({"data": {"synthetic": {"gamma": 0}}})"), InvalidInput);
  CHECK_THROWS_AS(bad(R"({"pad": {"c_grid": []}})"), InvalidInput);
}

TEST_CASE("ablation switches fold into the loss weights") {
  RunConfig c;
  c.train.weights = {1.0, 1.0, 1.0, 1.0};
  auto t = c.effective_train_config();
  CHECK(t.weights == LossWeights{1.0, 1.0, 1.0, 1.0});
  CHECK(t.recognizer_weights);

  c.ablation = {true, false, false};  // DANN
  t = c.effective_train_config();
  CHECK(t.weights.domain_general == 1.0);
  CHECK(t.weights.common_labeled == 0.0);
  CHECK(t.weights.common_unlabeled == 0.0);
  CHECK(t.weights.recognizer == 0.0);
  CHECK_FALSE(t.recognizer_weights);

  c.ablation = {false, false, false};  // source-only fine-tune
  t = c.effective_train_config();
  CHECK(t.weights == LossWeights{0.0, 0.0, 0.0, 0.0});
}

TEST_CASE("model config follows the topology and data geometry") {
  RunConfig c;
  c.synthetic = SyntheticSpec{};
  c.synthetic->canvas_size = 16;
  const auto topo = build_topology({"A", "B", "C"}, {"A", "D"});
  const auto m = c.model_config(topo);
  CHECK(m.num_labels == 4);
  CHECK(m.extractor.height == 16);
  CHECK(m.extractor.channels == 1);
  CHECK(m.extractor.feature_dim == 64);
}
