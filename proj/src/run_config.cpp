#include "soda/run_config.hpp"

#include <fstream>
#include <set>
#include <type_traits>

#include "soda/error.hpp"

namespace soda {

using nlohmann::json;

void RunConfig::validate() const {
  if (synthetic.has_value() == manifest.has_value())
    throw InvalidInput("exactly one data source (synthetic or manifest) must be configured");
  if (synthetic) synthetic->validate();
  if (manifest) {
    if (manifest->path.empty()) throw InvalidInput("manifest path is empty");
    build_topology(manifest->source_labels, manifest->target_labels);
  }
  if (feature_dim == 0 || hidden_dim == 0 || conv_widths.empty())
    throw InvalidInput("model dimensions must be positive");
  train.validate();
  pad.validate();
}

ModelConfig RunConfig::model_config(const LabelTopology& topology) const {
  ModelConfig m;
  if (synthetic) {
    m.extractor.height = m.extractor.width = synthetic->canvas_size;
    m.extractor.channels = 1;
  } else {
    m.extractor.height = manifest->options.height;
    m.extractor.width = manifest->options.width;
    m.extractor.channels = manifest->options.channels;
  }
  m.extractor.conv_widths = conv_widths;
  m.extractor.feature_dim = feature_dim;
  m.hidden_dim = hidden_dim;
  m.num_labels = topology.size();
  return m;
}

TrainConfig RunConfig::effective_train_config() const {
  TrainConfig t = train;
  if (!ablation.enable_dg) t.weights.domain_general = 0.0;
  if (!ablation.enable_dc) {
    t.weights.common_labeled = 0.0;
    t.weights.common_unlabeled = 0.0;
  }
  if (!ablation.enable_r) {
    t.weights.recognizer = 0.0;
    t.recognizer_weights = false;
  }
  t.pad = pad;
  return t;
}

namespace {

const char* schedule_name(GrlSchedule s) { return s == GrlSchedule::ramp ? "ramp" : "constant"; }

GrlSchedule parse_schedule(const std::string& s) {
  if (s == "ramp") return GrlSchedule::ramp;
  if (s == "constant") return GrlSchedule::constant;
  throw InvalidInput("grl_schedule must be 'ramp' or 'constant'");
}

void check_keys(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw InvalidInput(where + " must be an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : obj.items()) {
    if (!ok.count(k)) throw InvalidInput("unknown config key '" + (where.empty() ? k : where + "." + k) + "'");
  }
}

template <typename T>
void check_unsigned(const json& v, const char* key) {
  if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
    if (!v.is_number_unsigned())
      throw InvalidInput(std::string("config key '") + key + "' must be a non-negative integer");
  }
}

template <typename T>
void read(const json& obj, const char* key, T& out) {
  if (!obj.contains(key)) return;
  const json& v = obj.at(key);
  if constexpr (requires { typename T::value_type; } && !std::is_same_v<T, std::string>) {
    if (v.is_array())
      for (const auto& e : v) check_unsigned<typename T::value_type>(e, key);
  } else {
    check_unsigned<T>(v, key);
  }
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw InvalidInput(std::string("config key '") + key + "': " + e.what());
  }
}

}  // namespace

json to_json(const RunConfig& c) {
  json j;
  j["output_dir"] = c.output_dir;
  if (c.synthetic) {
    const auto& s = *c.synthetic;
    j["data"]["synthetic"] = {{"canvas_size", s.canvas_size},
                              {"n_source", s.n_source},
                              {"n_target_labeled", s.n_target_labeled},
                              {"n_target_unlabeled", s.n_target_unlabeled},
                              {"gamma", s.shift.gamma},
                              {"noise_sigma", s.shift.noise_sigma},
                              {"vignette", s.shift.vignette},
                              {"multilabel_prob", s.multilabel_prob},
                              {"seed", s.seed}};
  }
  if (c.manifest) {
    const auto& m = *c.manifest;
    j["data"]["manifest"] = {{"path", m.path},
                             {"source_labels", m.source_labels},
                             {"target_labels", m.target_labels},
                             {"height", m.options.height},
                             {"width", m.options.width},
                             {"channels", m.options.channels}};
  }
  j["model"] = {{"feature_dim", c.feature_dim}, {"hidden_dim", c.hidden_dim}, {"conv_widths", c.conv_widths}};
  const auto& t = c.train;
  j["train"] = {{"steps", t.steps},
                {"learning_rate", t.adam.learning_rate},
                {"beta1", t.adam.beta1},
                {"beta2", t.adam.beta2},
                {"epsilon", t.adam.epsilon},
                {"lambda_r", t.weights.recognizer},
                {"lambda_dg", t.weights.domain_general},
                {"lambda_dc_label", t.weights.common_labeled},
                {"lambda_dc_un", t.weights.common_unlabeled},
                {"group_sizes",
                 {{"source", t.group_sizes.source},
                  {"target_labeled", t.group_sizes.target_labeled},
                  {"target_unlabeled", t.group_sizes.target_unlabeled}}},
                {"grl_schedule", schedule_name(t.grl_schedule)},
                {"grl_constant", t.grl_constant},
                {"seed", t.seed},
                {"eval_every", t.eval_every},
                {"checkpoint_every", t.checkpoint_every},
                {"val_fraction", t.val_fraction},
                {"detach_recognizer", t.detach_recognizer},
                {"eval_pad", t.eval_pad}};
  j["pad"] = {{"c_grid", c.pad.c_grid},     {"split_fraction", c.pad.split_fraction},
              {"epochs", c.pad.epochs},     {"step_size", c.pad.step_size},
              {"seed", c.pad.seed},         {"repeats", c.pad.repeats}};
  j["ablation"] = {{"enable_dg", c.ablation.enable_dg},
                   {"enable_dc", c.ablation.enable_dc},
                   {"enable_r", c.ablation.enable_r}};
  return j;
}

RunConfig run_config_from_json(const json& doc) {
  check_keys(doc, "", {"output_dir", "data", "model", "train", "pad", "ablation"});
  RunConfig c;
  read(doc, "output_dir", c.output_dir);

  if (doc.contains("data")) {
    const auto& d = doc["data"];
    check_keys(d, "data", {"synthetic", "manifest"});
    if (d.contains("synthetic")) {
      const auto& s = d["synthetic"];
      check_keys(s, "data.synthetic",
                 {"canvas_size", "n_source", "n_target_labeled", "n_target_unlabeled", "gamma",
                  "noise_sigma", "vignette", "multilabel_prob", "seed"});
      SyntheticSpec spec;
      read(s, "canvas_size", spec.canvas_size);
      read(s, "n_source", spec.n_source);
      read(s, "n_target_labeled", spec.n_target_labeled);
      read(s, "n_target_unlabeled", spec.n_target_unlabeled);
      read(s, "gamma", spec.shift.gamma);
      read(s, "noise_sigma", spec.shift.noise_sigma);
      read(s, "vignette", spec.shift.vignette);
      read(s, "multilabel_prob", spec.multilabel_prob);
      read(s, "seed", spec.seed);
      c.synthetic = spec;
    }
    if (d.contains("manifest")) {
      const auto& m = d["manifest"];
      ManifestSource src;
      if (m.is_string()) {
        src.path = m.get<std::string>();
      } else {
        check_keys(m, "data.manifest", {"path", "source_labels", "target_labels", "height", "width", "channels"});
        read(m, "path", src.path);
        read(m, "source_labels", src.source_labels);
        read(m, "target_labels", src.target_labels);
        read(m, "height", src.options.height);
        read(m, "width", src.options.width);
        read(m, "channels", src.options.channels);
      }
      c.manifest = src;
    }
  }
  if (!c.synthetic && !c.manifest) c.synthetic = SyntheticSpec{};

  if (doc.contains("model")) {
    const auto& m = doc["model"];
    check_keys(m, "model", {"feature_dim", "hidden_dim", "conv_widths"});
    read(m, "feature_dim", c.feature_dim);
    read(m, "hidden_dim", c.hidden_dim);
    read(m, "conv_widths", c.conv_widths);
  }
  if (doc.contains("train")) {
    const auto& t = doc["train"];
    check_keys(t, "train",
               {"steps", "learning_rate", "beta1", "beta2", "epsilon", "lambda_r", "lambda_dg",
                "lambda_dc_label", "lambda_dc_un", "group_sizes", "grl_schedule", "grl_constant",
                "seed", "eval_every", "checkpoint_every", "val_fraction", "detach_recognizer",
                "eval_pad"});
    auto& tc = c.train;
    read(t, "steps", tc.steps);
    read(t, "learning_rate", tc.adam.learning_rate);
    read(t, "beta1", tc.adam.beta1);
    read(t, "beta2", tc.adam.beta2);
    read(t, "epsilon", tc.adam.epsilon);
    read(t, "lambda_r", tc.weights.recognizer);
    read(t, "lambda_dg", tc.weights.domain_general);
    read(t, "lambda_dc_label", tc.weights.common_labeled);
    read(t, "lambda_dc_un", tc.weights.common_unlabeled);
    if (t.contains("group_sizes")) {
      const auto& g = t["group_sizes"];
      check_keys(g, "train.group_sizes", {"source", "target_labeled", "target_unlabeled"});
      read(g, "source", tc.group_sizes.source);
      read(g, "target_labeled", tc.group_sizes.target_labeled);
      read(g, "target_unlabeled", tc.group_sizes.target_unlabeled);
    }
    std::string schedule = schedule_name(tc.grl_schedule);
    read(t, "grl_schedule", schedule);
    tc.grl_schedule = parse_schedule(schedule);
    read(t, "grl_constant", tc.grl_constant);
    read(t, "seed", tc.seed);
    read(t, "eval_every", tc.eval_every);
    read(t, "checkpoint_every", tc.checkpoint_every);
    read(t, "val_fraction", tc.val_fraction);
    read(t, "detach_recognizer", tc.detach_recognizer);
    read(t, "eval_pad", tc.eval_pad);
  }
  if (doc.contains("pad")) {
    const auto& p = doc["pad"];
    check_keys(p, "pad", {"c_grid", "split_fraction", "epochs", "step_size", "seed", "repeats"});
    read(p, "c_grid", c.pad.c_grid);
    read(p, "split_fraction", c.pad.split_fraction);
    read(p, "epochs", c.pad.epochs);
    read(p, "step_size", c.pad.step_size);
    read(p, "seed", c.pad.seed);
    read(p, "repeats", c.pad.repeats);
  }
  if (doc.contains("ablation")) {
    const auto& a = doc["ablation"];
    check_keys(a, "ablation", {"enable_dg", "enable_dc", "enable_r"});
    read(a, "enable_dg", c.ablation.enable_dg);
    read(a, "enable_dc", c.ablation.enable_dc);
    read(a, "enable_r", c.ablation.enable_r);
  }
  c.validate();
  return c;
}

void apply_override(json& doc, const std::string& dotted_key, const std::string& value) {
  if (dotted_key.empty()) throw InvalidInput("empty override key");
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = dotted_key.find('.', start);
    const std::string part = dotted_key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw InvalidInput("malformed override key '" + dotted_key + "'");
    if (!node->is_object()) *node = json::object();
    if (dot == std::string::npos) {
      json parsed = json::parse(value, nullptr, false);
      (*node)[part] = parsed.is_discarded() ? json(value) : parsed;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

RunConfig load_run_config(const std::optional<std::filesystem::path>& path,
                          const std::vector<std::string>& overrides) {
  json doc = json::object();
  if (path) {
    std::ifstream in(*path);
    if (!in) throw IoError("cannot open config " + path->string());
    doc = json::parse(in, nullptr, false);
    if (doc.is_discarded()) throw InvalidInput("config " + path->string() + " is not valid JSON");
  }
  for (const auto& o : overrides) {
    std::string kv = o;
    if (kv.rfind("--", 0) == 0) kv = kv.substr(2);
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw InvalidInput("override '" + o + "' must look like --key=value");
    apply_override(doc, kv.substr(0, eq), kv.substr(eq + 1));
  }
  return run_config_from_json(doc);
}

}  // namespace soda
