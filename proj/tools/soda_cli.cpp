// soda: synthesize data, train, evaluate, PAD, feature export, saliency.
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "soda/checkpoint.hpp"
#include "soda/data.hpp"
#include "soda/error.hpp"
#include "soda/evaluation.hpp"
#include "soda/run_config.hpp"
#include "soda/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr const char* kOutputRootEnv = "SODA_OUTPUT_ROOT";

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
};

soda::RunConfig load_config(const CommonArgs& args) {
  std::optional<fs::path> path;
  if (!args.config_path.empty()) path = args.config_path;
  return soda::load_run_config(path, args.overrides);
}

fs::path output_dir(const soda::RunConfig& cfg) {
  fs::path dir = cfg.output_dir;
  if (dir.is_relative()) {
    if (const char* root = std::getenv(kOutputRootEnv); root && *root) dir = fs::path(root) / dir;
  }
  return dir;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw soda::IoError("cannot create " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) ensure_dir(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw soda::IoError("cannot write " + path.string());
  out << text;
  if (!out) throw soda::IoError("failed writing " + path.string());
}

soda::OpenSetData load_config_data(const soda::RunConfig& cfg) {
  if (cfg.synthetic) return soda::generate_synthetic(*cfg.synthetic);
  const auto& m = *cfg.manifest;
  return soda::load_manifest(m.path, soda::build_topology(m.source_labels, m.target_labels), m.options);
}

// Data for commands that start from a checkpoint: an explicit manifest is
// read with the checkpoint's topology and geometry, otherwise the config's
// data source is used.
soda::OpenSetData load_eval_data(const soda::Checkpoint& ckpt, const std::string& manifest,
                                 const soda::RunConfig& cfg) {
  if (!manifest.empty()) {
    const auto& ex = ckpt.model.config().extractor;
    soda::ManifestOptions opts{ex.height, ex.width, ex.channels};
    return soda::load_manifest(manifest, ckpt.topology, opts);
  }
  auto data = load_config_data(cfg);
  if (!(data.topology == ckpt.topology))
    throw soda::InvalidInput("config data labels do not match the checkpoint");
  return data;
}

std::vector<soda::Sample> target_eval_samples(const soda::OpenSetData& data) {
  std::vector<soda::Sample> out;
  for (const auto* set : {&data.target_labeled, &data.target_unlabeled})
    for (const auto& s : *set)
      if (s.evaluation_labels()) out.push_back(s);
  return out;
}

ordered_json auc_json(const std::vector<soda::LabelAuc>& aucs) {
  ordered_json j = ordered_json::object();
  for (const auto& a : aucs) j[a.label] = a.auc ? ordered_json(*a.auc) : ordered_json(nullptr);
  return j;
}

int cmd_synth(const CommonArgs& args, const std::string& out_arg) {
  const auto cfg = load_config(args);
  if (!cfg.synthetic) throw soda::InvalidInput("synth needs a synthetic data section");
  const fs::path dir = out_arg.empty() ? output_dir(cfg) / "data" : fs::path(out_arg);
  const auto data = soda::generate_synthetic(*cfg.synthetic);
  const auto manifest = soda::write_manifest(data, dir);
  const auto rows = data.source.size() + data.target_labeled.size() + data.target_unlabeled.size();
  std::cout << "synth: " << rows << " rows (" << data.source.size() << " source, "
            << data.target_labeled.size() << " target labeled, " << data.target_unlabeled.size()
            << " target unlabeled) -> " << manifest.string() << "\n";
  return 0;
}

int cmd_train(const CommonArgs& args, bool resume) {
  const auto cfg = load_config(args);
  const auto dir = output_dir(cfg);
  ensure_dir(dir);
  const auto data = load_config_data(cfg);
  auto tc = cfg.effective_train_config();
  tc.checkpoint_path = dir / "checkpoint.bin";
  tc.metrics_path = dir / "metrics.jsonl";
  tc.resume = resume;
  write_text(dir / "config.json", to_json(cfg).dump(2) + "\n");

  const auto result = soda::fit(data, cfg.model_config(data.topology), tc);
  std::cout << "train: " << result.completed_steps << " steps";
  if (!result.log.empty()) {
    const auto& last = result.log.back();
    std::cout << ", final loss " << last.losses.total;
    if (last.auc_by_label) std::cout << ", unlabeled-target mean AUC " << soda::mean_auc(*last.auc_by_label);
  }
  if (result.best_score >= 0.0) std::cout << ", best validation AUC " << result.best_score;
  std::cout << " -> " << tc.checkpoint_path.string() << "\n";
  return 0;
}

int cmd_eval(const CommonArgs& args, const std::string& checkpoint, const std::string& manifest,
             const std::string& out_arg) {
  const auto cfg = load_config(args);
  const auto ckpt = soda::load_checkpoint(checkpoint);
  const auto data = load_eval_data(ckpt, manifest, cfg);
  const auto samples = target_eval_samples(data);
  const auto aucs = soda::per_label_auc(ckpt.model, samples, ckpt.topology);
  const double mean = soda::mean_auc(aucs);

  ordered_json report;
  report["checkpoint"] = checkpoint;
  report["n_samples"] = samples.size();
  report["auc_by_label"] = auc_json(aucs);
  report["mean_auc"] = std::isfinite(mean) ? ordered_json(mean) : ordered_json(nullptr);
  const fs::path out = out_arg.empty() ? output_dir(cfg) / "eval.json" : fs::path(out_arg);
  write_text(out, report.dump(2) + "\n");

  std::cout << "eval: " << samples.size() << " target samples, mean AUC " << mean;
  for (const auto& a : aucs) {
    std::cout << ", " << a.label << "=";
    if (a.auc) std::cout << *a.auc; else std::cout << "undefined";
  }
  std::cout << " -> " << out.string() << "\n";
  return 0;
}

int cmd_pad(const CommonArgs& args, const std::string& checkpoint, const std::string& manifest,
            const std::string& features, const std::string& out_arg) {
  const auto cfg = load_config(args);
  if (checkpoint.empty() == features.empty())
    throw soda::InvalidInput("pad needs exactly one of --checkpoint or --features");
  soda::Matrix src, tgt;
  if (!features.empty()) {
    const auto table = soda::read_features(features);
    src = table.rows_for(soda::Domain::source);
    tgt = table.rows_for(soda::Domain::target);
  } else {
    const auto ckpt = soda::load_checkpoint(checkpoint);
    const auto data = load_eval_data(ckpt, manifest, cfg);
    std::vector<soda::Sample> target(data.target_labeled);
    target.insert(target.end(), data.target_unlabeled.begin(), data.target_unlabeled.end());
    src = soda::extract_features(ckpt.model, data.source).transpose();
    tgt = soda::extract_features(ckpt.model, target).transpose();
  }
  const auto result = soda::proxy_a_distance(src, tgt, cfg.pad);

  ordered_json report;
  report["d_a"] = result.distance;
  report["distances"] = result.distances;
  report["min_errors"] = result.min_errors;
  report["n_source"] = src.rows();
  report["n_target"] = tgt.rows();
  const fs::path out = out_arg.empty() ? output_dir(cfg) / "pad.json" : fs::path(out_arg);
  write_text(out, report.dump(2) + "\n");
  std::cout << "pad: d_A " << result.distance << " (" << src.rows() << " source, " << tgt.rows()
            << " target) -> " << out.string() << "\n";
  return 0;
}

int cmd_export(const CommonArgs& args, const std::string& checkpoint, const std::string& manifest,
               const std::string& out_arg) {
  const auto cfg = load_config(args);
  const auto ckpt = soda::load_checkpoint(checkpoint);
  const auto data = load_eval_data(ckpt, manifest, cfg);
  std::vector<soda::Sample> all(data.source);
  all.insert(all.end(), data.target_labeled.begin(), data.target_labeled.end());
  all.insert(all.end(), data.target_unlabeled.begin(), data.target_unlabeled.end());
  const fs::path out = out_arg.empty() ? output_dir(cfg) / "features.csv" : fs::path(out_arg);
  if (out.has_parent_path()) ensure_dir(out.parent_path());
  soda::export_features(ckpt.model, all, ckpt.topology, out);
  std::cout << "export-features: " << all.size() << " rows x "
            << ckpt.model.config().extractor.feature_dim << " features -> " << out.string() << "\n";
  return 0;
}

int cmd_saliency(const CommonArgs& args, const std::string& checkpoint, const std::string& image_path,
                 const std::string& label, const std::string& out_arg) {
  const auto cfg = load_config(args);
  const auto ckpt = soda::load_checkpoint(checkpoint);
  const auto& ex = ckpt.model.config().extractor;
  auto image = soda::read_png(image_path);
  image = soda::convert_channels(image, ex.channels);
  if (image.height != ex.height || image.width != ex.width)
    image = soda::resize_bilinear(image, ex.height, ex.width);
  const auto map = soda::grad_cam(ckpt.model, image, label, ckpt.topology);

  const fs::path prefix =
      out_arg.empty() ? output_dir(cfg) / ("saliency_" + fs::path(image_path).stem().string() + "_" + label)
                      : fs::path(out_arg);
  if (prefix.has_parent_path()) ensure_dir(prefix.parent_path());
  const fs::path png = prefix.string() + ".png";
  const fs::path sidecar = prefix.string() + ".json";
  soda::write_saliency(map, image, png, sidecar);
  std::cout << "saliency: label " << label << ", map " << map.height << "x" << map.width << " -> "
            << png.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SODA: semi-supervised open-set domain-adversarial training"};
  app.require_subcommand(1);

  CommonArgs common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "JSON run config");
    sub->allow_extras();
  };

  std::string out, checkpoint, manifest, features, image, label;
  bool resume = false;

  auto* synth = app.add_subcommand("synth", "Write the synthetic benchmark as PNGs plus manifest");
  add_common(synth);
  synth->add_option("--out", out, "Dataset directory (default <output_dir>/data)");

  auto* train = app.add_subcommand("train", "Train a model; writes checkpoints and metrics");
  add_common(train);
  train->add_flag("--resume", resume, "Continue from <output_dir>/checkpoint.bin");

  auto* eval = app.add_subcommand("eval", "Per-label target AUC as JSON");
  add_common(eval);
  eval->add_option("--checkpoint", checkpoint)->required();
  eval->add_option("--manifest", manifest, "Evaluation manifest (default: config data)");
  eval->add_option("--out", out, "Report path (default <output_dir>/eval.json)");

  auto* pad = app.add_subcommand("pad", "Proxy-A-distance between source and target features");
  add_common(pad);
  pad->add_option("--checkpoint", checkpoint);
  pad->add_option("--manifest", manifest);
  pad->add_option("--features", features, "Feature CSV from export-features");
  pad->add_option("--out", out, "Report path (default <output_dir>/pad.json)");

  auto* exp = app.add_subcommand("export-features", "Write hidden features as CSV");
  add_common(exp);
  exp->add_option("--checkpoint", checkpoint)->required();
  exp->add_option("--manifest", manifest);
  exp->add_option("--out", out, "CSV path (default <output_dir>/features.csv)");

  auto* sal = app.add_subcommand("saliency", "Grad-CAM overlay PNG plus JSON sidecar");
  add_common(sal);
  sal->add_option("--checkpoint", checkpoint)->required();
  sal->add_option("--image", image)->required();
  sal->add_option("--label", label)->required();
  sal->add_option("--out", out, "Output prefix; .png and .json are appended");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    for (auto* sub : app.get_subcommands()) common.overrides = sub->remaining();
    if (synth->parsed()) return cmd_synth(common, out);
    if (train->parsed()) return cmd_train(common, resume);
    if (eval->parsed()) return cmd_eval(common, checkpoint, manifest, out);
    if (pad->parsed()) return cmd_pad(common, checkpoint, manifest, features, out);
    if (exp->parsed()) return cmd_export(common, checkpoint, manifest, out);
    if (sal->parsed()) return cmd_saliency(common, checkpoint, image, label, out);
  } catch (const soda::InvalidInput& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const soda::NumericalAbort& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return 3;
  } catch (const soda::IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return 4;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
