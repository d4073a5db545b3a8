#include "soda/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "soda/checkpoint.hpp"
#include "soda/error.hpp"

namespace soda {

void TrainConfig::validate() const {
  if (steps == 0) throw InvalidInput("steps must be >= 1");
  if (!(adam.learning_rate >= 0.0) || !std::isfinite(adam.learning_rate))
    throw InvalidInput("learning_rate must be finite and >= 0");
  weights.validate();
  if (group_sizes.total() == 0) throw InvalidInput("batch group sizes are all zero");
  if (!(grl_constant >= 0.0)) throw InvalidInput("grl coefficient must be >= 0");
  if (eval_every == 0) throw InvalidInput("eval_every must be >= 1");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw InvalidInput("val_fraction must be in [0,1)");
  if (eval_pad) pad.validate();
}

double TrainConfig::grl_coeff_at(std::size_t step) const {
  if (grl_schedule == GrlSchedule::constant) return grl_constant;
  const double progress = static_cast<double>(step - 1) / static_cast<double>(steps);
  return grl_ramp(progress);
}

namespace {

nlohmann::json auc_json(const std::vector<LabelAuc>& aucs) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& a : aucs) j[a.label] = a.auc ? nlohmann::json(*a.auc) : nlohmann::json(nullptr);
  return j;
}

}  // namespace

std::string to_json_line(const TrainRecord& r) {
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["l_gy"] = r.losses.l_gy;
  j["l_r"] = r.losses.l_r;
  j["l_dg"] = r.losses.l_dg;
  j["l_dc_label"] = r.losses.l_dc_label;
  j["l_dc_un"] = r.losses.l_dc_un;
  j["total"] = r.losses.total;
  if (r.auc_by_label) j["auc_by_label"] = auc_json(*r.auc_by_label);
  if (r.val_auc_by_label) j["val_auc_by_label"] = auc_json(*r.val_auc_by_label);
  if (r.pad) j["pad"] = *r.pad;
  j["seconds"] = r.seconds;
  return j.dump();
}

BatchLayout layout_of(const Batch& batch) {
  BatchLayout out;
  auto add = [&](const std::vector<Sample>& group, Group g) {
    for (const auto& s : group) {
      out.images.push_back(&s.image());
      out.groups.push_back(g);
      out.labels.push_back(g == Group::target_unlabeled ? nullptr : s.training_labels());
    }
  };
  add(batch.source_group, Group::source);
  add(batch.target_labeled_group, Group::target_labeled);
  add(batch.target_unlabeled_group, Group::target_unlabeled);
  return out;
}

LossReport compute_gradients(const Model& model, const Batch& batch, const LabelTopology& topology,
                             const TrainConfig& config, Model& grads, ReversalWiring wiring) {
  const BatchLayout layout = layout_of(batch);
  const auto& images = layout.images;
  if (images.empty()) throw InvalidInput("empty batch");
  LossBatch lb;
  lb.topology = &topology;
  lb.groups = layout.groups;
  lb.labels = layout.labels;

  const ForwardTrace trace = model.forward(images);
  lb.y_hat = trace.y_hat;
  lb.d_g_hat = trace.d_g_hat;
  lb.d_c_hat = trace.d_c_hat;
  lb.r_hat = trace.r_hat;
  if (!config.recognizer_weights) lb.unlabeled_weight = Vector::Ones(trace.r_hat.size());

  auto dout = OutputGradients::zeros(model.num_labels(), images.size());
  const LossReport report = compute_losses(lb, config.weights, &dout);

  BackwardOptions opts;
  opts.wiring = wiring;
  opts.detach_recognizer = config.detach_recognizer;
  model.backward(trace, dout, grads, opts);
  return report;
}

LossReport train_step(Model& model, Adam& optimizer, const Batch& batch,
                      const LabelTopology& topology, const TrainConfig& config) {
  Model grads = model.zeros_like();
  const LossReport report = compute_gradients(model, batch, topology, config, grads);
  for (const auto& p : grads.parameters()) {
    if (!p.value->allFinite()) throw NumericalAbort("non-finite gradient for " + p.name);
  }
  optimizer.step(model, grads);
  return report;
}

std::filesystem::path best_checkpoint_path(const std::filesystem::path& checkpoint_path) {
  auto p = checkpoint_path;
  p += ".best";
  return p;
}

namespace {

std::string rng_text(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

void restore_rng(std::mt19937_64& rng, const std::string& text) {
  std::istringstream is(text);
  is >> rng;
  if (!is) throw InvalidInput("corrupt rng state in checkpoint");
}

// Keeps only records with step <= `last_step`.
void truncate_log(const std::filesystem::path& path, std::size_t last_step) {
  std::ifstream in(path);
  if (!in) return;
  std::vector<std::string> keep;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("step")) continue;
    if (j["step"].get<std::size_t>() <= last_step) keep.push_back(line);
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  for (const auto& l : keep) out << l << '\n';
}

}  // namespace

FitResult fit(const OpenSetData& data, const ModelConfig& model_config, const TrainConfig& config,
              const StepCallback& on_step) {
  config.validate();
  if (model_config.num_labels != data.topology.size())
    throw InvalidInput("model label count does not match topology");

  // Held-out labeled target split for model selection.
  OpenSetData train = data;
  Dataset validation;
  if (config.val_fraction > 0.0 && !data.target_labeled.empty()) {
    auto [held_out, rest] = split_target(data.target_labeled, config.val_fraction, config.seed ^ 0x5eedULL);
    validation = std::move(held_out);
    train.target_labeled.clear();
    for (const auto& s : rest) {
      train.target_labeled.push_back(Sample::labeled(s.image(), Domain::target, *s.evaluation_labels()));
    }
  }
  const auto& gs = config.group_sizes;
  if ((gs.source && train.source.empty()) || (gs.target_labeled && train.target_labeled.empty()) ||
      (gs.target_unlabeled && train.target_unlabeled.empty()))
    throw InvalidInput("a dataset group is empty but its batch size is non-zero");

  std::vector<Sample> unlabeled_eval;
  for (const auto& s : data.target_unlabeled)
    if (s.evaluation_labels()) unlabeled_eval.push_back(s);

  FitResult result;
  Model model(model_config, config.seed * 2 + 1);
  std::mt19937_64 rng(config.seed);
  Adam optimizer(config.adam, model);
  std::size_t start = 0;
  double best_score = -1.0;
  std::optional<Model> best;

  const std::size_t ckpt_every = config.checkpoint_every ? config.checkpoint_every : config.eval_every;
  const bool checkpoints = !config.checkpoint_path.empty();

  if (config.resume && checkpoints && std::filesystem::exists(config.checkpoint_path)) {
    Checkpoint ck = load_checkpoint(config.checkpoint_path, &model_config);
    if (!ck.optimizer || !ck.trainer) throw InvalidInput("checkpoint has no resumable training state");
    if (!(ck.topology == data.topology)) throw InvalidInput("checkpoint label topology differs from data");
    model = std::move(ck.model);
    optimizer = Adam(std::move(*ck.optimizer));
    start = ck.trainer->step;
    best_score = ck.trainer->best_score;
    restore_rng(rng, ck.trainer->rng_state);
    const auto best_path = best_checkpoint_path(config.checkpoint_path);
    if (std::filesystem::exists(best_path)) best = load_checkpoint(best_path, &model_config).model;
    if (!config.metrics_path.empty()) truncate_log(config.metrics_path, start);
  } else if (!config.metrics_path.empty()) {
    std::ofstream(config.metrics_path, std::ios::trunc);
  }

  std::ofstream log;
  if (!config.metrics_path.empty()) {
    log.open(config.metrics_path, std::ios::app);
    if (!log) throw IoError("cannot open metrics log " + config.metrics_path.string());
  }

  for (std::size_t step = start + 1; step <= config.steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    model.grl_coeff = config.grl_coeff_at(step);
    const Batch batch = sample_batch(train, config.group_sizes, rng);

    TrainRecord rec;
    rec.step = step;
    rec.losses = train_step(model, optimizer, batch, data.topology, config);

    if (step % config.eval_every == 0 || step == config.steps) {
      if (!unlabeled_eval.empty()) rec.auc_by_label = per_label_auc(model, unlabeled_eval, data.topology);
      if (!validation.empty()) {
        rec.val_auc_by_label = per_label_auc(model, validation, data.topology);
        const double score = mean_auc(*rec.val_auc_by_label);
        if (std::isfinite(score) && score > best_score) {
          best_score = score;
          best = model;
          if (checkpoints) save_checkpoint(best_checkpoint_path(config.checkpoint_path), {*best, data.topology, {}, {}});
        }
      }
      if (config.eval_pad) {
        const Matrix src = extract_features(model, train.source).transpose();
        Dataset target = train.target_labeled;
        target.insert(target.end(), train.target_unlabeled.begin(), train.target_unlabeled.end());
        const Matrix tgt = extract_features(model, target).transpose();
        rec.pad = proxy_a_distance(src, tgt, config.pad).distance;
      }
    }

    if (checkpoints && (step % ckpt_every == 0 || step == config.steps)) {
      Checkpoint ck{model, data.topology, optimizer.state(),
                    TrainerState{step, config.steps, best_score, rng_text(rng)}};
      save_checkpoint(config.checkpoint_path, ck);
    }

    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (log.is_open()) log << to_json_line(rec) << '\n' << std::flush;
    result.log.push_back(rec);
    result.completed_steps = step;
    if (on_step && !on_step(rec)) break;
  }
  if (start >= config.steps) result.completed_steps = start;

  result.best_score = best_score;
  result.best_model = best ? *best : model;
  result.final_model = std::move(model);
  return result;
}

}  // namespace soda
