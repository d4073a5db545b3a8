#include "soda/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "soda/error.hpp"

namespace soda {

double auc_roc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw InvalidInput("scores and labels differ in length");
  const std::size_t n = scores.size();
  std::int64_t n_pos = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw InvalidInput("labels must be 0 or 1");
    if (std::isnan(scores[i])) throw InvalidInput("score is NaN");
    n_pos += labels[i];
  }
  const std::int64_t n_neg = static_cast<std::int64_t>(n) - n_pos;
  if (n_pos == 0 || n_neg == 0)
    throw UndefinedAuc("AUC is undefined: need at least one positive and one negative");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Twice the rank sum of positives with mid-ranks for ties (kept integral).
  std::int64_t rank2_sum = 0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i + 1;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const auto twice_mid = static_cast<std::int64_t>(i + 1 + j);  // (i+1) + j
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]]) rank2_sum += twice_mid;
    i = j;
  }
  const std::int64_t u2 = rank2_sum - n_pos * (n_pos + 1);
  return static_cast<double>(u2) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

std::vector<LabelAuc> per_label_auc(const Matrix& probabilities,
                                    std::span<const LabelVector* const> truth,
                                    const LabelTopology& topology) {
  if (truth.empty()) throw InvalidInput("evaluation set is empty");
  if (static_cast<std::size_t>(probabilities.cols()) != truth.size() ||
      static_cast<std::size_t>(probabilities.rows()) != topology.size())
    throw InvalidInput("probability matrix does not match evaluation set");

  std::vector<LabelAuc> out;
  for (const auto& name : topology.target_labels()) {
    const auto l = static_cast<Eigen::Index>(*topology.index_of(name));
    std::vector<double> scores;
    std::vector<int> labels;
    for (std::size_t s = 0; s < truth.size(); ++s) {
      if (!truth[s]) throw InvalidInput("evaluation sample without labels");
      scores.push_back(probabilities(l, static_cast<Eigen::Index>(s)));
      labels.push_back(truth[s]->values[static_cast<std::size_t>(l)] != 0.0 ? 1 : 0);
    }
    LabelAuc entry{name, std::nullopt};
    try {
      entry.auc = auc_roc(scores, labels);
    } catch (const UndefinedAuc&) {
    }
    out.push_back(std::move(entry));
  }
  return out;
}

namespace {

constexpr std::size_t kChunk = 64;

template <typename Fn>
Matrix chunked(std::span<const Sample> samples, Eigen::Index rows, Fn&& fn) {
  Matrix out(rows, static_cast<Eigen::Index>(samples.size()));
  for (std::size_t start = 0; start < samples.size(); start += kChunk) {
    const std::size_t end = std::min(samples.size(), start + kChunk);
    std::vector<const Image*> images;
    for (std::size_t i = start; i < end; ++i) images.push_back(&samples[i].image());
    out.middleCols(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(end - start)) =
        fn(images);
  }
  return out;
}

}  // namespace

Matrix extract_features(const Model& model, std::span<const Sample> samples) {
  return chunked(samples, static_cast<Eigen::Index>(model.feature_dim()),
                 [&](const std::vector<const Image*>& imgs) { return model.forward_features(imgs); });
}

Matrix predict(const Model& model, std::span<const Sample> samples) {
  return chunked(samples, static_cast<Eigen::Index>(model.num_labels()),
                 [&](const std::vector<const Image*>& imgs) {
                   return model.classify(model.forward_features(imgs));
                 });
}

std::vector<LabelAuc> per_label_auc(const Model& model, std::span<const Sample> samples,
                                    const LabelTopology& topology) {
  std::vector<Sample> eval;
  std::vector<const LabelVector*> truth;
  for (const auto& s : samples) {
    if (s.domain() != Domain::target || !s.evaluation_labels()) continue;
    eval.push_back(s);
  }
  if (eval.empty()) throw InvalidInput("evaluation set has no labeled target samples");
  for (const auto& s : eval) truth.push_back(s.evaluation_labels());
  return per_label_auc(predict(model, eval), truth, topology);
}

double mean_auc(const std::vector<LabelAuc>& aucs) {
  double sum = 0.0;
  int n = 0;
  for (const auto& a : aucs) {
    if (a.auc) {
      sum += *a.auc;
      ++n;
    }
  }
  return n ? sum / n : std::numeric_limits<double>::quiet_NaN();
}

std::optional<double> auc_for(const std::vector<LabelAuc>& aucs, const std::string& label) {
  for (const auto& a : aucs)
    if (a.label == label) return a.auc;
  return std::nullopt;
}

void PadConfig::validate() const {
  if (c_grid.empty()) throw InvalidInput("PAD C grid is empty");
  for (double c : c_grid)
    if (!(c > 0.0)) throw InvalidInput("PAD C values must be positive");
  if (!(split_fraction > 0.0 && split_fraction < 1.0))
    throw InvalidInput("PAD split fraction must be in (0,1)");
  if (epochs == 0 || !(step_size > 0.0)) throw InvalidInput("PAD epochs and step size must be positive");
  if (repeats == 0) throw InvalidInput("PAD repeats must be positive");
}

double pad_from_error(double error) { return 2.0 * (1.0 - 2.0 * error); }

namespace {

struct LinearSvm {
  Vector w;
  double b = 0.0;
  double decision(const Vector& x) const { return w.dot(x) + b; }
};

// Subgradient descent on mean hinge + (1 / (2 C n)) ||w||^2.
LinearSvm train_svm(const std::vector<Vector>& xs, const std::vector<double>& ys, double c,
                    const PadConfig& cfg, std::mt19937_64& rng) {
  const std::size_t n = xs.size();
  const double lambda = 1.0 / (c * static_cast<double>(n));
  LinearSvm svm{Vector::Zero(xs.front().size()), 0.0};
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    const double eta = cfg.step_size / std::sqrt(static_cast<double>(epoch));
    for (std::size_t i : order) {
      const double margin = ys[i] * svm.decision(xs[i]);
      svm.w *= (1.0 - eta * lambda);
      if (margin < 1.0) {
        svm.w += eta * ys[i] * xs[i];
        svm.b += eta * ys[i];
      }
    }
  }
  return svm;
}

}  // namespace

PadResult proxy_a_distance(const Matrix& source, const Matrix& target, const PadConfig& cfg) {
  cfg.validate();
  if (source.rows() == 0 || target.rows() == 0) throw InvalidInput("PAD needs samples from both domains");
  if (source.cols() != target.cols()) throw InvalidInput("PAD feature widths differ");
  if (source.cols() == 0) throw InvalidInput("PAD features are empty");

  PadResult result;
  std::mt19937_64 rng(cfg.seed);
  for (std::size_t rep = 0; rep < cfg.repeats; ++rep) {
    std::vector<Vector> train_x, test_x;
    std::vector<double> train_y, test_y;
    auto split = [&](const Matrix& m, double y) {
      std::vector<Eigen::Index> idx(static_cast<std::size_t>(m.rows()));
      std::iota(idx.begin(), idx.end(), 0);
      std::shuffle(idx.begin(), idx.end(), rng);
      auto n_test = static_cast<std::size_t>(std::llround(cfg.split_fraction * idx.size()));
      n_test = std::clamp<std::size_t>(n_test, 1, idx.size() > 1 ? idx.size() - 1 : 1);
      if (idx.size() < 2) throw InvalidInput("PAD needs at least two samples per domain");
      for (std::size_t k = 0; k < idx.size(); ++k) {
        Vector x = m.row(idx[k]).transpose();
        if (k < n_test) {
          test_x.push_back(std::move(x));
          test_y.push_back(y);
        } else {
          train_x.push_back(std::move(x));
          train_y.push_back(y);
        }
      }
    };
    split(source, 1.0);
    split(target, -1.0);

    // Standardize with training statistics.
    const auto dim = source.cols();
    Vector mean = Vector::Zero(dim);
    for (const auto& x : train_x) mean += x;
    mean /= static_cast<double>(train_x.size());
    Vector sd = Vector::Zero(dim);
    for (const auto& x : train_x) sd += (x - mean).cwiseAbs2();
    sd = (sd / static_cast<double>(train_x.size())).cwiseSqrt();
    for (Eigen::Index d = 0; d < dim; ++d)
      if (!(sd(d) > 1e-12)) sd(d) = 1.0;
    for (auto* set : {&train_x, &test_x})
      for (auto& x : *set) x = (x - mean).cwiseQuotient(sd);

    double best = std::numeric_limits<double>::infinity();
    for (double c : cfg.c_grid) {
      const LinearSvm svm = train_svm(train_x, train_y, c, cfg, rng);
      double wrong = 0.0;
      for (std::size_t i = 0; i < test_x.size(); ++i) {
        const double pred = svm.decision(test_x[i]) >= 0.0 ? 1.0 : -1.0;
        wrong += pred != test_y[i];
      }
      best = std::min(best, wrong / static_cast<double>(test_x.size()));
    }
    result.min_errors.push_back(best);
    result.distances.push_back(pad_from_error(best));
  }
  result.distance = std::accumulate(result.distances.begin(), result.distances.end(), 0.0) /
                    static_cast<double>(result.distances.size());
  return result;
}

SaliencyMap grad_cam(const Model& model, const Image& image, const std::string& label,
                     const LabelTopology& topology) {
  const auto idx = topology.index_of(label);
  if (!idx) throw InvalidInput("unknown label '" + label + "'");
  const Image* ptr = &image;
  std::unique_ptr<ExtractorCache> cache;
  const Matrix h = model.extractor().forward(std::span<const Image* const>(&ptr, 1), &cache);

  // d logit_l / d h is row l of the classifier weight.
  const Matrix dh = model.classifier.weight.row(static_cast<Eigen::Index>(*idx)).transpose();
  auto scratch = model.extractor().zeros_like();
  FeatureMap d_map;
  model.extractor().backward(*cache, dh, *scratch, &d_map);

  const FeatureMap& act = cache->last_conv;
  SaliencyMap out;
  out.label = label;
  out.height = cache->last_conv_height;
  out.width = cache->last_conv_width;
  const auto plane = static_cast<Eigen::Index>(out.height * out.width);
  const Vector alpha = d_map.rowwise().sum() / static_cast<double>(plane);
  out.grid.assign(static_cast<std::size_t>(plane), 0.0);
  double peak = 0.0;
  for (Eigen::Index p = 0; p < plane; ++p) {
    double v = 0.0;
    for (Eigen::Index c = 0; c < act.rows(); ++c) v += alpha(c) * act(c, p);
    v = std::max(v, 0.0);
    out.grid[static_cast<std::size_t>(p)] = v;
    peak = std::max(peak, v);
  }
  if (peak > 0.0)
    for (auto& v : out.grid) v /= peak;

  Image small(out.height, out.width, 1);
  small.pixels = out.grid;
  out.overlay = resize_bilinear(small, image.height, image.width);
  return out;
}

std::optional<std::pair<double, double>> saliency_centroid(const SaliencyMap& map) {
  double mass = 0.0, cy = 0.0, cx = 0.0;
  const Image& o = map.overlay;
  for (std::size_t y = 0; y < o.height; ++y) {
    for (std::size_t x = 0; x < o.width; ++x) {
      const double v = o.at(y, x);
      mass += v;
      cy += v * (y + 0.5);
      cx += v * (x + 0.5);
    }
  }
  if (!(mass > 0.0)) return std::nullopt;
  return std::make_pair(cy / mass, cx / mass);
}

void write_saliency(const SaliencyMap& map, const Image& image,
                    const std::filesystem::path& png_path,
                    const std::filesystem::path& sidecar_path) {
  const Image gray = convert_channels(image, 1);
  Image rgb(image.height, image.width, 3);
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) {
      const double g = gray.at(y, x);
      const double heat = map.overlay.at(y, x);
      rgb.at(y, x, 0) = 0.5 * g + 0.5 * heat;
      rgb.at(y, x, 1) = 0.5 * g;
      rgb.at(y, x, 2) = 0.5 * g * (1.0 - heat);
    }
  }
  write_png(png_path, rgb);
  nlohmann::json sidecar{{"label", map.label},
                         {"image_path", png_path.filename().string()},
                         {"map_shape", {map.height, map.width}}};
  std::ofstream out(sidecar_path);
  if (!out) throw IoError("cannot write " + sidecar_path.string());
  out << sidecar.dump(2) << '\n';
}

Matrix FeatureTable::rows_for(Domain d) const {
  std::vector<Eigen::Index> idx;
  for (std::size_t i = 0; i < domains.size(); ++i)
    if (domains[i] == d) idx.push_back(static_cast<Eigen::Index>(i));
  Matrix out(static_cast<Eigen::Index>(idx.size()), features.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = features.row(idx[k]);
  return out;
}

void export_features(const Model& model, std::span<const Sample> samples,
                     const LabelTopology& topology, const std::filesystem::path& path) {
  if (samples.empty()) throw InvalidInput("cannot export features of an empty dataset");
  const Matrix h = extract_features(model, samples);
  std::ofstream out(path);
  if (!out) throw IoError("cannot write feature file " + path.string());
  out << "domain,labeled,labels";
  for (Eigen::Index d = 0; d < h.rows(); ++d) out << ",f" << d;
  out << '\n';
  out << std::setprecision(17);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    std::string names;
    if (const LabelVector* lv = s.evaluation_labels()) {
      for (const auto& n : decode_labels(*lv, topology)) {
        if (!names.empty()) names += ';';
        names += n;
      }
    }
    out << to_string(s.domain()) << ',' << (s.is_labeled() ? 1 : 0) << ',' << names;
    for (Eigen::Index d = 0; d < h.rows(); ++d) out << ',' << h(d, static_cast<Eigen::Index>(i));
    out << '\n';
  }
  if (!out) throw IoError("failed writing feature file " + path.string());
}

FeatureTable read_features(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open feature file " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("domain,labeled,labels", 0) != 0)
    throw InvalidInput("feature file header must start with domain,labeled,labels");
  const auto dim = static_cast<Eigen::Index>(std::count(line.begin(), line.end(), ',') - 2);

  FeatureTable t;
  std::vector<std::vector<double>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    if (static_cast<Eigen::Index>(fields.size()) != dim + 3)
      throw InvalidInput("feature file row " + std::to_string(line_no) + ": wrong field count");
    t.domains.push_back(parse_domain(fields[0]));
    t.labeled.push_back(fields[1] == "1");
    std::vector<std::string> names;
    std::stringstream ls(fields[2]);
    std::string n;
    while (std::getline(ls, n, ';'))
      if (!n.empty()) names.push_back(n);
    t.labels.push_back(std::move(names));
    std::vector<double> row;
    for (std::size_t k = 3; k < fields.size(); ++k) {
      try {
        row.push_back(std::stod(fields[k]));
      } catch (const std::exception&) {
        throw InvalidInput("feature file row " + std::to_string(line_no) + ": bad number");
      }
    }
    rows.push_back(std::move(row));
  }
  t.features.resize(static_cast<Eigen::Index>(rows.size()), dim);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (Eigen::Index d = 0; d < dim; ++d) t.features(static_cast<Eigen::Index>(i), d) = rows[i][static_cast<std::size_t>(d)];
  return t;
}

}  // namespace soda
