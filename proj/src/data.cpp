#include "soda/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <string>

#include "soda/error.hpp"

namespace soda {

Sample Sample::labeled(Image image, Domain domain, LabelVector labels) {
  Sample s;
  s.image_ = std::move(image);
  s.domain_ = domain;
  s.labels_ = std::move(labels);
  return s;
}

Sample Sample::unlabeled(Image image, std::optional<LabelVector> hidden_labels) {
  Sample s;
  s.image_ = std::move(image);
  s.domain_ = Domain::target;
  s.hidden_ = std::move(hidden_labels);
  return s;
}

Sample Sample::without_hidden_labels() const {
  Sample s = *this;
  s.hidden_.reset();
  return s;
}

void SyntheticSpec::validate() const {
  if (canvas_size < 8) throw InvalidInput("canvas_size must be at least 8");
  if (n_source == 0 || n_target_labeled == 0 || n_target_unlabeled == 0)
    throw InvalidInput("synthetic counts must be positive");
  if (!(shift.gamma > 0.0)) throw InvalidInput("gamma must be > 0");
  if (!(shift.noise_sigma >= 0.0)) throw InvalidInput("noise sigma must be >= 0");
  if (!(shift.vignette >= 0.0 && shift.vignette <= 1.0))
    throw InvalidInput("vignette strength must be in [0,1]");
  if (!(multilabel_prob >= 0.0 && multilabel_prob <= 1.0))
    throw InvalidInput("multilabel_prob must be in [0,1]");
}

LabelTopology synthetic_topology() { return build_topology({"A", "B", "C"}, {"A", "D"}); }

namespace {

// Anti-aliased coverage of a shape given signed distance (negative inside).
double coverage(double signed_distance) { return std::clamp(0.5 - signed_distance, 0.0, 1.0); }

struct GlyphStyle {
  double dx, dy;      // jitter of the glyph anchor, pixels
  double scale;       // size multiplier
  double intensity;   // foreground level
};

void draw(Image& img, const std::string& glyph, const GlyphStyle& st) {
  const double s = static_cast<double>(img.width);
  const double cx = 0.5 * s + st.dx;
  const double cy = 0.5 * s + st.dy;
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      const double px = x + 0.5;
      const double py = y + 0.5;
      double sd;
      if (glyph == "A") {
        sd = std::hypot(px - cx, py - cy) - 0.17 * s * st.scale;
      } else if (glyph == "B") {
        const double half_len = 0.3 * s * st.scale;
        const double half_thick = 0.05 * s * st.scale;
        const double by = 0.78 * s + st.dy;
        sd = std::max(std::abs(px - cx) - half_len, std::abs(py - by) - half_thick);
      } else if (glyph == "C") {
        sd = std::abs(std::hypot(px - cx, py - cy) - 0.38 * s * st.scale) - 0.05 * s;
      } else {
        const double r = 0.08 * s * st.scale;
        const double d1 = std::hypot(px - (0.15 * s + st.dx), py - (0.15 * s + st.dy));
        const double d2 = std::hypot(px - (0.85 * s + st.dx), py - (0.85 * s + st.dy));
        sd = std::min(d1, d2) - r;
      }
      auto& v = img.at(y, x);
      v = std::max(v, st.intensity * coverage(sd));
    }
  }
}

struct Rendered {
  Image image;
  std::vector<std::string> labels;
};

Rendered render_sample(const std::vector<std::string>& label_set, const SyntheticSpec& spec,
                       std::mt19937_64& rng) {
  const double s = static_cast<double>(spec.canvas_size);
  std::uniform_int_distribution<std::size_t> pick(0, label_set.size() - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> jitter(-0.06 * s, 0.06 * s);
  std::uniform_real_distribution<double> scale(0.85, 1.15);
  std::uniform_real_distribution<double> fg(0.6, 0.95);
  std::uniform_real_distribution<double> bg(0.05, 0.2);

  Rendered r;
  r.image = Image(spec.canvas_size, spec.canvas_size, 1, bg(rng));
  const std::size_t first = pick(rng);
  r.labels.push_back(label_set[first]);
  if (label_set.size() > 1 && unit(rng) < spec.multilabel_prob) {
    std::uniform_int_distribution<std::size_t> other(0, label_set.size() - 2);
    std::size_t second = other(rng);
    if (second >= first) ++second;
    r.labels.push_back(label_set[second]);
  }
  for (const auto& g : r.labels) {
    GlyphStyle st{jitter(rng), jitter(rng), scale(rng), fg(rng)};
    draw(r.image, g, st);
  }
  return r;
}

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t id) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(id)};
  return std::mt19937_64(seq);
}

}  // namespace

void apply_domain_shift(Image& image, const ShiftParams& shift, std::mt19937_64& rng) {
  const double cy = 0.5 * image.height;
  const double cx = 0.5 * image.width;
  const double rmax2 = cx * cx + cy * cy;
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) {
      const double dy = y + 0.5 - cy;
      const double dx = x + 0.5 - cx;
      const double fall = 1.0 - shift.vignette * (dx * dx + dy * dy) / rmax2;
      for (std::size_t c = 0; c < image.channels; ++c) {
        double& v = image.at(y, x, c);
        if (shift.gamma != 1.0) v = std::pow(v, shift.gamma);
        if (shift.vignette != 0.0) v *= fall;
        if (shift.noise_sigma != 0.0) v += shift.noise_sigma * noise(rng);
        v = std::clamp(v, 0.0, 1.0);
      }
    }
  }
}

OpenSetData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  OpenSetData data;
  data.topology = synthetic_topology();
  const auto& topo = data.topology;

  auto rng_src = stream(spec.seed, 1);
  for (std::size_t i = 0; i < spec.n_source; ++i) {
    auto r = render_sample(topo.source_labels(), spec, rng_src);
    data.source.push_back(Sample::labeled(std::move(r.image), Domain::source,
                                          encode_labels(r.labels, Domain::source, topo)));
  }
  auto rng_tl = stream(spec.seed, 2);
  for (std::size_t i = 0; i < spec.n_target_labeled; ++i) {
    auto r = render_sample(topo.target_labels(), spec, rng_tl);
    apply_domain_shift(r.image, spec.shift, rng_tl);
    data.target_labeled.push_back(Sample::labeled(
        std::move(r.image), Domain::target, encode_labels(r.labels, Domain::target, topo)));
  }
  auto rng_tu = stream(spec.seed, 3);
  for (std::size_t i = 0; i < spec.n_target_unlabeled; ++i) {
    auto r = render_sample(topo.target_labels(), spec, rng_tu);
    apply_domain_shift(r.image, spec.shift, rng_tu);
    data.target_unlabeled.push_back(
        Sample::unlabeled(std::move(r.image), encode_labels(r.labels, Domain::target, topo)));
  }
  return data;
}

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

std::string join(const std::vector<std::string>& parts, char sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out.push_back(sep);
    out += parts[i];
  }
  return out;
}

}  // namespace

OpenSetData load_manifest(const std::filesystem::path& path, const LabelTopology& topology,
                          const ManifestOptions& options) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  const auto base = path.parent_path();

  OpenSetData data;
  data.topology = topology;
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw InvalidInput("manifest is empty: " + path.string());
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "path,domain,labeled,labels")
    throw InvalidInput("manifest header must be 'path,domain,labeled,labels'");

  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = "manifest row " + std::to_string(line_no) + ": ";
    const auto fields = split(line, ',');
    if (fields.size() != 4) throw InvalidInput(where + "expected 4 fields");
    Domain domain;
    try {
      domain = parse_domain(fields[1]);
    } catch (const InvalidInput& e) {
      throw InvalidInput(where + e.what());
    }
    if (fields[2] != "0" && fields[2] != "1")
      throw InvalidInput(where + "labeled must be 0 or 1");
    const bool labeled = fields[2] == "1";
    if (!labeled && domain == Domain::source)
      throw InvalidInput(where + "source rows must be labeled");

    std::vector<std::string> names;
    if (!fields[3].empty()) names = split(fields[3], ';');
    LabelVector labels;
    try {
      labels = encode_labels(names, domain, topology);
    } catch (const InvalidInput& e) {
      throw InvalidInput(where + e.what());
    }

    const auto image_path = base / fields[0];
    if (!std::filesystem::exists(image_path))
      throw InvalidInput(where + "missing image file " + image_path.string());
    Image img;
    try {
      img = read_png(image_path);
    } catch (const Error& e) {
      throw InvalidInput(where + e.what());
    }
    img = resize_bilinear(convert_channels(img, options.channels), options.height,
                          options.width);

    if (labeled) {
      auto& group = domain == Domain::source ? data.source : data.target_labeled;
      group.push_back(Sample::labeled(std::move(img), domain, std::move(labels)));
    } else {
      std::optional<LabelVector> hidden;
      if (!names.empty()) hidden = std::move(labels);
      data.target_unlabeled.push_back(Sample::unlabeled(std::move(img), std::move(hidden)));
    }
  }
  return data;
}

std::filesystem::path write_manifest(const OpenSetData& data,
                                     const std::filesystem::path& directory) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(directory / "images", ec);
  if (ec) throw IoError("cannot create " + (directory / "images").string() + ": " + ec.message());

  const auto manifest = directory / "manifest.csv";
  std::ofstream out(manifest, std::ios::binary);
  if (!out) throw IoError("cannot write " + manifest.string());
  out << "path,domain,labeled,labels\n";

  auto emit = [&](const Dataset& set, const char* prefix) {
    for (std::size_t i = 0; i < set.size(); ++i) {
      const auto& s = set[i];
      std::ostringstream name;
      name << "images/" << prefix << "_" << std::setw(5) << std::setfill('0') << i << ".png";
      write_png(directory / name.str(), s.image());
      const LabelVector* lv = s.evaluation_labels();
      const std::string labels = lv ? join(decode_labels(*lv, data.topology), ';') : "";
      out << name.str() << ',' << to_string(s.domain()) << ',' << (s.is_labeled() ? 1 : 0)
          << ',' << labels << '\n';
    }
  };
  emit(data.source, "source");
  emit(data.target_labeled, "target_labeled");
  emit(data.target_unlabeled, "target_unlabeled");
  if (!out) throw IoError("failed writing " + manifest.string());
  return manifest;
}

std::pair<Dataset, Dataset> split_target(const Dataset& target, double labeled_fraction,
                                         std::uint64_t seed) {
  if (!(labeled_fraction >= 0.0 && labeled_fraction <= 1.0))
    throw InvalidInput("labeled fraction must be in [0,1]");
  std::vector<std::size_t> order(target.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_labeled = static_cast<std::size_t>(std::llround(labeled_fraction * target.size()));

  Dataset labeled, unlabeled;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const Sample& s = target[order[k]];
    const LabelVector* lv = s.evaluation_labels();
    if (k < n_labeled) {
      if (!lv) throw InvalidInput("cannot label a sample without ground truth");
      labeled.push_back(Sample::labeled(s.image(), Domain::target, *lv));
    } else {
      std::optional<LabelVector> hidden;
      if (lv) hidden = *lv;
      unlabeled.push_back(Sample::unlabeled(s.image(), std::move(hidden)));
    }
  }
  return {std::move(labeled), std::move(unlabeled)};
}

Batch sample_batch(const OpenSetData& data, const GroupSizes& sizes, std::mt19937_64& rng,
                   bool with_replacement) {
  if (sizes.total() == 0) throw InvalidInput("all batch group sizes are zero");
  auto draw = [&](const Dataset& set, std::size_t n, const char* name, bool strip) {
    std::vector<Sample> out;
    if (n == 0) return out;
    if (set.empty()) throw InvalidInput(std::string("cannot sample from empty ") + name + " set");
    if (with_replacement) {
      std::uniform_int_distribution<std::size_t> pick(0, set.size() - 1);
      for (std::size_t i = 0; i < n; ++i) {
        const Sample& s = set[pick(rng)];
        out.push_back(strip ? s.without_hidden_labels() : s);
      }
    } else {
      if (n > set.size())
        throw InvalidInput(std::string("requested more ") + name + " samples than available");
      std::vector<std::size_t> idx(set.size());
      std::iota(idx.begin(), idx.end(), 0);
      for (std::size_t i = 0; i < n; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
        std::swap(idx[i], idx[pick(rng)]);
        const Sample& s = set[idx[i]];
        out.push_back(strip ? s.without_hidden_labels() : s);
      }
    }
    return out;
  };
  Batch b;
  b.source_group = draw(data.source, sizes.source, "source", false);
  b.target_labeled_group = draw(data.target_labeled, sizes.target_labeled, "labeled target", false);
  b.target_unlabeled_group =
      draw(data.target_unlabeled, sizes.target_unlabeled, "unlabeled target", true);
  return b;
}

}  // namespace soda
