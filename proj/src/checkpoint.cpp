#include "soda/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "soda/error.hpp"

namespace soda {

namespace {

constexpr char kMagic[8] = {'S', 'O', 'D', 'A', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}

  void u8(std::uint8_t v) { out_.put(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.put(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.put(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void names(const std::vector<std::string>& v) {
    u32(static_cast<std::uint32_t>(v.size()));
    for (const auto& s : v) str(s);
  }
  void values(const Matrix& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) f64(m.data()[i]);
  }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  Reader(std::istream& in, std::string path) : in_(in), path_(std::move(path)) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(byte()); }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(byte()) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(byte()) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    if (n > (1u << 24)) fail("string length out of range");
    std::string s(n, '\0');
    in_.read(s.data(), n);
    if (!in_) fail("truncated file");
    return s;
  }
  std::vector<std::string> names() {
    const std::uint32_t n = u32();
    if (n > (1u << 20)) fail("name count out of range");
    std::vector<std::string> v(n);
    for (auto& s : v) s = str();
    return v;
  }
  void values(Matrix& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = f64();
  }
  [[noreturn]] void fail(const std::string& what) {
    throw InvalidInput("checkpoint " + path_ + ": " + what);
  }

 private:
  unsigned char byte() {
    const int c = in_.get();
    if (c == std::char_traits<char>::eof()) fail("truncated file");
    return static_cast<unsigned char>(c);
  }
  std::istream& in_;
  std::string path_;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  auto& model = const_cast<Model&>(ck.model);
  const auto& cfg = model.config();
  auto params = model.parameters();

  std::ostringstream buf(std::ios::binary);
  Writer w(buf);
  buf.write(kMagic, sizeof kMagic);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(cfg.extractor.feature_dim));
  w.u32(static_cast<std::uint32_t>(cfg.hidden_dim));
  w.u32(static_cast<std::uint32_t>(cfg.num_labels));
  w.names(ck.topology.unified());
  w.names(ck.topology.source_labels());
  w.names(ck.topology.target_labels());
  w.u32(static_cast<std::uint32_t>(cfg.extractor.height));
  w.u32(static_cast<std::uint32_t>(cfg.extractor.width));
  w.u32(static_cast<std::uint32_t>(cfg.extractor.channels));
  w.u32(static_cast<std::uint32_t>(cfg.extractor.conv_widths.size()));
  for (auto c : cfg.extractor.conv_widths) w.u32(static_cast<std::uint32_t>(c));
  w.f64(model.grl_coeff);

  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    w.str(p.name);
    w.u32(static_cast<std::uint32_t>(p.value->rows()));
    w.u32(static_cast<std::uint32_t>(p.value->cols()));
    w.values(*p.value);
  }

  w.u8(ck.optimizer ? 1 : 0);
  if (ck.optimizer) {
    const auto& o = *ck.optimizer;
    if (o.m.size() != params.size() || o.v.size() != params.size())
      throw InvalidInput("optimizer state does not match model parameters");
    w.f64(o.config.learning_rate);
    w.f64(o.config.beta1);
    w.f64(o.config.beta2);
    w.f64(o.config.epsilon);
    w.u64(o.t);
    for (const auto& m : o.m) w.values(m);
    for (const auto& v : o.v) w.values(v);
  }
  w.u8(ck.trainer ? 1 : 0);
  if (ck.trainer) {
    w.u64(ck.trainer->step);
    w.u64(ck.trainer->total_steps);
    w.f64(ck.trainer->best_score);
    w.str(ck.trainer->rng_state);
  }

  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    const std::string bytes = buf.str();
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing checkpoint " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  Reader r(in, path.string());

  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) r.fail("not a checkpoint file");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    r.fail("unsupported format version " + std::to_string(version));

  ModelConfig cfg;
  cfg.extractor.feature_dim = r.u32();
  cfg.hidden_dim = r.u32();
  cfg.num_labels = r.u32();
  const auto unified = r.names();
  const auto source = r.names();
  const auto target = r.names();
  cfg.extractor.height = r.u32();
  cfg.extractor.width = r.u32();
  cfg.extractor.channels = r.u32();
  const std::uint32_t nw = r.u32();
  if (nw > 64) r.fail("too many conv blocks");
  cfg.extractor.conv_widths.clear();
  for (std::uint32_t i = 0; i < nw; ++i) cfg.extractor.conv_widths.push_back(r.u32());

  if (expected && !(*expected == cfg)) r.fail("model shape does not match the expected configuration");

  Checkpoint ck;
  ck.topology = build_topology(source, target);
  if (ck.topology.unified() != unified) r.fail("label order is inconsistent");
  if (unified.size() != cfg.num_labels) r.fail("label count does not match |L|");

  ck.model = Model(cfg, 0);
  ck.model.grl_coeff = r.f64();
  auto params = ck.model.parameters();
  const std::uint32_t np = r.u32();
  if (np != params.size()) r.fail("parameter count mismatch");
  for (auto& p : params) {
    const auto name = r.str();
    const auto rows = r.u32();
    const auto cols = r.u32();
    if (name != p.name || rows != p.value->rows() || cols != p.value->cols())
      r.fail("parameter '" + name + "' does not match expected '" + p.name + "' shape");
    r.values(*p.value);
  }

  if (r.u8()) {
    AdamState o;
    o.config.learning_rate = r.f64();
    o.config.beta1 = r.f64();
    o.config.beta2 = r.f64();
    o.config.epsilon = r.f64();
    o.t = r.u64();
    for (auto* moments : {&o.m, &o.v}) {
      for (const auto& p : params) {
        Matrix m(p.value->rows(), p.value->cols());
        r.values(m);
        moments->push_back(std::move(m));
      }
    }
    ck.optimizer = std::move(o);
  }
  if (r.u8()) {
    TrainerState t;
    t.step = r.u64();
    t.total_steps = r.u64();
    t.best_score = r.f64();
    t.rng_state = r.str();
    ck.trainer = std::move(t);
  }
  return ck;
}

}  // namespace soda
