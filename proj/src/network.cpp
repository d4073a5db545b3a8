#include "soda/network.hpp"

#include <cmath>

#include "soda/error.hpp"

namespace soda {

struct ConvExtractor::Cache : ExtractorCache {
  struct Block {
    FeatureMap cols;
    FeatureMap activation;  // post-ReLU, pre-pool
    Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> argmax;
    std::size_t height = 0;
    std::size_t width = 0;
  };
  std::vector<Block> blocks;
  Matrix flat;      // (C*h*w) x N
  Matrix features;  // tanh output, feature_dim x N
  std::size_t n = 0;
};

ConvExtractor::ConvExtractor(ExtractorConfig config) : config_(std::move(config)) {
  if (config_.conv_widths.empty()) throw InvalidInput("extractor needs at least one conv block");
  if (config_.channels == 0 || config_.feature_dim == 0)
    throw InvalidInput("extractor channels and feature_dim must be positive");
  const std::size_t div = std::size_t{1} << config_.conv_widths.size();
  if (config_.height % div != 0 || config_.width % div != 0 || config_.height == 0)
    throw InvalidInput("canvas " + std::to_string(config_.height) + "x" +
                       std::to_string(config_.width) + " is not divisible by " +
                       std::to_string(div));
  std::size_t in = config_.channels;
  for (std::size_t w : config_.conv_widths) {
    if (w == 0) throw InvalidInput("conv widths must be positive");
    convs_.emplace_back(in, w);
    in = w;
  }
  const std::size_t flat = in * (config_.height / div) * (config_.width / div);
  projection_ = Linear(flat, config_.feature_dim);
}

std::unique_ptr<FeatureExtractor> ConvExtractor::clone() const {
  return std::make_unique<ConvExtractor>(*this);
}

std::unique_ptr<FeatureExtractor> ConvExtractor::zeros_like() const {
  return std::make_unique<ConvExtractor>(config_);
}

void ConvExtractor::init(std::mt19937_64& rng) {
  for (auto& c : convs_) c.init(rng);
  projection_.init(rng);
}

Matrix ConvExtractor::forward(std::span<const Image* const> images,
                              std::unique_ptr<ExtractorCache>* cache_out) const {
  const std::size_t n = images.size();
  const std::size_t H = config_.height;
  const std::size_t W = config_.width;
  const std::size_t C = config_.channels;
  FeatureMap x(C, n * H * W);
  for (std::size_t s = 0; s < n; ++s) {
    const Image& img = *images[s];
    if (img.height != H || img.width != W || img.channels != C)
      throw InvalidInput("image shape " + std::to_string(img.height) + "x" +
                         std::to_string(img.width) + "x" + std::to_string(img.channels) +
                         " does not match extractor input " + std::to_string(H) + "x" +
                         std::to_string(W) + "x" + std::to_string(C));
    for (std::size_t p = 0; p < H * W; ++p)
      for (std::size_t c = 0; c < C; ++c) x(c, s * H * W + p) = img.pixels[p * C + c];
  }

  auto cache = std::make_unique<Cache>();
  cache->n = n;
  std::size_t h = H;
  std::size_t w = W;
  for (const auto& conv : convs_) {
    Cache::Block b;
    b.height = h;
    b.width = w;
    b.cols = im2col3x3(x, n, h, w);
    FeatureMap z = conv.weight * b.cols;
    z.colwise() += conv.bias.col(0);
    b.activation = z.cwiseMax(0.0);
    x = max_pool2(b.activation, n, h, w, b.argmax);
    h /= 2;
    w /= 2;
    cache->blocks.push_back(std::move(b));
  }

  const std::size_t plane = h * w;
  const auto channels = static_cast<std::size_t>(x.rows());
  Matrix flat(channels * plane, n);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t p = 0; p < plane; ++p) flat(c * plane + p, s) = x(c, s * plane + p);

  Matrix feats = projection_.forward(flat).array().tanh().matrix();
  if (cache_out) {
    const auto& last = cache->blocks.back();
    cache->last_conv = last.activation;
    cache->last_conv_height = last.height;
    cache->last_conv_width = last.width;
    cache->flat = std::move(flat);
    cache->features = feats;
    *cache_out = std::move(cache);
  }
  return feats;
}

void ConvExtractor::backward(const ExtractorCache& base, const Matrix& dh, FeatureExtractor& grad_base,
                             FeatureMap* d_last_conv) const {
  const auto& cache = dynamic_cast<const Cache&>(base);
  auto& grad = dynamic_cast<ConvExtractor&>(grad_base);
  const std::size_t n = cache.n;

  const Matrix dz = (dh.array() * (1.0 - cache.features.array().square())).matrix();
  Matrix dflat = projection_.backward(cache.flat, dz, grad.projection_);

  const auto& last = cache.blocks.back();
  const std::size_t plane = (last.height / 2) * (last.width / 2);
  const auto channels = static_cast<std::size_t>(last.activation.rows());
  FeatureMap dx(channels, n * plane);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t p = 0; p < plane; ++p) dx(c, s * plane + p) = dflat(c * plane + p, s);

  for (std::size_t k = convs_.size(); k-- > 0;) {
    const auto& b = cache.blocks[k];
    FeatureMap dz = max_pool2_backward(dx, b.argmax, static_cast<std::size_t>(b.activation.cols()));
    if (k + 1 == convs_.size() && d_last_conv) *d_last_conv = dz;
    dz.array() *= (b.activation.array() > 0.0).cast<double>();
    grad.convs_[k].weight.noalias() += dz * b.cols.transpose();
    grad.convs_[k].bias.col(0) += dz.rowwise().sum();
    if (k > 0) {
      FeatureMap dcols = convs_[k].weight.transpose() * dz;
      dx = col2im3x3(dcols, convs_[k].in_channels(), n, b.height, b.width);
    }
  }
}

std::vector<NamedParam> ConvExtractor::parameters() {
  std::vector<NamedParam> out;
  for (std::size_t k = 0; k < convs_.size(); ++k)
    convs_[k].append_params("extractor.conv" + std::to_string(k), out);
  projection_.append_params("extractor.projection", out);
  return out;
}

Matrix gradient_reversal_backward(const Matrix& upstream, double coeff) {
  return -coeff * upstream;
}

double grl_ramp(double progress) { return 2.0 / (1.0 + std::exp(-10.0 * progress)) - 1.0; }

OutputGradients OutputGradients::zeros(std::size_t num_labels, std::size_t n) {
  OutputGradients g;
  g.y = Matrix::Zero(num_labels, n);
  g.d_g = Vector::Zero(n);
  g.d_c = Vector::Zero(n);
  g.r = Vector::Zero(n);
  return g;
}

Model::Model(const ModelConfig& config, std::uint64_t seed)
    : Model(config, std::make_unique<ConvExtractor>(config.extractor), seed) {}

Model::Model(const ModelConfig& config, std::unique_ptr<FeatureExtractor> extractor,
             std::uint64_t seed)
    : classifier(config.extractor.feature_dim, config.num_labels),
      dg_head(config.extractor.feature_dim, config.hidden_dim),
      dc_head(config.extractor.feature_dim, config.hidden_dim),
      r_head(config.extractor.feature_dim, config.hidden_dim),
      config_(config),
      extractor_(std::move(extractor)) {
  if (config.num_labels == 0) throw InvalidInput("model needs at least one label");
  if (config.hidden_dim == 0) throw InvalidInput("hidden_dim must be positive");
  if (extractor_->feature_dim() != config.extractor.feature_dim)
    throw InvalidInput("extractor feature_dim does not match model config");
  std::mt19937_64 rng(seed);
  extractor_->init(rng);
  classifier.init(rng);
  dg_head.init(rng);
  dc_head.init(rng);
  r_head.init(rng);
}

Model::Model(const Model& other)
    : grl_coeff(other.grl_coeff),
      classifier(other.classifier),
      dg_head(other.dg_head),
      dc_head(other.dc_head),
      r_head(other.r_head),
      config_(other.config_),
      extractor_(other.extractor_ ? other.extractor_->clone() : nullptr) {}

Model& Model::operator=(const Model& other) {
  if (this != &other) {
    Model tmp(other);
    *this = std::move(tmp);
  }
  return *this;
}

Model Model::zeros_like() const {
  Model z(*this);
  for (auto& p : z.parameters()) p.value->setZero();
  return z;
}

Matrix Model::forward_features(std::span<const Image* const> images) const {
  return extractor_->forward(images, nullptr);
}

namespace {

Matrix sigmoid_of(const Matrix& z) {
  return z.unaryExpr([](double v) { return sigmoid(v); });
}

void check_features(const Matrix& h, std::size_t dim) {
  if (static_cast<std::size_t>(h.rows()) != dim)
    throw InvalidInput("feature length " + std::to_string(h.rows()) + " != feature_dim " +
                       std::to_string(dim));
}

}  // namespace

Matrix Model::classify(const Matrix& h) const {
  check_features(h, feature_dim());
  return sigmoid_of(classifier.forward(h));
}

Vector Model::discriminate_general(const Matrix& h) const {
  check_features(h, feature_dim());
  return sigmoid_of(dg_head.forward(gradient_reversal(h), nullptr)).row(0).transpose();
}

Vector Model::discriminate_common(const Matrix& h) const {
  check_features(h, feature_dim());
  return sigmoid_of(dc_head.forward(gradient_reversal(h), nullptr)).row(0).transpose();
}

Vector Model::recognize(const Matrix& h) const {
  check_features(h, feature_dim());
  return sigmoid_of(r_head.forward(h, nullptr)).row(0).transpose();
}

ForwardTrace Model::forward(std::span<const Image* const> images) const {
  ForwardTrace t;
  t.h = extractor_->forward(images, &t.extractor_cache);
  t.y_logit = classifier.forward(t.h);
  t.y_hat = sigmoid_of(t.y_logit);
  const Matrix& hr = gradient_reversal(t.h);
  t.d_g_logit = dg_head.forward(hr, &t.dg_cache).row(0).transpose();
  t.d_c_logit = dc_head.forward(hr, &t.dc_cache).row(0).transpose();
  t.r_logit = r_head.forward(t.h, &t.r_cache).row(0).transpose();
  t.d_g_hat = sigmoid_of(t.d_g_logit);
  t.d_c_hat = sigmoid_of(t.d_c_logit);
  t.r_hat = sigmoid_of(t.r_logit);
  return t;
}

void Model::backward(const ForwardTrace& t, const OutputGradients& dout, Model& grad,
                     const BackwardOptions& options) const {
  Matrix dh = classifier.backward(t.h, dout.y, grad.classifier);

  Matrix dr = r_head.backward(t.h, t.r_cache, dout.r.transpose(), grad.r_head);
  if (!options.detach_recognizer) dh += dr;

  Matrix dd = dg_head.backward(t.h, t.dg_cache, dout.d_g.transpose(), grad.dg_head);
  dd += dc_head.backward(t.h, t.dc_cache, dout.d_c.transpose(), grad.dc_head);
  if (options.wiring == ReversalWiring::reversed) {
    dh += gradient_reversal_backward(dd, grl_coeff);
  } else {
    dh += dd;
  }
  extractor_->backward(*t.extractor_cache, dh, *grad.extractor_);
}

std::vector<NamedParam> Model::parameters() {
  std::vector<NamedParam> out = extractor_->parameters();
  classifier.append_params("classifier", out);
  dg_head.append_params("dg_head", out);
  dc_head.append_params("dc_head", out);
  r_head.append_params("r_head", out);
  return out;
}

std::vector<const Image*> image_pointers(std::span<const Image> images) {
  std::vector<const Image*> out;
  out.reserve(images.size());
  for (const auto& i : images) out.push_back(&i);
  return out;
}

}  // namespace soda
