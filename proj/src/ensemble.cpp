#include "ncl/ensemble.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <string_view>

#include "ncl/error.hpp"
#include "ncl/kernels.hpp"

namespace ncl {

namespace {

std::vector<std::size_t> parse_widths(std::string_view text, std::string_view what) {
  std::vector<std::size_t> out;
  while (!text.empty()) {
    const auto comma = text.find(',');
    const auto piece = text.substr(0, comma);
    std::size_t v = 0;
    const auto [ptr, ec] = std::from_chars(piece.data(), piece.data() + piece.size(), v);
    require(ec == std::errc() && ptr == piece.data() + piece.size() && v > 0, ErrorCode::kInvalidArgument,
            "bad width '" + std::string(piece) + "' in " + std::string(what));
    out.push_back(v);
    if (comma == std::string_view::npos) break;
    text.remove_prefix(comma + 1);
  }
  require(!out.empty(), ErrorCode::kInvalidArgument, std::string(what) + " needs at least one width");
  return out;
}

bool starts_with(std::string_view s, std::string_view prefix) { return s.substr(0, prefix.size()) == prefix; }

Sequential build_encoder(std::string_view spec, std::span<const std::size_t> shape) {
  std::size_t in = 1;
  for (auto s : shape) in *= s;
  const bool image = shape.size() == 3;
  if (spec == "auto") spec = image ? "conv:16,16,32,32" : "mlp:128,128";
  Sequential net(in);
  if (spec == "identity") return net;
  if (starts_with(spec, "mlp:")) {
    std::size_t width = in;
    for (std::size_t h : parse_widths(spec.substr(4), "encoder_spec")) {
      net.add(std::make_unique<Linear>(width, h));
      net.add(std::make_unique<Relu>(h));
      width = h;
    }
    return net;
  }
  if (starts_with(spec, "conv:")) {
    require(image, ErrorCode::kInvalidArgument, "conv encoder needs {channels,height,width} samples");
    ImageShape cur{shape[0], shape[1], shape[2]};
    std::size_t i = 0;
    for (std::size_t c : parse_widths(spec.substr(5), "encoder_spec")) {
      const std::size_t stride = (i++ % 2 == 1 && cur.height > 1 && cur.width > 1) ? 2 : 1;
      auto conv = std::make_unique<Conv2d>(cur, c, 3, stride, 1);
      cur = conv->output_shape();
      net.add(std::move(conv));
      net.add(std::make_unique<Relu>(cur.size()));
    }
    net.add(std::make_unique<GlobalAvgPool>(cur));
    return net;
  }
  fail(ErrorCode::kInvalidArgument, "unknown encoder_spec '" + std::string(spec) + "'");
}

Sequential build_projection(std::string_view spec, std::size_t in, std::size_t dim) {
  Sequential net(in);
  if (spec == "linear") {
    net.add(std::make_unique<Linear>(in, dim));
  } else if (starts_with(spec, "mlp:")) {
    std::size_t width = in;
    for (std::size_t h : parse_widths(spec.substr(4), "projection_spec")) {
      net.add(std::make_unique<Linear>(width, h));
      net.add(std::make_unique<Relu>(h));
      width = h;
    }
    net.add(std::make_unique<Linear>(width, dim));
  } else {
    fail(ErrorCode::kInvalidArgument, "unknown projection_spec '" + std::string(spec) + "'");
  }
  net.add(std::make_unique<L2Normalize>(dim));
  return net;
}

constexpr std::size_t kInferenceChunk = 512;

}  // namespace

void EnsembleConfig::validate() const {
  require(num_experts >= 1, ErrorCode::kInvalidArgument, "num_experts must be >= 1");
  require(embedding_dim >= 1, ErrorCode::kInvalidArgument, "embedding_dim must be >= 1");
  require(std::isfinite(ema_momentum) && ema_momentum >= 0.0 && ema_momentum <= 1.0, ErrorCode::kOutOfRange,
          "ema_momentum must lie in [0,1]");
  require(classifier == "linear" || classifier == "cosine", ErrorCode::kInvalidArgument,
          "classifier must be linear or cosine");
  require(cosine_scale > 0.0, ErrorCode::kInvalidArgument, "cosine_scale must be positive");
}

ExpertArchitecture::ExpertArchitecture(const EnsembleConfig& config, std::span<const std::size_t> sample_shape,
                                       std::size_t num_classes) {
  config.validate();
  require(num_classes >= 2, ErrorCode::kInvalidArgument, "need at least two classes");
  encoder_ = build_encoder(config.encoder_spec, sample_shape);
  const std::size_t f = encoder_.out_features();
  classifier_ = Sequential(f);
  if (config.classifier == "cosine") {
    classifier_.add(std::make_unique<CosineLinear>(f, num_classes, config.cosine_scale));
  } else {
    classifier_.add(std::make_unique<Linear>(f, num_classes));
  }
  projection_ = build_projection(config.projection_spec, f, config.embedding_dim);
  enc_n_ = encoder_.param_count();
  cls_n_ = classifier_.param_count();
  proj_n_ = projection_.param_count();
}

std::size_t ExpertArchitecture::param_count() const { return enc_n_ + cls_n_ + proj_n_; }

void ExpertArchitecture::init(std::span<double> params, Rng& rng) const {
  require(params.size() == param_count(), ErrorCode::kShapeMismatch, "parameter buffer size mismatch");
  encoder_.init(encoder_params(params), rng);
  classifier_.init(classifier_params(params), rng);
  projection_.init(projection_params(params), rng);
}

std::string ExpertArchitecture::describe() const {
  return "encoder[" + encoder_.describe() + "] classifier[" + classifier_.describe() + "] projection[" +
         projection_.describe() + "]";
}

void FeatureQueue::push(const Matrix& batch) {
  require(batch.cols() == dim_ || batch.rows() == 0, ErrorCode::kShapeMismatch, "queue dimension mismatch");
  if (capacity_ == 0 || batch.rows() == 0) return;
  const std::size_t incoming = std::min(batch.rows(), capacity_);
  const std::size_t skip = batch.rows() - incoming;
  const std::size_t keep = std::min(size(), capacity_ - incoming);
  Matrix next(keep + incoming, dim_);
  const std::size_t drop = size() - keep;
  std::copy(rows_.data() + drop * dim_, rows_.data() + rows_.size(), next.data());
  std::copy(batch.data() + skip * dim_, batch.data() + batch.size(), next.data() + keep * dim_);
  rows_ = std::move(next);
}

void FeatureQueue::assign(Matrix rows) {
  require(rows.rows() <= capacity_ && (rows.rows() == 0 || rows.cols() == dim_), ErrorCode::kShapeMismatch,
          "queue contents do not fit");
  if (rows.rows() == 0) rows = Matrix(0, dim_);
  rows_ = std::move(rows);
}

Ensemble::Ensemble(const EnsembleConfig& config, std::vector<std::size_t> sample_shape, std::size_t num_classes,
                   std::uint64_t seed)
    : config_(config), sample_shape_(std::move(sample_shape)), arch_(config, sample_shape_, num_classes) {
  const std::size_t n = arch_.param_count();
  for (std::size_t k = 0; k < config_.num_experts; ++k) {
    ExpertState s;
    s.online.assign(n, 0.0);
    Rng rng(seed, "init/" + std::to_string(k));
    arch_.init(s.online, rng);
    s.momentum = s.online;
    s.grad.assign(n, 0.0);
    s.queue = FeatureQueue(config_.queue_size, arch_.embedding_dim());
    experts_.push_back(std::move(s));
  }
}

ExpertBatchOutputs Ensemble::forward(const TwoViewBatch& batch, ForwardCache& cache, bool with_momentum) const {
  require(batch.view_a.cols() == arch_.input_dim(), ErrorCode::kShapeMismatch,
          "batch has " + std::to_string(batch.view_a.cols()) + " features, model expects " +
              std::to_string(arch_.input_dim()));
  require(batch.view_a.rows() == batch.size(), ErrorCode::kShapeMismatch, "batch rows and labels disagree");
  if (with_momentum) {
    require(batch.view_b.rows() == batch.view_a.rows() && batch.view_b.cols() == batch.view_a.cols(),
            ErrorCode::kShapeMismatch, "views have different shapes");
  }
  ExpertBatchOutputs out;
  cache.experts.resize(experts_.size());
  for (std::size_t k = 0; k < experts_.size(); ++k) {
    const auto& e = experts_[k];
    auto& c = cache.experts[k];
    std::span<const double> p = e.online;
    arch_.encoder().forward(arch_.encoder_params(p), batch.view_a, c.encoder);
    arch_.classifier().forward(arch_.classifier_params(p), c.encoder.output(), c.classifier);
    out.logits.push_back(c.classifier.output());
    if (with_momentum) {
      arch_.projection().forward(arch_.projection_params(p), c.encoder.output(), c.projection);
      out.online_embeddings.push_back(c.projection.output());
      std::span<const double> mp = e.momentum;
      const Matrix feat = arch_.encoder().forward(arch_.encoder_params(mp), batch.view_b);
      out.momentum_embeddings.push_back(arch_.projection().forward(arch_.projection_params(mp), feat));
    } else {
      c.projection.activations.clear();
    }
  }
  return out;
}

void Ensemble::backward(const ForwardCache& cache, std::span<const Matrix> grad_logits,
                        std::span<const Matrix> grad_embeddings) {
  require(grad_logits.size() == experts_.size() && cache.experts.size() == experts_.size(),
          ErrorCode::kShapeMismatch, "gradient count does not match experts");
  Matrix g_feat, g_proj;
  for (std::size_t k = 0; k < experts_.size(); ++k) {
    auto& e = experts_[k];
    const auto& c = cache.experts[k];
    std::span<const double> p = e.online;
    std::span<double> g = e.grad;
    arch_.classifier().backward(arch_.classifier_params(p), c.classifier, grad_logits[k],
                                arch_.classifier_params(g), &g_feat);
    if (!grad_embeddings.empty() && !c.projection.activations.empty()) {
      arch_.projection().backward(arch_.projection_params(p), c.projection, grad_embeddings[k],
                                  arch_.projection_params(g), &g_proj);
      kernels::active().axpy(1.0, g_proj.data(), g_feat.data(), g_feat.size());
    }
    arch_.encoder().backward(arch_.encoder_params(p), c.encoder, g_feat, arch_.encoder_params(g), nullptr);
  }
}

void Ensemble::zero_grad() {
  for (auto& e : experts_) std::fill(e.grad.begin(), e.grad.end(), 0.0);
}

Matrix Ensemble::expert_logits(std::size_t k, const Matrix& samples) const {
  require(k < experts_.size(), ErrorCode::kOutOfRange, "expert index out of range");
  require(samples.cols() == arch_.input_dim(), ErrorCode::kShapeMismatch, "sample dimension mismatch");
  std::span<const double> p = experts_[k].online;
  Matrix out(samples.rows(), arch_.num_classes());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < samples.rows(); start += kInferenceChunk) {
    const std::size_t end = std::min(samples.rows(), start + kInferenceChunk);
    idx.resize(end - start);
    for (std::size_t i = start; i < end; ++i) idx[i - start] = i;
    const Matrix feat = arch_.encoder().forward(arch_.encoder_params(p), gather_rows(samples, idx));
    const Matrix z = arch_.classifier().forward(arch_.classifier_params(p), feat);
    std::copy(z.data(), z.data() + z.size(), out.row(start).data());
  }
  return out;
}

std::vector<Matrix> Ensemble::all_logits(const Matrix& samples) const {
  std::vector<Matrix> out;
  for (std::size_t k = 0; k < experts_.size(); ++k) out.push_back(expert_logits(k, samples));
  return out;
}

void ema_update(ExpertState& state, double m) {
  require(std::isfinite(m) && m >= 0.0 && m <= 1.0, ErrorCode::kOutOfRange, "EMA momentum must lie in [0,1]");
  require(state.online.size() == state.momentum.size(), ErrorCode::kShapeMismatch,
          "online and momentum parameters differ in shape");
  kernels::active().ema(state.momentum.data(), state.online.data(), m, state.online.size());
}

void enqueue(ExpertState& state, const Matrix& momentum_embeddings) {
  const auto& kt = kernels::active();
  for (std::size_t i = 0; i < momentum_embeddings.rows(); ++i) {
    const auto r = momentum_embeddings.row(i);
    const double norm = std::sqrt(kt.dot(r.data(), r.data(), r.size()));
    require(std::abs(norm - 1.0) <= 1e-5, ErrorCode::kNotNormalized,
            "queue row " + std::to_string(i) + " has norm " + std::to_string(norm));
  }
  state.queue.push(momentum_embeddings);
}

Matrix ensemble_logits(std::span<const Matrix> per_expert_logits) {
  require(!per_expert_logits.empty(), ErrorCode::kInvalidArgument, "no expert logits");
  Matrix mean(per_expert_logits[0].rows(), per_expert_logits[0].cols());
  for (const auto& z : per_expert_logits) {
    require(z.rows() == mean.rows() && z.cols() == mean.cols(), ErrorCode::kShapeMismatch,
            "expert logits differ in shape");
    for (std::size_t i = 0; i < z.size(); ++i) mean.data()[i] += z.data()[i];
  }
  const double inv = 1.0 / static_cast<double>(per_expert_logits.size());
  for (double& v : mean.flat()) v *= inv;
  return mean;
}

Matrix single_expert_predict(const Ensemble& ensemble, std::size_t k, const Matrix& samples) {
  return ensemble.expert_logits(k, samples);
}

}  // namespace ncl
