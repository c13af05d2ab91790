#include "ncl/layers.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ncl/error.hpp"
#include "ncl/kernels.hpp"

namespace ncl {

namespace {

constexpr double kNormFloor = 1e-12;

void check_input(const Layer& layer, const Matrix& in) {
  require(in.cols() == layer.in_features(), ErrorCode::kShapeMismatch,
          layer.describe() + " expects " + std::to_string(layer.in_features()) + " features, got " +
              std::to_string(in.cols()));
}

void uniform_fill(std::span<double> values, double bound, Rng& rng) {
  for (double& v : values) v = rng.uniform(-bound, bound);
}

}  // namespace

void Linear::init(std::span<double> params, Rng& rng) const {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_));
  uniform_fill(params, bound, rng);
}

void Linear::forward(std::span<const double> params, const Matrix& in, Matrix& out) const {
  check_input(*this, in);
  const auto& kt = kernels::active();
  out.resize(in.rows(), out_);
  const double* w = params.data();
  const double* b = params.data() + out_ * in_;
  kt.gemm_nt(in.rows(), out_, in_, in.data(), w, out.data(), 0.0);
  for (std::size_t i = 0; i < in.rows(); ++i) kt.axpy(1.0, b, out.row(i).data(), out_);
}

void Linear::backward(std::span<const double> params, const Matrix& in, const Matrix& /*out*/,
                      const Matrix& grad_out, Matrix* grad_in, std::span<double> grad_params) const {
  const auto& kt = kernels::active();
  const std::size_t batch = in.rows();
  kt.gemm_tn(out_, in_, batch, grad_out.data(), in.data(), grad_params.data(), 1.0);
  double* gb = grad_params.data() + out_ * in_;
  for (std::size_t i = 0; i < batch; ++i) kt.axpy(1.0, grad_out.row(i).data(), gb, out_);
  if (grad_in != nullptr) {
    grad_in->resize(batch, in_);
    kt.gemm_nn(batch, in_, out_, grad_out.data(), params.data(), grad_in->data(), 0.0);
  }
}

std::string Linear::describe() const { return "linear(" + std::to_string(in_) + "->" + std::to_string(out_) + ")"; }

void Relu::forward(std::span<const double>, const Matrix& in, Matrix& out) const {
  check_input(*this, in);
  out.resize(in.rows(), in.cols());
  kernels::active().relu(in.data(), out.data(), in.size());
}

void Relu::backward(std::span<const double>, const Matrix& /*in*/, const Matrix& out, const Matrix& grad_out,
                    Matrix* grad_in, std::span<double>) const {
  if (grad_in == nullptr) return;
  grad_in->resize(out.rows(), out.cols());
  kernels::active().relu_backward(out.data(), grad_out.data(), grad_in->data(), out.size());
}

std::string Relu::describe() const { return "relu"; }

void L2Normalize::forward(std::span<const double>, const Matrix& in, Matrix& out) const {
  check_input(*this, in);
  const auto& kt = kernels::active();
  out = in;
  for (std::size_t i = 0; i < in.rows(); ++i) {
    auto r = out.row(i);
    const double norm = std::max(std::sqrt(kt.dot(r.data(), r.data(), r.size())), kNormFloor);
    for (double& v : r) v /= norm;
  }
}

void L2Normalize::backward(std::span<const double>, const Matrix& in, const Matrix& out, const Matrix& grad_out,
                           Matrix* grad_in, std::span<double>) const {
  if (grad_in == nullptr) return;
  const auto& kt = kernels::active();
  grad_in->resize(in.rows(), in.cols());
  for (std::size_t i = 0; i < in.rows(); ++i) {
    const auto x = in.row(i);
    const auto y = out.row(i);
    const auto g = grad_out.row(i);
    auto gi = grad_in->row(i);
    const double norm = std::max(std::sqrt(kt.dot(x.data(), x.data(), x.size())), kNormFloor);
    const double proj = kt.dot(y.data(), g.data(), y.size());
    for (std::size_t j = 0; j < x.size(); ++j) gi[j] = (g[j] - y[j] * proj) / norm;
  }
}

std::string L2Normalize::describe() const { return "l2_normalize"; }

void CosineLinear::init(std::span<double> params, Rng& rng) const {
  uniform_fill(params, 1.0 / std::sqrt(static_cast<double>(in_)), rng);
}

void CosineLinear::forward(std::span<const double> params, const Matrix& in, Matrix& out) const {
  check_input(*this, in);
  const auto& kt = kernels::active();
  out.resize(in.rows(), out_);
  std::vector<double> wnorm(out_);
  for (std::size_t c = 0; c < out_; ++c) {
    const double* w = params.data() + c * in_;
    wnorm[c] = std::max(std::sqrt(kt.dot(w, w, in_)), kNormFloor);
  }
  kt.gemm_nt(in.rows(), out_, in_, in.data(), params.data(), out.data(), 0.0);
  for (std::size_t i = 0; i < in.rows(); ++i) {
    const double fnorm = std::max(std::sqrt(kt.dot(in.row(i).data(), in.row(i).data(), in_)), kNormFloor);
    auto r = out.row(i);
    for (std::size_t c = 0; c < out_; ++c) r[c] = scale_ * r[c] / (wnorm[c] * fnorm);
  }
}

void CosineLinear::backward(std::span<const double> params, const Matrix& in, const Matrix& out,
                            const Matrix& grad_out, Matrix* grad_in, std::span<double> grad_params) const {
  const auto& kt = kernels::active();
  std::vector<double> wnorm(out_);
  for (std::size_t c = 0; c < out_; ++c) {
    const double* w = params.data() + c * in_;
    wnorm[c] = std::max(std::sqrt(kt.dot(w, w, in_)), kNormFloor);
  }
  if (grad_in != nullptr) grad_in->resize(in.rows(), in_);
  std::vector<double> fhat(in_);
  for (std::size_t i = 0; i < in.rows(); ++i) {
    const auto f = in.row(i);
    const double fnorm = std::max(std::sqrt(kt.dot(f.data(), f.data(), in_)), kNormFloor);
    for (std::size_t j = 0; j < in_; ++j) fhat[j] = f[j] / fnorm;
    for (std::size_t c = 0; c < out_; ++c) {
      const double g = grad_out(i, c);
      if (g == 0.0) continue;
      const double cosine = out(i, c) / scale_;
      const double* w = params.data() + c * in_;
      double* gw = grad_params.data() + c * in_;
      const double cw = scale_ * g / wnorm[c];
      for (std::size_t j = 0; j < in_; ++j) {
        const double what = w[j] / wnorm[c];
        gw[j] += cw * (fhat[j] - cosine * what);
        if (grad_in != nullptr) (*grad_in)(i, j) += scale_ * g / fnorm * (what - cosine * fhat[j]);
      }
    }
  }
}

std::string CosineLinear::describe() const {
  return "cosine(" + std::to_string(in_) + "->" + std::to_string(out_) + ")";
}

Conv2d::Conv2d(ImageShape input, std::size_t out_channels, std::size_t kernel, std::size_t stride,
               std::size_t padding)
    : in_(input), out_channels_(out_channels), kernel_(kernel), stride_(stride), padding_(padding) {
  require(kernel >= 1 && stride >= 1, ErrorCode::kInvalidArgument, "conv kernel and stride must be positive");
  require(input.height + 2 * padding >= kernel && input.width + 2 * padding >= kernel, ErrorCode::kInvalidArgument,
          "conv kernel larger than padded input");
}

ImageShape Conv2d::output_shape() const {
  return {out_channels_, (in_.height + 2 * padding_ - kernel_) / stride_ + 1,
          (in_.width + 2 * padding_ - kernel_) / stride_ + 1};
}

std::size_t Conv2d::param_count() const { return out_channels_ * in_.channels * kernel_ * kernel_ + out_channels_; }

void Conv2d::init(std::span<double> params, Rng& rng) const {
  uniform_fill(params, 1.0 / std::sqrt(static_cast<double>(in_.channels * kernel_ * kernel_)), rng);
}

void Conv2d::im2col(std::span<const double> image, std::vector<double>& cols) const {
  const ImageShape o = output_shape();
  const std::size_t hw = o.height * o.width;
  cols.assign(in_.channels * kernel_ * kernel_ * hw, 0.0);
  for (std::size_t c = 0; c < in_.channels; ++c) {
    for (std::size_t ky = 0; ky < kernel_; ++ky) {
      for (std::size_t kx = 0; kx < kernel_; ++kx) {
        double* dst = cols.data() + ((c * kernel_ + ky) * kernel_ + kx) * hw;
        for (std::size_t oy = 0; oy < o.height; ++oy) {
          const long iy = static_cast<long>(oy * stride_ + ky) - static_cast<long>(padding_);
          if (iy < 0 || iy >= static_cast<long>(in_.height)) continue;
          for (std::size_t ox = 0; ox < o.width; ++ox) {
            const long ix = static_cast<long>(ox * stride_ + kx) - static_cast<long>(padding_);
            if (ix < 0 || ix >= static_cast<long>(in_.width)) continue;
            dst[oy * o.width + ox] =
                image[(c * in_.height + static_cast<std::size_t>(iy)) * in_.width + static_cast<std::size_t>(ix)];
          }
        }
      }
    }
  }
}

void Conv2d::col2im_add(const std::vector<double>& cols, std::span<double> image) const {
  const ImageShape o = output_shape();
  const std::size_t hw = o.height * o.width;
  for (std::size_t c = 0; c < in_.channels; ++c) {
    for (std::size_t ky = 0; ky < kernel_; ++ky) {
      for (std::size_t kx = 0; kx < kernel_; ++kx) {
        const double* src = cols.data() + ((c * kernel_ + ky) * kernel_ + kx) * hw;
        for (std::size_t oy = 0; oy < o.height; ++oy) {
          const long iy = static_cast<long>(oy * stride_ + ky) - static_cast<long>(padding_);
          if (iy < 0 || iy >= static_cast<long>(in_.height)) continue;
          for (std::size_t ox = 0; ox < o.width; ++ox) {
            const long ix = static_cast<long>(ox * stride_ + kx) - static_cast<long>(padding_);
            if (ix < 0 || ix >= static_cast<long>(in_.width)) continue;
            image[(c * in_.height + static_cast<std::size_t>(iy)) * in_.width + static_cast<std::size_t>(ix)] +=
                src[oy * o.width + ox];
          }
        }
      }
    }
  }
}

void Conv2d::forward(std::span<const double> params, const Matrix& in, Matrix& out) const {
  check_input(*this, in);
  const auto& kt = kernels::active();
  const ImageShape o = output_shape();
  const std::size_t hw = o.height * o.width;
  const std::size_t patch = in_.channels * kernel_ * kernel_;
  const double* bias = params.data() + out_channels_ * patch;
  out.resize(in.rows(), o.size());
  std::vector<double> cols;
  for (std::size_t i = 0; i < in.rows(); ++i) {
    im2col(in.row(i), cols);
    double* dst = out.row(i).data();
    kt.gemm_nn(out_channels_, hw, patch, params.data(), cols.data(), dst, 0.0);
    for (std::size_t c = 0; c < out_channels_; ++c) {
      for (std::size_t p = 0; p < hw; ++p) dst[c * hw + p] += bias[c];
    }
  }
}

void Conv2d::backward(std::span<const double> params, const Matrix& in, const Matrix& /*out*/,
                      const Matrix& grad_out, Matrix* grad_in, std::span<double> grad_params) const {
  const auto& kt = kernels::active();
  const ImageShape o = output_shape();
  const std::size_t hw = o.height * o.width;
  const std::size_t patch = in_.channels * kernel_ * kernel_;
  double* gbias = grad_params.data() + out_channels_ * patch;
  if (grad_in != nullptr) grad_in->resize(in.rows(), in_.size());
  std::vector<double> cols, dcols(patch * hw);
  for (std::size_t i = 0; i < in.rows(); ++i) {
    im2col(in.row(i), cols);
    const double* g = grad_out.row(i).data();
    kt.gemm_nt(out_channels_, patch, hw, g, cols.data(), grad_params.data(), 1.0);
    for (std::size_t c = 0; c < out_channels_; ++c) {
      double s = 0.0;
      for (std::size_t p = 0; p < hw; ++p) s += g[c * hw + p];
      gbias[c] += s;
    }
    if (grad_in != nullptr) {
      kt.gemm_tn(patch, hw, out_channels_, params.data(), g, dcols.data(), 0.0);
      col2im_add(dcols, grad_in->row(i));
    }
  }
}

std::string Conv2d::describe() const {
  return "conv" + std::to_string(kernel_) + "x" + std::to_string(kernel_) + "(" + std::to_string(in_.channels) +
         "->" + std::to_string(out_channels_) + ",stride=" + std::to_string(stride_) + ")";
}

void GlobalAvgPool::forward(std::span<const double>, const Matrix& in, Matrix& out) const {
  check_input(*this, in);
  const std::size_t hw = in_.height * in_.width;
  out.resize(in.rows(), in_.channels);
  for (std::size_t i = 0; i < in.rows(); ++i) {
    const auto x = in.row(i);
    for (std::size_t c = 0; c < in_.channels; ++c) {
      double s = 0.0;
      for (std::size_t p = 0; p < hw; ++p) s += x[c * hw + p];
      out(i, c) = s / static_cast<double>(hw);
    }
  }
}

void GlobalAvgPool::backward(std::span<const double>, const Matrix& in, const Matrix&, const Matrix& grad_out,
                             Matrix* grad_in, std::span<double>) const {
  if (grad_in == nullptr) return;
  const std::size_t hw = in_.height * in_.width;
  grad_in->resize(in.rows(), in_.size());
  for (std::size_t i = 0; i < in.rows(); ++i) {
    auto gi = grad_in->row(i);
    for (std::size_t c = 0; c < in_.channels; ++c) {
      const double g = grad_out(i, c) / static_cast<double>(hw);
      for (std::size_t p = 0; p < hw; ++p) gi[c * hw + p] = g;
    }
  }
}

std::string GlobalAvgPool::describe() const { return "global_avg_pool"; }

Sequential::Sequential(const Sequential& other) : width_(other.width_) {
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

Sequential& Sequential::operator=(const Sequential& other) {
  if (this != &other) {
    Sequential copy(other);
    *this = std::move(copy);
  }
  return *this;
}

void Sequential::add(std::unique_ptr<Layer> layer) {
  if (!layers_.empty()) {
    require(layers_.back()->out_features() == layer->in_features(), ErrorCode::kShapeMismatch,
            "cannot chain " + layers_.back()->describe() + " into " + layer->describe());
  }
  layers_.push_back(std::move(layer));
}

std::size_t Sequential::in_features() const { return layers_.empty() ? width_ : layers_.front()->in_features(); }
std::size_t Sequential::out_features() const { return layers_.empty() ? width_ : layers_.back()->out_features(); }

std::size_t Sequential::param_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l->param_count();
  return n;
}

void Sequential::init(std::span<double> params, Rng& rng) const {
  std::size_t offset = 0;
  for (const auto& l : layers_) {
    l->init(params.subspan(offset, l->param_count()), rng);
    offset += l->param_count();
  }
}

Matrix Sequential::forward(std::span<const double> params, const Matrix& in) const {
  Matrix cur = in, next;
  std::size_t offset = 0;
  for (const auto& l : layers_) {
    l->forward(params.subspan(offset, l->param_count()), cur, next);
    offset += l->param_count();
    std::swap(cur, next);
  }
  return cur;
}

void Sequential::forward(std::span<const double> params, const Matrix& in, Tape& tape) const {
  tape.activations.resize(layers_.size() + 1);
  tape.activations[0] = in;
  std::size_t offset = 0;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = *layers_[i];
    l.forward(params.subspan(offset, l.param_count()), tape.activations[i], tape.activations[i + 1]);
    offset += l.param_count();
  }
}

void Sequential::backward(std::span<const double> params, const Tape& tape, const Matrix& grad_out,
                          std::span<double> grad_params, Matrix* grad_in) const {
  require(tape.activations.size() == layers_.size() + 1, ErrorCode::kInvalidArgument, "tape does not match network");
  if (layers_.empty()) {
    if (grad_in != nullptr) *grad_in = grad_out;
    return;
  }
  std::vector<std::size_t> offsets(layers_.size());
  std::size_t offset = 0;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    offsets[i] = offset;
    offset += layers_[i]->param_count();
  }
  Matrix g = grad_out, gprev;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    const auto& l = *layers_[i];
    Matrix* target = (i > 0 || grad_in != nullptr) ? &gprev : nullptr;
    l.backward(params.subspan(offsets[i], l.param_count()), tape.activations[i], tape.activations[i + 1], g, target,
               grad_params.subspan(offsets[i], l.param_count()));
    if (target == nullptr) break;
    std::swap(g, gprev);
  }
  if (grad_in != nullptr) *grad_in = std::move(g);
}

std::string Sequential::describe() const {
  if (layers_.empty()) return "identity";
  std::string out;
  for (const auto& l : layers_) {
    if (!out.empty()) out += " > ";
    out += l->describe();
  }
  return out;
}

}  // namespace ncl
