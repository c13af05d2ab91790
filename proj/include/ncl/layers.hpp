#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ncl/matrix.hpp"
#include "ncl/rng.hpp"

namespace ncl {

// A layer is a stateless description; its parameters live in a flat buffer
// owned by whoever holds the weights (online and momentum copies share one
// architecture). Batches are rows; images are flattened channel-major.
class Layer {
 public:
  virtual ~Layer() = default;

  virtual std::size_t in_features() const = 0;
  virtual std::size_t out_features() const = 0;
  virtual std::size_t param_count() const { return 0; }
  virtual void init(std::span<double> /*params*/, Rng& /*rng*/) const {}

  virtual void forward(std::span<const double> params, const Matrix& in, Matrix& out) const = 0;
  // Accumulates into grad_params; writes grad_in when non-null.
  virtual void backward(std::span<const double> params, const Matrix& in, const Matrix& out, const Matrix& grad_out,
                        Matrix* grad_in, std::span<double> grad_params) const = 0;

  virtual std::string describe() const = 0;
  virtual std::unique_ptr<Layer> clone() const = 0;
};

// y = x W^T + b, W is out x in.
class Linear final : public Layer {
 public:
  Linear(std::size_t in, std::size_t out) : in_(in), out_(out) {}
  std::size_t in_features() const override { return in_; }
  std::size_t out_features() const override { return out_; }
  std::size_t param_count() const override { return out_ * in_ + out_; }
  void init(std::span<double> params, Rng& rng) const override;
  void forward(std::span<const double> params, const Matrix& in, Matrix& out) const override;
  void backward(std::span<const double> params, const Matrix& in, const Matrix& out, const Matrix& grad_out,
                Matrix* grad_in, std::span<double> grad_params) const override;
  std::string describe() const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Linear>(*this); }

 private:
  std::size_t in_, out_;
};

class Relu final : public Layer {
 public:
  explicit Relu(std::size_t width) : width_(width) {}
  std::size_t in_features() const override { return width_; }
  std::size_t out_features() const override { return width_; }
  void forward(std::span<const double> params, const Matrix& in, Matrix& out) const override;
  void backward(std::span<const double> params, const Matrix& in, const Matrix& out, const Matrix& grad_out,
                Matrix* grad_in, std::span<double> grad_params) const override;
  std::string describe() const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Relu>(*this); }

 private:
  std::size_t width_;
};

// Rows scaled to unit L2 norm.
class L2Normalize final : public Layer {
 public:
  explicit L2Normalize(std::size_t width) : width_(width) {}
  std::size_t in_features() const override { return width_; }
  std::size_t out_features() const override { return width_; }
  void forward(std::span<const double> params, const Matrix& in, Matrix& out) const override;
  void backward(std::span<const double> params, const Matrix& in, const Matrix& out, const Matrix& grad_out,
                Matrix* grad_in, std::span<double> grad_params) const override;
  std::string describe() const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<L2Normalize>(*this); }

 private:
  std::size_t width_;
};

// y_c = scale * cos(w_c, x); no bias.
class CosineLinear final : public Layer {
 public:
  CosineLinear(std::size_t in, std::size_t out, double scale) : in_(in), out_(out), scale_(scale) {}
  std::size_t in_features() const override { return in_; }
  std::size_t out_features() const override { return out_; }
  std::size_t param_count() const override { return out_ * in_; }
  void init(std::span<double> params, Rng& rng) const override;
  void forward(std::span<const double> params, const Matrix& in, Matrix& out) const override;
  void backward(std::span<const double> params, const Matrix& in, const Matrix& out, const Matrix& grad_out,
                Matrix* grad_in, std::span<double> grad_params) const override;
  std::string describe() const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<CosineLinear>(*this); }

 private:
  std::size_t in_, out_;
  double scale_;
};

struct ImageShape {
  std::size_t channels, height, width;
  std::size_t size() const { return channels * height * width; }
};

// Square-kernel 2-D convolution via im2col.
class Conv2d final : public Layer {
 public:
  Conv2d(ImageShape input, std::size_t out_channels, std::size_t kernel, std::size_t stride, std::size_t padding);
  std::size_t in_features() const override { return in_.size(); }
  std::size_t out_features() const override { return output_shape().size(); }
  std::size_t param_count() const override;
  void init(std::span<double> params, Rng& rng) const override;
  void forward(std::span<const double> params, const Matrix& in, Matrix& out) const override;
  void backward(std::span<const double> params, const Matrix& in, const Matrix& out, const Matrix& grad_out,
                Matrix* grad_in, std::span<double> grad_params) const override;
  std::string describe() const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv2d>(*this); }

  ImageShape output_shape() const;

 private:
  void im2col(std::span<const double> image, std::vector<double>& cols) const;
  void col2im_add(const std::vector<double>& cols, std::span<double> image) const;

  ImageShape in_;
  std::size_t out_channels_, kernel_, stride_, padding_;
};

class GlobalAvgPool final : public Layer {
 public:
  explicit GlobalAvgPool(ImageShape input) : in_(input) {}
  std::size_t in_features() const override { return in_.size(); }
  std::size_t out_features() const override { return in_.channels; }
  void forward(std::span<const double> params, const Matrix& in, Matrix& out) const override;
  void backward(std::span<const double> params, const Matrix& in, const Matrix& out, const Matrix& grad_out,
                Matrix* grad_in, std::span<double> grad_params) const override;
  std::string describe() const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<GlobalAvgPool>(*this); }

 private:
  ImageShape in_;
};

// Activations recorded by a forward pass, needed for backward.
struct Tape {
  std::vector<Matrix> activations;  // [input, layer 1 output, ..., output]
  const Matrix& output() const { return activations.back(); }
};

class Sequential {
 public:
  Sequential() = default;
  explicit Sequential(std::size_t width) : width_(width) {}
  Sequential(const Sequential& other);
  Sequential& operator=(const Sequential& other);
  Sequential(Sequential&&) noexcept = default;
  Sequential& operator=(Sequential&&) noexcept = default;

  void add(std::unique_ptr<Layer> layer);

  std::size_t in_features() const;
  std::size_t out_features() const;
  std::size_t param_count() const;
  std::size_t num_layers() const noexcept { return layers_.size(); }
  const Layer& layer(std::size_t i) const { return *layers_[i]; }

  void init(std::span<double> params, Rng& rng) const;
  Matrix forward(std::span<const double> params, const Matrix& in) const;
  void forward(std::span<const double> params, const Matrix& in, Tape& tape) const;
  void backward(std::span<const double> params, const Tape& tape, const Matrix& grad_out,
                std::span<double> grad_params, Matrix* grad_in) const;

  std::string describe() const;

 private:
  std::size_t width_ = 0;  // passthrough width when there are no layers
  std::vector<std::unique_ptr<Layer>> layers_;
};

}  // namespace ncl
