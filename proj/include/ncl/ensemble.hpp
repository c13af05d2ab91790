#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ncl/batcher.hpp"
#include "ncl/layers.hpp"
#include "ncl/losses.hpp"
#include "ncl/matrix.hpp"

namespace ncl {

// Architecture strings:
//   encoder     "auto" | "identity" | "mlp:h1,h2,..." | "conv:c1,c2,..."
//   projection  "mlp:h" (linear, relu, linear to D) | "linear"
//   classifier  "linear" | "cosine"
// "auto" is mlp:128,128 for vector samples and conv:16,16,32,32 for images.
struct EnsembleConfig {
  std::size_t num_experts = 3;
  std::size_t embedding_dim = 64;
  std::size_t queue_size = 1024;
  double ema_momentum = 0.999;
  std::string encoder_spec = "auto";
  std::string projection_spec = "mlp:128";
  std::string classifier = "linear";
  double cosine_scale = 16.0;

  void validate() const;
};

// One expert's network. Parameters are a flat buffer laid out as
// [encoder | classifier | projection].
class ExpertArchitecture {
 public:
  ExpertArchitecture() = default;
  ExpertArchitecture(const EnsembleConfig& config, std::span<const std::size_t> sample_shape,
                     std::size_t num_classes);

  const Sequential& encoder() const noexcept { return encoder_; }
  const Sequential& classifier() const noexcept { return classifier_; }
  const Sequential& projection() const noexcept { return projection_; }

  std::size_t input_dim() const { return encoder_.in_features(); }
  std::size_t feature_dim() const { return encoder_.out_features(); }
  std::size_t num_classes() const { return classifier_.out_features(); }
  std::size_t embedding_dim() const { return projection_.out_features(); }

  std::size_t param_count() const;
  std::span<double> encoder_params(std::span<double> all) const { return all.subspan(0, enc_n_); }
  std::span<const double> encoder_params(std::span<const double> all) const { return all.subspan(0, enc_n_); }
  std::span<double> classifier_params(std::span<double> all) const { return all.subspan(enc_n_, cls_n_); }
  std::span<const double> classifier_params(std::span<const double> all) const {
    return all.subspan(enc_n_, cls_n_);
  }
  std::span<double> projection_params(std::span<double> all) const { return all.subspan(enc_n_ + cls_n_, proj_n_); }
  std::span<const double> projection_params(std::span<const double> all) const {
    return all.subspan(enc_n_ + cls_n_, proj_n_);
  }

  void init(std::span<double> params, Rng& rng) const;
  std::string describe() const;

 private:
  Sequential encoder_, classifier_, projection_;
  std::size_t enc_n_ = 0, cls_n_ = 0, proj_n_ = 0;
};

// FIFO of unit-norm rows. Rows are kept oldest first.
class FeatureQueue {
 public:
  FeatureQueue() = default;
  FeatureQueue(std::size_t capacity, std::size_t dim) : capacity_(capacity), dim_(dim), rows_(0, dim) {}

  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return rows_.rows(); }
  bool full() const noexcept { return size() == capacity_; }
  const Matrix& contents() const noexcept { return rows_; }

  void push(const Matrix& batch);
  // Replaces contents wholesale (checkpoint restore).
  void assign(Matrix rows);

  bool operator==(const FeatureQueue&) const = default;

 private:
  std::size_t capacity_ = 0;
  std::size_t dim_ = 0;
  Matrix rows_;
};

struct ExpertState {
  std::vector<double> online;
  std::vector<double> momentum;
  std::vector<double> grad;  // accumulates d(loss)/d(online)
  FeatureQueue queue;
};

// Activations kept from a training forward pass.
struct ExpertCache {
  Tape encoder, classifier, projection;
};

struct ForwardCache {
  std::vector<ExpertCache> experts;
};

class Ensemble {
 public:
  Ensemble(const EnsembleConfig& config, std::vector<std::size_t> sample_shape, std::size_t num_classes,
           std::uint64_t seed);

  const EnsembleConfig& config() const noexcept { return config_; }
  const ExpertArchitecture& architecture() const noexcept { return arch_; }
  std::span<const std::size_t> sample_shape() const noexcept { return sample_shape_; }
  std::size_t num_experts() const noexcept { return experts_.size(); }
  std::size_t num_classes() const { return arch_.num_classes(); }

  ExpertState& expert(std::size_t k) { return experts_.at(k); }
  const ExpertState& expert(std::size_t k) const { return experts_.at(k); }

  // Logits and online embeddings from view_a; momentum embeddings from
  // view_b (skipped when with_momentum is false).
  ExpertBatchOutputs forward(const TwoViewBatch& batch, ForwardCache& cache, bool with_momentum = true) const;
  // Accumulates into every expert's grad buffer. grad_embeddings may be empty.
  void backward(const ForwardCache& cache, std::span<const Matrix> grad_logits,
                std::span<const Matrix> grad_embeddings);
  void zero_grad();

  // Inference only: encoder and classifier of the online branch.
  Matrix expert_logits(std::size_t k, const Matrix& samples) const;
  std::vector<Matrix> all_logits(const Matrix& samples) const;

 private:
  EnsembleConfig config_;
  std::vector<std::size_t> sample_shape_;
  ExpertArchitecture arch_;
  std::vector<ExpertState> experts_;
};

// theta' <- m theta' + (1 - m) theta
void ema_update(ExpertState& state, double m);
void enqueue(ExpertState& state, const Matrix& momentum_embeddings);

// Mean over the expert axis.
Matrix ensemble_logits(std::span<const Matrix> per_expert_logits);
Matrix single_expert_predict(const Ensemble& ensemble, std::size_t k, const Matrix& samples);

}  // namespace ncl
