#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "ncl/data.hpp"
#include "ncl/matrix.hpp"

// Loss mathematics of nested collaborative learning. Everything here is a
// pure function of its inputs; gradients are analytic and returned with the
// values so callers can backpropagate without an autodiff engine.
namespace ncl {

// Per-class additive log-weights applied before the softmax: log n_j for the
// balanced probability, zero for the plain softmax.
class ClassPrior {
 public:
  static ClassPrior balanced(const ClassCounts& counts);
  static ClassPrior uniform(std::size_t num_classes);

  std::size_t num_classes() const noexcept { return log_weights_.size(); }
  std::span<const double> log_weights() const noexcept { return log_weights_; }
  double operator[](std::size_t j) const { return log_weights_[j]; }

 private:
  explicit ClassPrior(std::vector<double> w) : log_weights_(std::move(w)) {}
  std::vector<double> log_weights_;
};

// Row-wise log softmax of (logits + prior), max-shifted.
Matrix log_probs(const Matrix& logits, const ClassPrior& prior);

Matrix softmax_probs(const Matrix& logits);
Matrix balanced_probs(const Matrix& logits, const ClassCounts& counts);
Matrix balanced_probs(const Matrix& logits, const ClassPrior& prior);

// Per sample: the hard_count non-ground-truth classes with the largest anchor
// logits plus the ground truth, in ascending class order. Ties prefer the
// lower class index.
struct HardCategorySet {
  std::size_t hard_count = 0;
  std::vector<std::vector<std::size_t>> indices;

  std::size_t batch_size() const noexcept { return indices.size(); }
};

HardCategorySet mine_hard_categories(const Matrix& anchor_logits, std::span<const std::int32_t> labels,
                                     std::size_t hard_count);
// Every class selected (equivalent to hard_count = C - 1).
HardCategorySet all_categories(std::size_t batch_size, std::size_t num_classes);
// max(1, round(beta * C)), capped at C - 1.
std::size_t hard_count_for(double beta, std::size_t num_classes);

// B x (hard_count + 1): probabilities renormalized over each sample's set,
// columns in the set's (ascending) order.
Matrix hard_balanced_probs(const Matrix& logits, const ClassCounts& counts, const HardCategorySet& hard_set);
Matrix hard_balanced_probs(const Matrix& logits, const ClassPrior& prior, const HardCategorySet& hard_set);

// Per-expert outputs over one batch: logits K x (B x C), online embeddings
// K x (B x D) and momentum embeddings K x (B x D), all embeddings unit norm.
struct ExpertBatchOutputs {
  std::vector<Matrix> logits;
  std::vector<Matrix> online_embeddings;
  std::vector<Matrix> momentum_embeddings;

  std::size_t num_experts() const noexcept { return logits.size(); }
  std::size_t batch_size() const { return logits.empty() ? 0 : logits.front().rows(); }
  std::size_t num_classes() const { return logits.empty() ? 0 : logits.front().cols(); }
  // Shapes, finiteness and unit norm (1e-5). Embeddings may be absent.
  void validate() const;
};

// Scalar loss plus its gradient w.r.t. every expert's logits.
struct LossValue {
  double value = 0.0;
  std::vector<Matrix> grad;
};

enum class GradientPolicy {
  kDetachTarget,  // KL(p_k || p_q): p_k is a constant target, only p_q learns
  kBoth,
};

std::string_view to_string(GradientPolicy policy);
GradientPolicy parse_gradient_policy(std::string_view text);

LossValue nil_all_loss(std::span<const Matrix> logits, std::span<const std::int32_t> labels, const ClassPrior& prior);
LossValue nil_hard_loss(std::span<const Matrix> logits, std::span<const std::int32_t> labels, const ClassPrior& prior,
                        std::span<const HardCategorySet> per_expert_sets);
LossValue nil_loss(std::span<const Matrix> logits, std::span<const std::int32_t> labels, const ClassPrior& prior,
                   std::span<const HardCategorySet> per_expert_sets);

LossValue nbod_all_loss(std::span<const Matrix> logits, const ClassPrior& prior,
                        GradientPolicy policy = GradientPolicy::kDetachTarget);
LossValue nbod_hard_loss(std::span<const Matrix> logits, const ClassPrior& prior, const HardCategorySet& shared_set,
                         GradientPolicy policy = GradientPolicy::kDetachTarget);
LossValue nbod_loss(std::span<const Matrix> logits, const ClassPrior& prior, const HardCategorySet& shared_set,
                    GradientPolicy policy = GradientPolicy::kDetachTarget);

// KL(target || student) distillation toward fixed target distributions
// (rows of probabilities), over all classes or restricted to a hard set.
LossValue distill_to_target(const Matrix& student_logits, const Matrix& target_probs, const ClassPrior& prior);
LossValue distill_to_target_hard(const Matrix& student_logits, const Matrix& target_probs, const ClassPrior& prior,
                                 const HardCategorySet& hard_set);

struct ContrastiveValue {
  double value = 0.0;
  Matrix grad_v;  // w.r.t. the online embeddings only
};

// Instance discrimination against a queue of negatives, batch-averaged.
// `queue` is N x D (N may be 0); `momentum` is the detached positive.
ContrastiveValue contrastive_loss(const Matrix& online, const Matrix& momentum, const Matrix& queue, double tau);

struct LossBreakdown {
  double nil_all = 0.0;
  double nil_hard = 0.0;
  double dis_all = 0.0;
  double dis_hard = 0.0;
  double con = 0.0;
  double total = 0.0;
};

// total = nil_all + nil_hard + con + lambda * (dis_all + dis_hard)
LossBreakdown total_loss(double nil_all, double nil_hard, double con, double dis_all, double dis_hard,
                         double lambda = 0.6);

// Which terms of the objective are active and how they are weighted.
struct ObjectiveTerms {
  bool nil_hard = true;
  bool self_supervision = true;
  bool bod_all = true;
  bool bod_hard = true;
  double lambda = 0.6;
  double tau = 0.2;
  GradientPolicy policy = GradientPolicy::kDetachTarget;
};

struct ObjectiveResult {
  LossBreakdown losses;
  std::vector<Matrix> grad_logits;      // K x (B x C)
  std::vector<Matrix> grad_embeddings;  // K x (B x D), zero when SS is off
};

// The full per-batch objective. `supervised_prior` drives NIL (balanced or
// plain softmax), `distill_prior` drives NBOD. `queues` holds one N x D
// matrix per expert. Disabled terms contribute exactly zero.
ObjectiveResult ncl_objective(const ExpertBatchOutputs& outputs, std::span<const std::int32_t> labels,
                              const ClassPrior& supervised_prior, const ClassPrior& distill_prior,
                              std::span<const HardCategorySet> per_expert_sets, const HardCategorySet& shared_set,
                              std::span<const Matrix> queues, const ObjectiveTerms& terms);

// KL(p || q) between two probability rows given as log-probabilities.
double kl_from_log_probs(std::span<const double> log_p, std::span<const double> log_q);

}  // namespace ncl
