#include "ncl/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "ncl/error.hpp"
#include "ncl/kernels.hpp"

namespace ncl {

namespace {

constexpr double kUnitNormTolerance = 1e-5;

void check_finite(const Matrix& m, const char* what) {
  for (double v : m.flat()) {
    require(std::isfinite(v), ErrorCode::kNonFinite, std::string(what) + " contains NaN or Inf");
  }
}

void check_classes(const Matrix& logits, const ClassPrior& prior) {
  require(logits.cols() == prior.num_classes(), ErrorCode::kShapeMismatch,
          "logits have " + std::to_string(logits.cols()) + " classes, prior has " +
              std::to_string(prior.num_classes()));
}

void check_labels(std::span<const std::int32_t> labels, std::size_t batch, std::size_t classes) {
  require(labels.size() == batch, ErrorCode::kShapeMismatch, "label count does not match batch size");
  for (auto y : labels) {
    require(y >= 0 && static_cast<std::size_t>(y) < classes, ErrorCode::kOutOfRange,
            "label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
  }
}

void check_experts(std::span<const Matrix> logits, const ClassPrior& prior) {
  require(!logits.empty(), ErrorCode::kInvalidArgument, "no experts");
  for (const auto& z : logits) {
    require(z.rows() == logits.front().rows(), ErrorCode::kShapeMismatch, "experts disagree on batch size");
    check_classes(z, prior);
    check_finite(z, "logits");
  }
}

void check_hard_set(const HardCategorySet& set, std::size_t batch, std::size_t classes) {
  require(set.batch_size() == batch, ErrorCode::kShapeMismatch, "hard set does not match batch size");
  for (const auto& row : set.indices) {
    require(!row.empty(), ErrorCode::kInvalidArgument, "empty hard category set");
    for (std::size_t j : row) require(j < classes, ErrorCode::kOutOfRange, "hard set index out of range");
  }
}

// out[j] = z[j] + w[j] - logsumexp(z + w)
void log_softmax_row(std::span<const double> z, std::span<const double> w, std::span<double> out) {
  double shift = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < z.size(); ++j) shift = std::max(shift, z[j] + w[j]);
  double sum = 0.0;
  for (std::size_t j = 0; j < z.size(); ++j) sum += std::exp(z[j] + w[j] - shift);
  const double lse = shift + std::log(sum);
  for (std::size_t j = 0; j < z.size(); ++j) out[j] = z[j] + w[j] - lse;
}

// Log-probabilities restricted to `subset` (renormalized there).
void subset_log_softmax(std::span<const double> z, const ClassPrior& prior, std::span<const std::size_t> subset,
                        std::vector<double>& out) {
  out.resize(subset.size());
  std::vector<double> zs(subset.size()), ws(subset.size());
  for (std::size_t t = 0; t < subset.size(); ++t) {
    zs[t] = z[subset[t]];
    ws[t] = prior[subset[t]];
  }
  log_softmax_row(zs, ws, out);
}

std::vector<Matrix> zero_grads(std::span<const Matrix> logits) {
  std::vector<Matrix> g;
  g.reserve(logits.size());
  for (const auto& z : logits) g.emplace_back(z.rows(), z.cols());
  return g;
}

std::size_t position_of(std::span<const std::size_t> subset, std::size_t cls) {
  const auto it = std::find(subset.begin(), subset.end(), cls);
  require(it != subset.end(), ErrorCode::kInvalidArgument, "ground truth missing from hard category set");
  return static_cast<std::size_t>(it - subset.begin());
}

}  // namespace

ClassPrior ClassPrior::balanced(const ClassCounts& counts) {
  std::vector<double> w(counts.num_classes());
  for (std::size_t j = 0; j < w.size(); ++j) {
    require(counts[j] >= 1, ErrorCode::kInvalidArgument, "class counts must be positive");
    w[j] = std::log(static_cast<double>(counts[j]));
  }
  return ClassPrior(std::move(w));
}

ClassPrior ClassPrior::uniform(std::size_t num_classes) {
  require(num_classes >= 1, ErrorCode::kInvalidArgument, "prior over zero classes");
  return ClassPrior(std::vector<double>(num_classes, 0.0));
}

Matrix log_probs(const Matrix& logits, const ClassPrior& prior) {
  check_classes(logits, prior);
  check_finite(logits, "logits");
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) log_softmax_row(logits.row(i), prior.log_weights(), out.row(i));
  return out;
}

Matrix balanced_probs(const Matrix& logits, const ClassPrior& prior) {
  Matrix p = log_probs(logits, prior);
  for (double& v : p.flat()) v = std::exp(v);
  return p;
}

Matrix softmax_probs(const Matrix& logits) { return balanced_probs(logits, ClassPrior::uniform(logits.cols())); }

Matrix balanced_probs(const Matrix& logits, const ClassCounts& counts) {
  return balanced_probs(logits, ClassPrior::balanced(counts));
}

HardCategorySet mine_hard_categories(const Matrix& anchor_logits, std::span<const std::int32_t> labels,
                                     std::size_t hard_count) {
  const std::size_t classes = anchor_logits.cols();
  require(hard_count >= 1 && hard_count + 1 <= classes, ErrorCode::kOutOfRange,
          "hard_count " + std::to_string(hard_count) + " outside [1, " + std::to_string(classes - 1) + "]");
  check_labels(labels, anchor_logits.rows(), classes);
  check_finite(anchor_logits, "anchor logits");

  HardCategorySet set;
  set.hard_count = hard_count;
  set.indices.resize(anchor_logits.rows());
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < anchor_logits.rows(); ++i) {
    const auto z = anchor_logits.row(i);
    const auto y = static_cast<std::size_t>(labels[i]);
    candidates.clear();
    for (std::size_t j = 0; j < classes; ++j) {
      if (j != y) candidates.push_back(j);
    }
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<long>(hard_count), candidates.end(),
                      [&](std::size_t a, std::size_t b) { return z[a] > z[b] || (z[a] == z[b] && a < b); });
    auto& row = set.indices[i];
    row.assign(candidates.begin(), candidates.begin() + static_cast<long>(hard_count));
    row.push_back(y);
    std::sort(row.begin(), row.end());
  }
  return set;
}

HardCategorySet all_categories(std::size_t batch_size, std::size_t num_classes) {
  HardCategorySet set;
  set.hard_count = num_classes - 1;
  std::vector<std::size_t> all(num_classes);
  std::iota(all.begin(), all.end(), std::size_t{0});
  set.indices.assign(batch_size, all);
  return set;
}

std::size_t hard_count_for(double beta, std::size_t num_classes) {
  require(num_classes >= 2, ErrorCode::kInvalidArgument, "hard category mining needs at least two classes");
  const auto rounded = static_cast<std::size_t>(std::llround(beta * static_cast<double>(num_classes)));
  return std::clamp<std::size_t>(rounded, 1, num_classes - 1);
}

Matrix hard_balanced_probs(const Matrix& logits, const ClassPrior& prior, const HardCategorySet& hard_set) {
  check_classes(logits, prior);
  check_finite(logits, "logits");
  check_hard_set(hard_set, logits.rows(), logits.cols());
  Matrix out(logits.rows(), hard_set.hard_count + 1);
  std::vector<double> lp;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto& subset = hard_set.indices[i];
    require(subset.size() == out.cols(), ErrorCode::kShapeMismatch, "hard set row has the wrong cardinality");
    subset_log_softmax(logits.row(i), prior, subset, lp);
    for (std::size_t t = 0; t < subset.size(); ++t) out(i, t) = std::exp(lp[t]);
  }
  return out;
}

Matrix hard_balanced_probs(const Matrix& logits, const ClassCounts& counts, const HardCategorySet& hard_set) {
  return hard_balanced_probs(logits, ClassPrior::balanced(counts), hard_set);
}

void ExpertBatchOutputs::validate() const {
  require(!logits.empty(), ErrorCode::kInvalidArgument, "no experts in batch outputs");
  const std::size_t batch = logits.front().rows();
  const std::size_t classes = logits.front().cols();
  require(batch >= 1, ErrorCode::kInvalidArgument, "empty batch");
  require(classes >= 2, ErrorCode::kInvalidArgument, "need at least two classes");
  for (const auto& z : logits) {
    require(z.rows() == batch && z.cols() == classes, ErrorCode::kShapeMismatch, "expert logits shape mismatch");
    check_finite(z, "logits");
  }
  auto check_embeddings = [&](const std::vector<Matrix>& emb, const char* what) {
    if (emb.empty()) return;
    require(emb.size() == logits.size(), ErrorCode::kShapeMismatch, std::string(what) + ": one matrix per expert");
    for (const auto& e : emb) {
      require(e.rows() == batch && e.cols() == emb.front().cols(), ErrorCode::kShapeMismatch,
              std::string(what) + " shape mismatch");
      check_finite(e, what);
      for (std::size_t i = 0; i < e.rows(); ++i) {
        const double norm = std::sqrt(kernels::active().dot(e.row(i).data(), e.row(i).data(), e.cols()));
        require(std::abs(norm - 1.0) <= kUnitNormTolerance, ErrorCode::kNotNormalized,
                std::string(what) + " row " + std::to_string(i) + " has norm " + std::to_string(norm));
      }
    }
  };
  check_embeddings(online_embeddings, "online embeddings");
  check_embeddings(momentum_embeddings, "momentum embeddings");
}

std::string_view to_string(GradientPolicy policy) {
  return policy == GradientPolicy::kDetachTarget ? "detach_target" : "both";
}

GradientPolicy parse_gradient_policy(std::string_view text) {
  if (text == "detach_target") return GradientPolicy::kDetachTarget;
  if (text == "both") return GradientPolicy::kBoth;
  fail(ErrorCode::kInvalidArgument, "unknown gradient policy '" + std::string(text) + "'");
}

LossValue nil_all_loss(std::span<const Matrix> logits, std::span<const std::int32_t> labels, const ClassPrior& prior) {
  check_experts(logits, prior);
  const std::size_t batch = logits.front().rows();
  check_labels(labels, batch, prior.num_classes());
  LossValue out{0.0, zero_grads(logits)};
  const double inv_b = 1.0 / static_cast<double>(batch);
  std::vector<double> lp(prior.num_classes());
  for (std::size_t k = 0; k < logits.size(); ++k) {
    for (std::size_t i = 0; i < batch; ++i) {
      log_softmax_row(logits[k].row(i), prior.log_weights(), lp);
      const auto y = static_cast<std::size_t>(labels[i]);
      out.value -= lp[y] * inv_b;
      auto g = out.grad[k].row(i);
      for (std::size_t j = 0; j < lp.size(); ++j) g[j] = std::exp(lp[j]) * inv_b;
      g[y] -= inv_b;
    }
  }
  return out;
}

LossValue nil_hard_loss(std::span<const Matrix> logits, std::span<const std::int32_t> labels, const ClassPrior& prior,
                        std::span<const HardCategorySet> per_expert_sets) {
  check_experts(logits, prior);
  require(per_expert_sets.size() == logits.size(), ErrorCode::kShapeMismatch, "one hard set per expert is required");
  const std::size_t batch = logits.front().rows();
  check_labels(labels, batch, prior.num_classes());
  LossValue out{0.0, zero_grads(logits)};
  const double inv_b = 1.0 / static_cast<double>(batch);
  std::vector<double> lp;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    check_hard_set(per_expert_sets[k], batch, prior.num_classes());
    for (std::size_t i = 0; i < batch; ++i) {
      const auto& subset = per_expert_sets[k].indices[i];
      subset_log_softmax(logits[k].row(i), prior, subset, lp);
      const std::size_t pos = position_of(subset, static_cast<std::size_t>(labels[i]));
      out.value -= lp[pos] * inv_b;
      auto g = out.grad[k].row(i);
      for (std::size_t t = 0; t < subset.size(); ++t) g[subset[t]] = std::exp(lp[t]) * inv_b;
      g[subset[pos]] -= inv_b;
    }
  }
  return out;
}

namespace {

LossValue sum_losses(LossValue a, const LossValue& b) {
  a.value += b.value;
  for (std::size_t k = 0; k < a.grad.size(); ++k) {
    kernels::active().axpy(1.0, b.grad[k].data(), a.grad[k].data(), a.grad[k].size());
  }
  return a;
}

// Mean over ordered expert pairs (k != q) and over the batch of
// KL(p_k || p_q), each distribution taken over `subset_of(i)` (all classes
// when null).
LossValue pairwise_kl(std::span<const Matrix> logits, const ClassPrior& prior, const HardCategorySet* subset,
                      GradientPolicy policy) {
  check_experts(logits, prior);
  const std::size_t experts = logits.size();
  const std::size_t batch = logits.front().rows();
  LossValue out{0.0, zero_grads(logits)};
  if (experts < 2) return out;
  if (subset != nullptr) check_hard_set(*subset, batch, prior.num_classes());

  const double scale = 1.0 / (static_cast<double>(batch) * static_cast<double>(experts * (experts - 1)));
  std::vector<std::vector<double>> lp(experts);
  for (std::size_t i = 0; i < batch; ++i) {
    const std::vector<std::size_t>* cols = subset != nullptr ? &subset->indices[i] : nullptr;
    for (std::size_t k = 0; k < experts; ++k) {
      if (cols != nullptr) {
        subset_log_softmax(logits[k].row(i), prior, *cols, lp[k]);
      } else {
        lp[k].resize(prior.num_classes());
        log_softmax_row(logits[k].row(i), prior.log_weights(), lp[k]);
      }
    }
    const std::size_t width = lp.front().size();
    auto col = [&](std::size_t t) { return cols != nullptr ? (*cols)[t] : t; };
    for (std::size_t k = 0; k < experts; ++k) {
      for (std::size_t q = 0; q < experts; ++q) {
        if (k == q) continue;
        const double kl = kl_from_log_probs(lp[k], lp[q]);
        out.value += kl * scale;
        auto gq = out.grad[q].row(i);
        for (std::size_t t = 0; t < width; ++t) gq[col(t)] += (std::exp(lp[q][t]) - std::exp(lp[k][t])) * scale;
        if (policy == GradientPolicy::kBoth) {
          auto gk = out.grad[k].row(i);
          for (std::size_t t = 0; t < width; ++t) {
            const double p = std::exp(lp[k][t]);
            gk[col(t)] += p * ((lp[k][t] - lp[q][t]) - kl) * scale;
          }
        }
      }
    }
  }
  return out;
}

}  // namespace

LossValue nil_loss(std::span<const Matrix> logits, std::span<const std::int32_t> labels, const ClassPrior& prior,
                   std::span<const HardCategorySet> per_expert_sets) {
  return sum_losses(nil_all_loss(logits, labels, prior), nil_hard_loss(logits, labels, prior, per_expert_sets));
}

LossValue nbod_all_loss(std::span<const Matrix> logits, const ClassPrior& prior, GradientPolicy policy) {
  return pairwise_kl(logits, prior, nullptr, policy);
}

LossValue nbod_hard_loss(std::span<const Matrix> logits, const ClassPrior& prior, const HardCategorySet& shared_set,
                         GradientPolicy policy) {
  return pairwise_kl(logits, prior, &shared_set, policy);
}

LossValue nbod_loss(std::span<const Matrix> logits, const ClassPrior& prior, const HardCategorySet& shared_set,
                    GradientPolicy policy) {
  return sum_losses(nbod_all_loss(logits, prior, policy), nbod_hard_loss(logits, prior, shared_set, policy));
}

double kl_from_log_probs(std::span<const double> log_p, std::span<const double> log_q) {
  double kl = 0.0;
  for (std::size_t j = 0; j < log_p.size(); ++j) kl += std::exp(log_p[j]) * (log_p[j] - log_q[j]);
  return std::max(kl, 0.0);
}

namespace {

LossValue distill_rows(const Matrix& student, const Matrix& target, const ClassPrior& prior,
                       const HardCategorySet* subset) {
  const std::span<const Matrix> z(&student, 1);
  check_experts(z, prior);
  require(target.rows() == student.rows() && target.cols() == student.cols(), ErrorCode::kShapeMismatch,
          "target distribution shape mismatch");
  check_finite(target, "target probabilities");
  if (subset != nullptr) check_hard_set(*subset, student.rows(), student.cols());
  LossValue out{0.0, zero_grads(z)};
  const double inv_b = 1.0 / static_cast<double>(student.rows());
  std::vector<double> lq, lp;
  for (std::size_t i = 0; i < student.rows(); ++i) {
    std::vector<std::size_t> cols;
    if (subset != nullptr) {
      cols = subset->indices[i];
    } else {
      cols.resize(student.cols());
      std::iota(cols.begin(), cols.end(), std::size_t{0});
    }
    subset_log_softmax(student.row(i), prior, cols, lq);
    double mass = 0.0;
    for (std::size_t j : cols) mass += target(i, j);
    require(mass > 0.0, ErrorCode::kInvalidArgument, "target distribution has no mass on the selected classes");
    lp.resize(cols.size());
    for (std::size_t t = 0; t < cols.size(); ++t) {
      const double p = target(i, cols[t]) / mass;
      lp[t] = p > 0.0 ? std::log(p) : -std::numeric_limits<double>::infinity();
    }
    double kl = 0.0;
    for (std::size_t t = 0; t < cols.size(); ++t) {
      const double p = std::exp(lp[t]);
      if (p > 0.0) kl += p * (lp[t] - lq[t]);
    }
    out.value += std::max(kl, 0.0) * inv_b;
    auto g = out.grad[0].row(i);
    for (std::size_t t = 0; t < cols.size(); ++t) g[cols[t]] += (std::exp(lq[t]) - std::exp(lp[t])) * inv_b;
  }
  return out;
}

}  // namespace

LossValue distill_to_target(const Matrix& student_logits, const Matrix& target_probs, const ClassPrior& prior) {
  return distill_rows(student_logits, target_probs, prior, nullptr);
}

LossValue distill_to_target_hard(const Matrix& student_logits, const Matrix& target_probs, const ClassPrior& prior,
                                 const HardCategorySet& hard_set) {
  return distill_rows(student_logits, target_probs, prior, &hard_set);
}

ContrastiveValue contrastive_loss(const Matrix& online, const Matrix& momentum, const Matrix& queue, double tau) {
  require(tau > 0.0 && std::isfinite(tau), ErrorCode::kInvalidArgument, "temperature must be positive");
  require(online.rows() == momentum.rows() && online.cols() == momentum.cols(), ErrorCode::kShapeMismatch,
          "online and momentum embeddings differ in shape");
  require(queue.rows() == 0 || queue.cols() == online.cols(), ErrorCode::kShapeMismatch,
          "queue embedding dimension mismatch");
  const auto& kt = kernels::active();
  const std::size_t batch = online.rows(), dim = online.cols(), negatives = queue.rows();
  auto check_unit = [&](const Matrix& m, const char* what) {
    check_finite(m, what);
    for (std::size_t i = 0; i < m.rows(); ++i) {
      const double norm = std::sqrt(kt.dot(m.row(i).data(), m.row(i).data(), dim));
      require(std::abs(norm - 1.0) <= kUnitNormTolerance, ErrorCode::kNotNormalized,
              std::string(what) + " row " + std::to_string(i) + " has norm " + std::to_string(norm));
    }
  };
  check_unit(online, "online embeddings");
  check_unit(momentum, "momentum embeddings");
  check_unit(queue, "queue");

  ContrastiveValue out{0.0, Matrix(batch, dim)};
  if (batch == 0 || negatives == 0) return out;

  Matrix neg(batch, negatives);
  kt.gemm_nt(batch, negatives, dim, online.data(), queue.data(), neg.data(), 0.0);
  const double inv_tau = 1.0 / tau;
  const double inv_b = 1.0 / static_cast<double>(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    const double pos = kt.dot(online.row(i).data(), momentum.row(i).data(), dim) * inv_tau;
    auto s = neg.row(i);
    double shift = pos;
    for (double& v : s) {
      v *= inv_tau;
      shift = std::max(shift, v);
    }
    double sum = std::exp(pos - shift);
    for (double v : s) sum += std::exp(v - shift);
    const double lse = shift + std::log(sum);
    out.value += (lse - pos) * inv_b;
    // Reuse the row for the softmax weights of the negatives, pre-scaled.
    const double coef = inv_b * inv_tau;
    for (double& v : s) v = std::exp(v - lse) * coef;
    const double w_pos = std::exp(pos - lse);
    kt.axpy((w_pos - 1.0) * coef, momentum.row(i).data(), out.grad_v.row(i).data(), dim);
  }
  kt.gemm_nn(batch, dim, negatives, neg.data(), queue.data(), out.grad_v.data(), 1.0);
  return out;
}

LossBreakdown total_loss(double nil_all, double nil_hard, double con, double dis_all, double dis_hard, double lambda) {
  require(lambda >= 0.0, ErrorCode::kInvalidArgument, "lambda must be >= 0");
  LossBreakdown b{nil_all, nil_hard, dis_all, dis_hard, con, 0.0};
  b.total = nil_all + nil_hard + con + lambda * (dis_all + dis_hard);
  return b;
}

ObjectiveResult ncl_objective(const ExpertBatchOutputs& outputs, std::span<const std::int32_t> labels,
                              const ClassPrior& supervised_prior, const ClassPrior& distill_prior,
                              std::span<const HardCategorySet> per_expert_sets, const HardCategorySet& shared_set,
                              std::span<const Matrix> queues, const ObjectiveTerms& terms) {
  const auto& kt = kernels::active();
  const std::span<const Matrix> z(outputs.logits);
  ObjectiveResult res;

  LossValue nil_all = nil_all_loss(z, labels, supervised_prior);
  res.grad_logits = std::move(nil_all.grad);
  double nil_hard_v = 0.0, dis_all_v = 0.0, dis_hard_v = 0.0, con_v = 0.0;
  auto accumulate = [&](const LossValue& lv, double weight) {
    for (std::size_t k = 0; k < res.grad_logits.size(); ++k) {
      kt.axpy(weight, lv.grad[k].data(), res.grad_logits[k].data(), lv.grad[k].size());
    }
  };
  if (terms.nil_hard) {
    const LossValue lv = nil_hard_loss(z, labels, supervised_prior, per_expert_sets);
    nil_hard_v = lv.value;
    accumulate(lv, 1.0);
  }
  if (terms.bod_all && outputs.num_experts() > 1) {
    const LossValue lv = nbod_all_loss(z, distill_prior, terms.policy);
    dis_all_v = lv.value;
    if (terms.lambda != 0.0) accumulate(lv, terms.lambda);
  }
  if (terms.bod_hard && outputs.num_experts() > 1) {
    const LossValue lv = nbod_hard_loss(z, distill_prior, shared_set, terms.policy);
    dis_hard_v = lv.value;
    if (terms.lambda != 0.0) accumulate(lv, terms.lambda);
  }
  for (std::size_t k = 0; k < outputs.num_experts(); ++k) {
    const std::size_t dim = outputs.online_embeddings.empty() ? 0 : outputs.online_embeddings[k].cols();
    res.grad_embeddings.emplace_back(outputs.batch_size(), dim);
  }
  if (terms.self_supervision) {
    require(outputs.online_embeddings.size() == outputs.num_experts() &&
                outputs.momentum_embeddings.size() == outputs.num_experts() && queues.size() == outputs.num_experts(),
            ErrorCode::kShapeMismatch, "self-supervision needs embeddings and a queue for every expert");
    for (std::size_t k = 0; k < outputs.num_experts(); ++k) {
      ContrastiveValue cv =
          contrastive_loss(outputs.online_embeddings[k], outputs.momentum_embeddings[k], queues[k], terms.tau);
      con_v += cv.value;
      res.grad_embeddings[k] = std::move(cv.grad_v);
    }
  }
  res.losses = total_loss(nil_all.value, nil_hard_v, con_v, dis_all_v, dis_hard_v, terms.lambda);
  return res;
}

}  // namespace ncl
