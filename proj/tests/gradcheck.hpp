#pragma once

// Central finite-difference checks for every differentiable loss. Shared by
// the unit tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "ncl/data.hpp"
#include "ncl/losses.hpp"
#include "ncl/matrix.hpp"
#include "ncl/rng.hpp"

namespace ncl::gradcheck {

inline constexpr double kStep = 1e-5;

// Elementwise |a - n| / max(|a|, |n|, floor).
inline double max_rel_error(std::span<const double> analytic, std::span<const double> numeric, double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double d = std::abs(analytic[i] - numeric[i]);
    worst = std::max(worst, d / std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor}));
  }
  return worst;
}

// Central differences of a scalar of size |f| resolve about eps*|f|/h, so the floor grows with |f|.
inline double floor_for(double f) { return 1e-6 * std::max(1.0, std::abs(f)); }

inline std::vector<double> numeric_grad(std::vector<double>& x, const std::function<double()>& f) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + kStep;
    const double up = f();
    x[i] = keep - kStep;
    const double down = f();
    x[i] = keep;
    g[i] = (up - down) / (2 * kStep);
  }
  return g;
}

inline Matrix normalize_rows(const Matrix& u) {
  Matrix v = u;
  for (std::size_t i = 0; i < v.rows(); ++i) {
    double n = 0.0;
    for (double x : v.row(i)) n += x * x;
    n = std::sqrt(n);
    for (double& x : v.row(i)) x /= n;
  }
  return v;
}

// Pull a gradient w.r.t. v = u/|u| back to u.
inline Matrix pullback_normalize(const Matrix& u, const Matrix& grad_v) {
  Matrix out(u.rows(), u.cols());
  const Matrix v = normalize_rows(u);
  for (std::size_t i = 0; i < u.rows(); ++i) {
    double n = 0.0, vg = 0.0;
    for (std::size_t j = 0; j < u.cols(); ++j) {
      n += u(i, j) * u(i, j);
      vg += v(i, j) * grad_v(i, j);
    }
    n = std::sqrt(n);
    for (std::size_t j = 0; j < u.cols(); ++j) out(i, j) = (grad_v(i, j) - v(i, j) * vg) / n;
  }
  return out;
}

struct Instance {
  std::vector<Matrix> logits;
  std::vector<Matrix> raw_online;  // pre-normalization online embeddings
  std::vector<Matrix> momentum;
  std::vector<Matrix> queues;
  std::vector<std::int32_t> labels;
  ClassCounts counts;
  std::vector<HardCategorySet> own_sets;
  HardCategorySet shared_set;
};

inline Instance random_instance(Rng& rng, std::size_t k = 3, std::size_t b = 4, std::size_t c = 7,
                                std::size_t d = 8, std::size_t queue = 6) {
  Instance in;
  std::vector<std::size_t> counts(c);
  for (auto& n : counts) n = 1 + rng.uniform_index(200);
  in.counts = ClassCounts(counts);
  for (std::size_t i = 0; i < b; ++i) in.labels.push_back(static_cast<std::int32_t>(rng.uniform_index(c)));
  auto gauss = [&](std::size_t r, std::size_t cc, double s) {
    Matrix m(r, cc);
    for (double& x : m.flat()) x = s * rng.normal();
    return m;
  };
  for (std::size_t e = 0; e < k; ++e) {
    in.logits.push_back(gauss(b, c, 2.0));
    in.raw_online.push_back(gauss(b, d, 1.0));
    in.momentum.push_back(normalize_rows(gauss(b, d, 1.0)));
    in.queues.push_back(normalize_rows(gauss(queue, d, 1.0)));
  }
  const std::size_t hard = hard_count_for(0.3, c);
  for (std::size_t e = 0; e < k; ++e) in.own_sets.push_back(mine_hard_categories(in.logits[e], in.labels, hard));
  in.shared_set = mine_hard_categories(in.logits[rng.uniform_index(k)], in.labels, hard);
  return in;
}

// log of the prior-weighted softmax over `cols`, written out independently of the library.
inline std::vector<double> subset_log_probs(std::span<const double> z, const ClassCounts& counts,
                                            std::span<const std::size_t> cols) {
  std::vector<double> a(cols.size());
  double mx = -1e300;
  for (std::size_t t = 0; t < cols.size(); ++t) {
    a[t] = z[cols[t]] + std::log(double(counts[cols[t]]));
    mx = std::max(mx, a[t]);
  }
  double s = 0.0;
  for (double v : a) s += std::exp(v - mx);
  for (double& v : a) v -= mx + std::log(s);
  return a;
}

// Pairwise distillation with every target frozen at `frozen`: the function whose
// gradient the detached-target policy computes.
inline double frozen_target_pairwise(std::span<const Matrix> z, std::span<const Matrix> frozen,
                                     const ClassCounts& counts, const HardCategorySet* subset) {
  const std::size_t k = z.size();
  if (k < 2) return 0.0;
  const std::size_t b = z[0].rows(), c = z[0].cols();
  std::vector<std::size_t> all(c);
  for (std::size_t j = 0; j < c; ++j) all[j] = j;
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    const std::span<const std::size_t> cols = subset ? std::span<const std::size_t>(subset->indices[i]) : all;
    for (std::size_t t = 0; t < k; ++t) {
      const auto lp = subset_log_probs(frozen[t].row(i), counts, cols);
      for (std::size_t q = 0; q < k; ++q) {
        if (q == t) continue;
        const auto lq = subset_log_probs(z[q].row(i), counts, cols);
        for (std::size_t j = 0; j < cols.size(); ++j) total += std::exp(lp[j]) * (lp[j] - lq[j]);
      }
    }
  }
  return total / (double(b) * double(k) * double(k - 1));
}

// Worst relative error of a logits-gradient loss over all experts' logits.
inline double check_logit_loss(Instance& in, const std::function<LossValue(std::span<const Matrix>)>& loss,
                               const std::function<double(std::span<const Matrix>)>& numeric = {}) {
  const LossValue analytic = loss(in.logits);
  const double floor = floor_for(numeric ? numeric(in.logits) : analytic.value);
  double worst = 0.0;
  for (std::size_t e = 0; e < in.logits.size(); ++e) {
    std::vector<double> x(in.logits[e].flat().begin(), in.logits[e].flat().end());
    const auto num = numeric_grad(x, [&] {
      std::copy(x.begin(), x.end(), in.logits[e].flat().begin());
      return numeric ? numeric(in.logits) : loss(in.logits).value;
    });
    std::copy(x.begin(), x.end(), in.logits[e].flat().begin());
    worst = std::max(worst, max_rel_error(analytic.grad[e].flat(), num, floor));
  }
  return worst;
}

struct Report {
  double nil_all = 0, nil_hard = 0, nbod_all = 0, nbod_hard = 0, contrastive = 0, total_logits = 0,
         total_embeddings = 0;
  double worst() const {
    return std::max({nil_all, nil_hard, nbod_all, nbod_hard, contrastive, total_logits, total_embeddings});
  }
};

inline Report check_instance(Instance& in, GradientPolicy policy = GradientPolicy::kDetachTarget) {
  Report r;
  const auto prior = ClassPrior::balanced(in.counts);
  r.nil_all = check_logit_loss(in, [&](std::span<const Matrix> z) { return nil_all_loss(z, in.labels, prior); });
  r.nil_hard = check_logit_loss(
      in, [&](std::span<const Matrix> z) { return nil_hard_loss(z, in.labels, prior, in.own_sets); });
  const bool detach = policy == GradientPolicy::kDetachTarget;
  const std::vector<Matrix> frozen = in.logits;
  auto frozen_all = [&](std::span<const Matrix> z) { return frozen_target_pairwise(z, frozen, in.counts, nullptr); };
  auto frozen_hard = [&](std::span<const Matrix> z) {
    return frozen_target_pairwise(z, frozen, in.counts, &in.shared_set);
  };
  using Numeric = std::function<double(std::span<const Matrix>)>;
  r.nbod_all = check_logit_loss(
      in, [&](std::span<const Matrix> z) { return nbod_all_loss(z, prior, policy); },
      detach ? Numeric(frozen_all) : Numeric());
  r.nbod_hard = check_logit_loss(
      in, [&](std::span<const Matrix> z) { return nbod_hard_loss(z, prior, in.shared_set, policy); },
      detach ? Numeric(frozen_hard) : Numeric());

  for (std::size_t e = 0; e < in.raw_online.size(); ++e) {
    const auto con = [&] {
      return contrastive_loss(normalize_rows(in.raw_online[e]), in.momentum[e], in.queues[e], 0.2);
    };
    const Matrix analytic = pullback_normalize(in.raw_online[e], con().grad_v);
    std::vector<double> x(in.raw_online[e].flat().begin(), in.raw_online[e].flat().end());
    const auto num = numeric_grad(x, [&] {
      std::copy(x.begin(), x.end(), in.raw_online[e].flat().begin());
      return con().value;
    });
    std::copy(x.begin(), x.end(), in.raw_online[e].flat().begin());
    r.contrastive = std::max(r.contrastive, max_rel_error(analytic.flat(), num, floor_for(con().value)));
  }

  ObjectiveTerms terms;
  terms.policy = policy;
  const auto objective = [&] {
    ExpertBatchOutputs out;
    out.logits = in.logits;
    for (const auto& u : in.raw_online) out.online_embeddings.push_back(normalize_rows(u));
    out.momentum_embeddings = in.momentum;
    return ncl_objective(out, in.labels, prior, prior, in.own_sets, in.shared_set, in.queues, terms);
  };
  // con does not depend on the logits; dropping it keeps its rounding out of the difference
  const auto logit_part = [&] {
    const auto l = objective().losses;
    const double part = l.total - l.con;
    if (!detach) return part;
    return part - terms.lambda * (l.dis_all + l.dis_hard) +
           terms.lambda * (frozen_all(in.logits) + frozen_hard(in.logits));
  };
  const ObjectiveResult full = objective();
  const double logit_floor = floor_for(logit_part());
  const double total_floor = floor_for(full.losses.total);
  for (std::size_t e = 0; e < in.logits.size(); ++e) {
    std::vector<double> x(in.logits[e].flat().begin(), in.logits[e].flat().end());
    const auto num = numeric_grad(x, [&] {
      std::copy(x.begin(), x.end(), in.logits[e].flat().begin());
      return logit_part();
    });
    std::copy(x.begin(), x.end(), in.logits[e].flat().begin());
    r.total_logits = std::max(r.total_logits, max_rel_error(full.grad_logits[e].flat(), num, logit_floor));

    const Matrix analytic = pullback_normalize(in.raw_online[e], full.grad_embeddings[e]);
    std::vector<double> u(in.raw_online[e].flat().begin(), in.raw_online[e].flat().end());
    const auto num_u = numeric_grad(u, [&] {
      std::copy(u.begin(), u.end(), in.raw_online[e].flat().begin());
      return objective().losses.total;
    });
    std::copy(u.begin(), u.end(), in.raw_online[e].flat().begin());
    r.total_embeddings = std::max(r.total_embeddings, max_rel_error(analytic.flat(), num_u, total_floor));
  }
  return r;
}

}  // namespace ncl::gradcheck
