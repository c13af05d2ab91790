#include "ncl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ncl/error.hpp"
#include "ncl/io.hpp"
#include "ncl/losses.hpp"

namespace ncl {

using nlohmann::ordered_json;

namespace {

void check_labels(const Matrix& logits, std::span<const std::int32_t> labels) {
  require(logits.rows() == labels.size(), ErrorCode::kShapeMismatch, "logits and labels disagree in length");
  for (auto y : labels) {
    require(y >= 0 && static_cast<std::size_t>(y) < logits.cols(), ErrorCode::kOutOfRange, "label out of range");
  }
}

ordered_json nullable(double v) { return std::isnan(v) ? ordered_json(nullptr) : ordered_json(v); }

}  // namespace

std::optional<double> EvalReport::split(Split s) const {
  switch (s) {
    case Split::kMany: return many;
    case Split::kMedium: return medium;
    case Split::kFew: return few;
  }
  return std::nullopt;
}

std::vector<std::int32_t> predict(const Matrix& logits) {
  std::vector<std::int32_t> out(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto r = logits.row(i);
    out[i] = static_cast<std::int32_t>(std::max_element(r.begin(), r.end()) - r.begin());
  }
  return out;
}

double top1(const Matrix& logits, std::span<const std::int32_t> labels) {
  check_labels(logits, labels);
  if (labels.empty()) return 0.0;
  const auto pred = predict(logits);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += pred[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

EvalReport evaluate(const Matrix& logits, std::span<const std::int32_t> labels, const SplitAssignment& splits) {
  check_labels(logits, labels);
  const std::size_t C = logits.cols();
  require(splits.split_of_class.size() == C, ErrorCode::kShapeMismatch, "split assignment does not cover every class");
  std::vector<std::size_t> hit(C, 0), seen(C, 0);
  const auto pred = predict(logits);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto y = static_cast<std::size_t>(labels[i]);
    ++seen[y];
    hit[y] += pred[i] == labels[i];
  }
  EvalReport r;
  r.n_eval = labels.size();
  std::size_t total_hit = 0;
  r.per_class_top1.resize(C);
  for (std::size_t c = 0; c < C; ++c) {
    total_hit += hit[c];
    r.per_class_top1[c] = seen[c] ? double(hit[c]) / double(seen[c]) : std::numeric_limits<double>::quiet_NaN();
  }
  r.overall_top1 = r.n_eval ? double(total_hit) / double(r.n_eval) : 0.0;
  for (Split s : {Split::kMany, Split::kMedium, Split::kFew}) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t c : splits.classes_in(s)) {
      if (!seen[c]) continue;
      sum += r.per_class_top1[c];
      ++n;
    }
    std::optional<double> v;
    if (n > 0) v = sum / double(n);
    (s == Split::kMany ? r.many : s == Split::kMedium ? r.medium : r.few) = v;
  }
  return r;
}

EvalReport evaluate_expert(const Ensemble& ensemble, std::size_t k, const LabeledSet& eval,
                           const SplitAssignment& splits) {
  return evaluate(single_expert_predict(ensemble, k, eval.samples), eval.labels, splits);
}

EvalReport evaluate_ensemble(const Ensemble& ensemble, const LabeledSet& eval, const SplitAssignment& splits) {
  const auto zs = ensemble.all_logits(eval.samples);
  return evaluate(ensemble_logits(zs), eval.labels, splits);
}

KLProfile kl_profile(const Matrix& logits_a, const Matrix& logits_b, std::span<const std::int32_t> labels,
                     std::size_t num_classes, const ClassCounts* counts, const KLOptions& options) {
  require(logits_a.rows() == logits_b.rows() && logits_a.cols() == logits_b.cols(), ErrorCode::kShapeMismatch,
          "the two models' logits differ in shape");
  check_labels(logits_a, labels);
  require(logits_a.cols() == num_classes, ErrorCode::kShapeMismatch, "class count mismatch");
  ClassPrior prior = ClassPrior::uniform(num_classes);
  if (options.mode == ProbMode::kBalanced) {
    require(counts != nullptr, ErrorCode::kInvalidArgument, "balanced KL needs class counts");
    prior = ClassPrior::balanced(*counts);
  }
  const Matrix la = log_probs(logits_a, prior);
  const Matrix lb = log_probs(logits_b, prior);
  std::vector<double> sum(num_classes, 0.0);
  std::vector<std::size_t> n(num_classes, 0);
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    double kl = kl_from_log_probs(la.row(i), lb.row(i));
    if (options.symmetric) kl = 0.5 * (kl + kl_from_log_probs(lb.row(i), la.row(i)));
    const auto y = static_cast<std::size_t>(labels[i]);
    sum[y] += kl;
    ++n[y];
    total += kl;
  }
  KLProfile p;
  p.per_class_kl.resize(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) {
    p.per_class_kl[c] = n[c] ? sum[c] / double(n[c]) : std::numeric_limits<double>::quiet_NaN();
  }
  p.mean_kl = labels.empty() ? 0.0 : total / double(labels.size());
  return p;
}

std::size_t HardNegHistogram::total() const {
  std::size_t t = 0;
  for (auto c : counts) t += c;
  return t;
}

std::vector<double> hardest_negative_scores(const Matrix& logits, std::span<const std::int32_t> labels) {
  check_labels(logits, labels);
  const Matrix p = softmax_probs(logits);
  std::vector<double> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    double best = 0.0;
    for (std::size_t j = 0; j < p.cols(); ++j) {
      if (static_cast<std::int32_t>(j) != labels[i]) best = std::max(best, p(i, j));
    }
    out[i] = best;
  }
  return out;
}

HardNegHistogram histogram_from_scores(std::span<const double> scores, std::size_t bins, double threshold) {
  require(bins >= 1, ErrorCode::kInvalidArgument, "histogram needs at least one bin");
  HardNegHistogram h;
  h.bin_edges.resize(bins + 1);
  for (std::size_t b = 0; b <= bins; ++b) h.bin_edges[b] = double(b) / double(bins);
  h.counts.assign(bins, 0);
  std::size_t above = 0;
  for (double s : scores) {
    require(s >= 0.0 && s <= 1.0, ErrorCode::kOutOfRange, "score outside [0,1]");
    const auto b = std::min(bins - 1, static_cast<std::size_t>(s * double(bins)));
    ++h.counts[b];
    above += s > threshold;
  }
  h.fraction_above = scores.empty() ? 0.0 : double(above) / double(scores.size());
  return h;
}

HardNegHistogram hardest_negative_histogram(const Matrix& logits, std::span<const std::int32_t> labels,
                                            std::size_t bins, double threshold) {
  const auto s = hardest_negative_scores(logits, labels);
  return histogram_from_scores(s, bins, threshold);
}

SingleVsEnsemble compare_single_vs_ensemble(std::span<const Matrix> per_expert_logits,
                                            std::span<const std::int32_t> labels) {
  require(!per_expert_logits.empty(), ErrorCode::kInvalidArgument, "no experts to compare");
  SingleVsEnsemble out;
  for (const auto& z : per_expert_logits) out.per_expert.push_back(top1(z, labels));
  double s = 0.0;
  for (double a : out.per_expert) s += a;
  out.single_mean = s / double(out.per_expert.size());
  out.ensemble = top1(ensemble_logits(per_expert_logits), labels);
  return out;
}

SingleVsEnsemble compare_single_vs_ensemble(const Ensemble& ensemble, const LabeledSet& eval) {
  const auto zs = ensemble.all_logits(eval.samples);
  return compare_single_vs_ensemble(zs, eval.labels);
}

ordered_json to_json(const EvalReport& r) {
  ordered_json j;
  j["schema_version"] = kReportSchemaVersion;
  j["n_eval"] = r.n_eval;
  j["overall_top1"] = r.overall_top1;
  ordered_json splits = ordered_json::object();
  for (Split s : {Split::kMany, Split::kMedium, Split::kFew}) {
    if (auto v = r.split(s)) splits[std::string(to_string(s))] = *v;
  }
  j["split_top1"] = splits;
  ordered_json pc = ordered_json::array();
  for (double v : r.per_class_top1) pc.push_back(nullable(v));
  j["per_class_top1"] = pc;
  return j;
}

ordered_json to_json(const KLProfile& p) {
  ordered_json j;
  j["schema_version"] = kReportSchemaVersion;
  j["mean_kl"] = p.mean_kl;
  ordered_json pc = ordered_json::array();
  for (double v : p.per_class_kl) pc.push_back(nullable(v));
  j["per_class_kl"] = pc;
  return j;
}

ordered_json to_json(const HardNegHistogram& h) {
  ordered_json j;
  j["schema_version"] = kReportSchemaVersion;
  j["bin_edges"] = h.bin_edges;
  j["counts"] = h.counts;
  j["total"] = h.total();
  j["fraction_above_0_5"] = h.fraction_above;
  return j;
}

ordered_json to_json(const SingleVsEnsemble& c) {
  ordered_json j;
  j["schema_version"] = kReportSchemaVersion;
  j["per_expert_top1"] = c.per_expert;
  j["single_mean_top1"] = c.single_mean;
  j["ensemble_top1"] = c.ensemble;
  return j;
}

std::string per_class_csv(const EvalReport& r, const SplitAssignment& splits, const ClassCounts& counts) {
  std::string s = "class_index,split,train_count,top1\n";
  for (std::size_t c = 0; c < r.per_class_top1.size(); ++c) {
    const double v = r.per_class_top1[c];
    s += std::to_string(c) + "," + std::string(to_string(splits.split_of_class.at(c))) + "," +
         std::to_string(counts[c]) + "," + (std::isnan(v) ? std::string() : io::format_double(v)) + "\n";
  }
  return s;
}

std::string kl_csv(const KLProfile& p) {
  std::string s = "class_index,kl\n";
  for (std::size_t c = 0; c < p.per_class_kl.size(); ++c) {
    const double v = p.per_class_kl[c];
    s += std::to_string(c) + "," + (std::isnan(v) ? std::string() : io::format_double(v)) + "\n";
  }
  return s;
}

std::string histogram_csv(const HardNegHistogram& h) {
  std::string s = "bin_lo,bin_hi,count\n";
  for (std::size_t b = 0; b < h.counts.size(); ++b) {
    s += io::format_double(h.bin_edges[b]) + "," + io::format_double(h.bin_edges[b + 1]) + "," +
         std::to_string(h.counts[b]) + "\n";
  }
  return s;
}

}  // namespace ncl
