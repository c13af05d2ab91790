#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ncl/data.hpp"
#include "ncl/ensemble.hpp"
#include "ncl/matrix.hpp"

namespace ncl {

struct EvalReport {
  double overall_top1 = 0.0;
  // Absent when the split has no classes (or no eval samples).
  std::optional<double> many, medium, few;
  std::vector<double> per_class_top1;  // NaN for classes without eval samples
  std::size_t n_eval = 0;

  std::optional<double> split(Split s) const;
};

// Row-wise argmax; ties go to the lowest index.
std::vector<std::int32_t> predict(const Matrix& logits);
double top1(const Matrix& logits, std::span<const std::int32_t> labels);

EvalReport evaluate(const Matrix& logits, std::span<const std::int32_t> labels, const SplitAssignment& splits);
EvalReport evaluate_expert(const Ensemble& ensemble, std::size_t k, const LabeledSet& eval,
                           const SplitAssignment& splits);
EvalReport evaluate_ensemble(const Ensemble& ensemble, const LabeledSet& eval, const SplitAssignment& splits);

enum class ProbMode { kSoftmax, kBalanced };

struct KLOptions {
  ProbMode mode = ProbMode::kSoftmax;
  bool symmetric = false;  // mean of both directions instead of KL(a||b)
};

struct KLProfile {
  std::vector<double> per_class_kl;  // NaN for classes without samples
  double mean_kl = 0.0;              // over samples
};

// counts are only consulted in balanced mode.
KLProfile kl_profile(const Matrix& logits_a, const Matrix& logits_b, std::span<const std::int32_t> labels,
                     std::size_t num_classes, const ClassCounts* counts = nullptr, const KLOptions& options = {});

struct HardNegHistogram {
  std::vector<double> bin_edges;     // bins + 1 increasing edges over [0,1]
  std::vector<std::size_t> counts;   // bins
  std::size_t total() const;
  // Fraction of samples with score strictly above `threshold` (needs exact scores).
  double fraction_above = 0.0;
};

// Per sample, the largest softmax probability among non-ground-truth classes.
std::vector<double> hardest_negative_scores(const Matrix& logits, std::span<const std::int32_t> labels);
HardNegHistogram hardest_negative_histogram(const Matrix& logits, std::span<const std::int32_t> labels,
                                            std::size_t bins = 20, double threshold = 0.5);
HardNegHistogram histogram_from_scores(std::span<const double> scores, std::size_t bins, double threshold = 0.5);

struct SingleVsEnsemble {
  std::vector<double> per_expert;
  double single_mean = 0.0;
  double ensemble = 0.0;
};

SingleVsEnsemble compare_single_vs_ensemble(std::span<const Matrix> per_expert_logits,
                                            std::span<const std::int32_t> labels);
SingleVsEnsemble compare_single_vs_ensemble(const Ensemble& ensemble, const LabeledSet& eval);

constexpr int kReportSchemaVersion = 1;

nlohmann::ordered_json to_json(const EvalReport& report);
nlohmann::ordered_json to_json(const KLProfile& profile);
nlohmann::ordered_json to_json(const HardNegHistogram& histogram);
nlohmann::ordered_json to_json(const SingleVsEnsemble& comparison);

// class_index,split,train_count,top1
std::string per_class_csv(const EvalReport& report, const SplitAssignment& splits, const ClassCounts& counts);
// class_index,kl
std::string kl_csv(const KLProfile& profile);
// bin_lo,bin_hi,count
std::string histogram_csv(const HardNegHistogram& histogram);

}  // namespace ncl
