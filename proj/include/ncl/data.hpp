#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ncl/matrix.hpp"

namespace ncl {

enum class CountProfile { kExponential, kStep };

std::string_view to_string(CountProfile profile);
CountProfile parse_count_profile(std::string_view text);

// Shape and class-size curve of a synthetic long-tailed dataset, plus the
// parameters of the toy generator behind it.
struct DatasetSpec {
  std::size_t num_classes = 20;
  std::size_t max_count = 500;
  double imbalance_factor = 100.0;
  CountProfile profile = CountProfile::kExponential;
  // {d} for vector samples, {channels, height, width} for images.
  std::vector<std::size_t> sample_shape{32};
  std::uint64_t seed = 0;

  // Norm of every class centre (vector data) or template (image data), in
  // units of `noise`. Vector class centres are mutually orthogonal when d >= C.
  double separation = 3.0;
  double noise = 1.0;
  std::size_t clusters_per_class = 1;
  double cluster_spread = 1.0;
  // Vector data: classes j with the same j % groups share a superclass
  // direction, so sibling classes are each other's likeliest confusions.
  // 0 disables. Centre cosine between siblings is group_similarity.
  std::size_t groups = 0;
  double group_similarity = 0.5;
  std::size_t eval_per_class = 100;
  // Step profile: fraction of classes holding max_count.
  double step_fraction = 0.5;

  std::size_t sample_dim() const;
  bool is_image() const { return sample_shape.size() == 3; }
  void validate() const;
};

// n_j for every class; every entry >= 1.
class ClassCounts {
 public:
  ClassCounts() = default;
  explicit ClassCounts(std::vector<std::size_t> counts);

  std::size_t num_classes() const noexcept { return counts_.size(); }
  std::size_t operator[](std::size_t j) const { return counts_[j]; }
  std::span<const std::size_t> values() const noexcept { return counts_; }
  std::size_t total() const;
  double imbalance_factor() const;

  static ClassCounts uniform(std::size_t num_classes, std::size_t count = 1);

  bool operator==(const ClassCounts&) const = default;

 private:
  std::vector<std::size_t> counts_;
};

enum class Split { kMany, kMedium, kFew };

std::string_view to_string(Split split);
Split parse_split(std::string_view text);

struct SplitAssignment {
  std::vector<Split> split_of_class;

  std::vector<std::size_t> classes_in(Split split) const;
  bool operator==(const SplitAssignment&) const = default;
};

// Samples as rows, labels in [0, C). Row index doubles as the sample id.
struct LabeledSet {
  Matrix samples;
  std::vector<std::int32_t> labels;

  std::size_t size() const noexcept { return labels.size(); }
};

// Immutable after construction: a long-tailed training set and a balanced
// evaluation set drawn from the same class-conditional distributions.
struct SampleStore {
  DatasetSpec spec;
  ClassCounts counts;
  SplitAssignment splits;
  LabeledSet train;
  LabeledSet eval;
};

ClassCounts synthesize_counts(const DatasetSpec& spec);
SampleStore synthesize_dataset(const DatasetSpec& spec, const ClassCounts& counts);

// many: count > 100, medium: 20 <= count <= 100, few: count < 20.
SplitAssignment assign_splits(const ClassCounts& counts);

// Directory layout: meta.json, train_samples.f64, train_labels.i32,
// eval_samples.f64, eval_labels.i32, counts.csv.
void save_store(const SampleStore& store, const std::filesystem::path& dir);
SampleStore load_store(const std::filesystem::path& dir);

// `class_index,count,split` rows.
std::string counts_csv(const ClassCounts& counts, const SplitAssignment& splits);

// Content hash over samples, labels and counts (not the JSON formatting).
std::string dataset_hash(const SampleStore& store);

}  // namespace ncl
