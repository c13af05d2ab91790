#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "ncl/augment.hpp"
#include "ncl/data.hpp"
#include "ncl/matrix.hpp"
#include "ncl/rng.hpp"

namespace ncl {

// Two independently augmented views of the same underlying samples.
struct TwoViewBatch {
  Matrix view_a;
  Matrix view_b;
  std::vector<std::int32_t> labels;
  std::vector<std::size_t> sample_ids;

  std::size_t size() const noexcept { return labels.size(); }
};

enum class SamplingMode {
  kEpochPermutation,  // every sample once per epoch, non-repeating
  kWithReplacement,   // i.i.d. uniform draws over the training set
};

// Instance-uniform batch producer. Class balance enters only through the
// loss, never through the sampler.
class BatchStream {
 public:
  BatchStream(const LabeledSet& data, std::vector<std::size_t> sample_shape, std::size_t batch_size,
              AugmentationPolicy policy, std::uint64_t seed, SamplingMode mode = SamplingMode::kEpochPermutation,
              bool drop_last = false);

  TwoViewBatch next_batch();
  std::size_t batches_per_epoch() const;
  std::size_t batch_size() const noexcept { return batch_size_; }

  // Sampler and augmentation state, for checkpoints.
  std::string save_state() const;
  void load_state(const std::string& state);

 private:
  std::vector<std::size_t> next_indices();

  const LabeledSet* data_;
  std::vector<std::size_t> shape_;
  std::size_t batch_size_;
  AugmentationPolicy policy_;
  SamplingMode mode_;
  bool drop_last_;
  Rng order_rng_;
  Rng augment_rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

TwoViewBatch make_two_view_batch(const LabeledSet& data, std::span<const std::size_t> indices,
                                 std::span<const std::size_t> sample_shape, const AugmentationPolicy& policy,
                                 Rng& rng);

}  // namespace ncl
