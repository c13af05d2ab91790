#include "ncl/batcher.hpp"

#include <algorithm>
#include <numeric>

#include "ncl/error.hpp"
#include "ncl/io.hpp"

namespace ncl {

TwoViewBatch make_two_view_batch(const LabeledSet& data, std::span<const std::size_t> indices,
                                 std::span<const std::size_t> sample_shape, const AugmentationPolicy& policy,
                                 Rng& rng) {
  TwoViewBatch batch;
  batch.view_a = gather_rows(data.samples, indices);
  batch.view_b = batch.view_a;
  batch.sample_ids.assign(indices.begin(), indices.end());
  batch.labels.reserve(indices.size());
  for (std::size_t idx : indices) batch.labels.push_back(data.labels[idx]);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    policy.apply(batch.view_a.row(i), sample_shape, rng);
    policy.apply(batch.view_b.row(i), sample_shape, rng);
  }
  return batch;
}

BatchStream::BatchStream(const LabeledSet& data, std::vector<std::size_t> sample_shape, std::size_t batch_size,
                         AugmentationPolicy policy, std::uint64_t seed, SamplingMode mode, bool drop_last)
    : data_(&data),
      shape_(std::move(sample_shape)),
      batch_size_(batch_size),
      policy_(std::move(policy)),
      mode_(mode),
      drop_last_(drop_last),
      order_rng_(seed, "sampler"),
      augment_rng_(seed, "augmentation") {
  require(data.size() > 0, ErrorCode::kInvalidArgument, "cannot batch an empty sample store");
  require(batch_size > 0, ErrorCode::kInvalidArgument, "batch_size must be positive");
  if (mode_ == SamplingMode::kEpochPermutation) {
    require(batch_size <= data.size(), ErrorCode::kBatchTooLarge,
            "batch_size " + std::to_string(batch_size) + " exceeds store size " + std::to_string(data.size()));
  }
}

std::size_t BatchStream::batches_per_epoch() const {
  const std::size_t n = data_->size();
  if (mode_ == SamplingMode::kWithReplacement || drop_last_) return std::max<std::size_t>(1, n / batch_size_);
  return (n + batch_size_ - 1) / batch_size_;
}

std::vector<std::size_t> BatchStream::next_indices() {
  const std::size_t n = data_->size();
  std::vector<std::size_t> idx;
  if (mode_ == SamplingMode::kWithReplacement) {
    idx.resize(batch_size_);
    for (auto& i : idx) i = static_cast<std::size_t>(order_rng_.uniform_index(n));
    return idx;
  }
  const bool exhausted = cursor_ >= order_.size() || (drop_last_ && order_.size() - cursor_ < batch_size_);
  if (order_.empty() || exhausted) {
    order_.resize(n);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    order_rng_.shuffle(std::span(order_));
    cursor_ = 0;
  }
  const std::size_t take = std::min(batch_size_, order_.size() - cursor_);
  idx.assign(order_.begin() + static_cast<long>(cursor_), order_.begin() + static_cast<long>(cursor_ + take));
  cursor_ += take;
  return idx;
}

TwoViewBatch BatchStream::next_batch() {
  const auto idx = next_indices();
  return make_two_view_batch(*data_, idx, shape_, policy_, augment_rng_);
}

std::string BatchStream::save_state() const {
  io::BinaryWriter w;
  w.str(order_rng_.save_state());
  w.str(augment_rng_.save_state());
  w.u64(cursor_);
  w.u64(order_.size());
  for (std::size_t i : order_) w.u64(i);
  return w.buffer();
}

void BatchStream::load_state(const std::string& state) {
  io::BinaryReader r(state);
  order_rng_.load_state(r.str());
  augment_rng_.load_state(r.str());
  cursor_ = static_cast<std::size_t>(r.u64());
  order_.resize(static_cast<std::size_t>(r.u64()));
  for (auto& i : order_) {
    i = static_cast<std::size_t>(r.u64());
    require(i < data_->size(), ErrorCode::kFormat, "sampler state refers to a sample outside the store");
  }
  require(cursor_ <= order_.size(), ErrorCode::kFormat, "sampler cursor out of range");
}

}  // namespace ncl
