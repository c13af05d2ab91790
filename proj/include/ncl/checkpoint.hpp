#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "ncl/config.hpp"
#include "ncl/data.hpp"
#include "ncl/ensemble.hpp"
#include "ncl/matrix.hpp"

namespace ncl {

struct CheckpointExpert {
  std::vector<double> online;
  std::vector<double> momentum;
  Matrix queue;
};

// File layout (little-endian):
//   "NCLCKPT1"  u32 version
//   str config text, u64[] sample_shape, u64 num_classes, u64[] counts, str dataset hash
//   u64 epoch  u64 step
//   u64 K, then per expert: f64[] online, f64[] momentum, u64 rows, u64 cols, f64[] queue
//   str optimizer state, str anchor rng state, str sampler state
//   u64 fnv1a64 of every preceding byte
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  TrainConfig config;
  std::vector<std::size_t> sample_shape;
  std::size_t num_classes = 0;
  ClassCounts counts;
  std::string dataset_hash;
  std::size_t epoch = 0;  // completed epochs
  std::size_t step = 0;   // completed optimizer steps
  std::vector<CheckpointExpert> experts;
  std::string optimizer_state;
  std::string anchor_rng_state;
  std::string sampler_state;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::string_view bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Model state to and from an ensemble (queues included).
void capture_ensemble(const Ensemble& ensemble, Checkpoint& ckpt);
Ensemble restore_ensemble(const Checkpoint& ckpt);

}  // namespace ncl
