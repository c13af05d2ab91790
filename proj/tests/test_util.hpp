#pragma once

#include <cmath>
#include <vector>

#include "ncl/config.hpp"
#include "ncl/data.hpp"
#include "ncl/matrix.hpp"
#include "ncl/rng.hpp"

namespace ncl::testing {

inline Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (double& v : m.flat()) v = scale * rng.normal();
  return m;
}

inline Matrix random_unit_rows(std::size_t rows, std::size_t cols, Rng& rng) {
  Matrix m = random_matrix(rows, cols, rng);
  for (std::size_t i = 0; i < rows; ++i) {
    double n = 0.0;
    for (double v : m.row(i)) n += v * v;
    n = std::sqrt(n);
    for (double& v : m.row(i)) v /= n;
  }
  return m;
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)}); }

// Small long-tailed set that trains in well under a second.
inline SampleStore tiny_store(std::uint64_t seed = 1, std::size_t classes = 5) {
  DatasetSpec s;
  s.num_classes = classes;
  s.max_count = 40;
  s.imbalance_factor = 10.0;
  s.sample_shape = {8};
  s.seed = seed;
  s.eval_per_class = 20;
  return synthesize_dataset(s, synthesize_counts(s));
}

inline TrainConfig tiny_config() {
  TrainConfig c;
  c.epochs = 3;
  c.batch_size = 16;
  c.learning_rate = 0.05;
  c.ensemble.num_experts = 3;
  c.ensemble.encoder_spec = "mlp:16";
  c.ensemble.projection_spec = "mlp:16";
  c.ensemble.embedding_dim = 8;
  c.ensemble.queue_size = 32;
  c.augmentation = "jitter:0.3";
  return c;
}

}  // namespace ncl::testing
