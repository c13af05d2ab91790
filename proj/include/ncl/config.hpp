#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "ncl/ensemble.hpp"
#include "ncl/losses.hpp"
#include "ncl/optimizer.hpp"

namespace ncl {

enum class BaselineLoss { kCe, kBsce };

std::string_view to_string(BaselineLoss loss);
BaselineLoss parse_baseline_loss(std::string_view text);

struct AblationFlags {
  bool use_nil_hard = true;
  bool use_ss = true;
  bool use_bod_all = true;
  bool use_bod_hard = true;

  bool operator==(const AblationFlags&) const = default;
};

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  double learning_rate = 0.05;
  LrSchedule lr_schedule = LrSchedule::kCosine;
  double weight_decay = 5e-4;
  OptimizerKind optimizer = OptimizerKind::kSgdMomentum;
  double momentum = 0.9;
  double lambda = 0.6;
  double beta = 0.3;
  double tau = 0.2;
  std::uint64_t seed = 0;
  AblationFlags flags;
  BaselineLoss baseline_loss = BaselineLoss::kBsce;
  GradientPolicy gradient_policy = GradientPolicy::kDetachTarget;
  // false distills plain softmax outputs instead of balanced ones
  bool distill_balanced = true;
  double grad_clip = 5.0;  // <= 0 disables
  std::string augmentation = "default";
  EnsembleConfig ensemble;

  void validate() const;

  // Key names used by config files and (with dashes) by CLI flags.
  static const std::vector<std::string>& keys();
  void set(std::string_view key, std::string_view value);
  std::string get(std::string_view key) const;

  // `key = value` lines, '#' comments.
  std::string to_text() const;
  void apply_text(std::string_view text);
  static TrainConfig load(const std::filesystem::path& path);

  std::string hash() const;

  bool operator==(const TrainConfig& other) const { return to_text() == other.to_text(); }
};

}  // namespace ncl
