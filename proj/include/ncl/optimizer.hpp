#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ncl {

enum class OptimizerKind { kSgdMomentum, kAdam };
enum class LrSchedule { kCosine, kStep, kConstant };

std::string_view to_string(OptimizerKind kind);
OptimizerKind parse_optimizer_kind(std::string_view text);
std::string_view to_string(LrSchedule schedule);
LrSchedule parse_lr_schedule(std::string_view text);

// Learning rate at `step` of `total_steps`. Step schedule: x0.1 at 60% and
// again at 80% of training.
double scheduled_lr(LrSchedule schedule, double base_lr, std::size_t step, std::size_t total_steps);

struct OptimizerSettings {
  OptimizerKind kind = OptimizerKind::kSgdMomentum;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
};

// One optimizer over several parameter groups (one per expert). Only the
// buffers handed to step() are ever written.
class Optimizer {
 public:
  Optimizer(OptimizerSettings settings, std::vector<std::size_t> group_sizes);

  void step(std::size_t group, std::span<double> params, std::span<const double> grad, double lr);
  // Counts one joint update; call once after stepping every group.
  void finish_step() { ++steps_; }
  std::size_t steps() const noexcept { return steps_; }

  std::string save_state() const;
  void load_state(std::string_view blob);

 private:
  OptimizerSettings settings_;
  std::vector<std::vector<double>> first_;   // momentum buffer / Adam m
  std::vector<std::vector<double>> second_;  // Adam v
  std::size_t steps_ = 0;
};

// Scales every gradient buffer so the joint L2 norm is at most max_norm.
// Returns the norm before clipping. max_norm <= 0 disables clipping.
double clip_global_norm(std::span<std::vector<double>*> grads, double max_norm);

}  // namespace ncl
