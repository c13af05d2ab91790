#include "ncl/optimizer.hpp"

#include <cmath>
#include <numbers>

#include "ncl/error.hpp"
#include "ncl/io.hpp"
#include "ncl/kernels.hpp"

namespace ncl {

std::string_view to_string(OptimizerKind kind) {
  return kind == OptimizerKind::kAdam ? "adam" : "sgd_momentum";
}

OptimizerKind parse_optimizer_kind(std::string_view text) {
  if (text == "sgd_momentum" || text == "sgd") return OptimizerKind::kSgdMomentum;
  if (text == "adam") return OptimizerKind::kAdam;
  fail(ErrorCode::kInvalidArgument, "unknown optimizer '" + std::string(text) + "'");
}

std::string_view to_string(LrSchedule schedule) {
  switch (schedule) {
    case LrSchedule::kCosine: return "cosine";
    case LrSchedule::kStep: return "step";
    case LrSchedule::kConstant: return "constant";
  }
  return "cosine";
}

LrSchedule parse_lr_schedule(std::string_view text) {
  if (text == "cosine") return LrSchedule::kCosine;
  if (text == "step") return LrSchedule::kStep;
  if (text == "constant") return LrSchedule::kConstant;
  fail(ErrorCode::kInvalidArgument, "unknown lr_schedule '" + std::string(text) + "'");
}

double scheduled_lr(LrSchedule schedule, double base_lr, std::size_t step, std::size_t total_steps) {
  if (total_steps == 0) return base_lr;
  const double t = static_cast<double>(step) / static_cast<double>(total_steps);
  switch (schedule) {
    case LrSchedule::kCosine: return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
    case LrSchedule::kStep: return base_lr * (t < 0.6 ? 1.0 : t < 0.8 ? 0.1 : 0.01);
    case LrSchedule::kConstant: return base_lr;
  }
  return base_lr;
}

Optimizer::Optimizer(OptimizerSettings settings, std::vector<std::size_t> group_sizes) : settings_(settings) {
  require(settings.momentum >= 0.0 && settings.momentum < 1.0, ErrorCode::kOutOfRange, "momentum must lie in [0,1)");
  require(settings.weight_decay >= 0.0, ErrorCode::kOutOfRange, "weight_decay must be >= 0");
  for (std::size_t n : group_sizes) {
    first_.emplace_back(n, 0.0);
    second_.emplace_back(settings.kind == OptimizerKind::kAdam ? n : 0, 0.0);
  }
}

void Optimizer::step(std::size_t group, std::span<double> params, std::span<const double> grad, double lr) {
  require(group < first_.size(), ErrorCode::kOutOfRange, "optimizer group out of range");
  auto& m = first_[group];
  require(params.size() == m.size() && grad.size() == m.size(), ErrorCode::kShapeMismatch,
          "optimizer buffer size mismatch");
  const double wd = settings_.weight_decay;
  if (settings_.kind == OptimizerKind::kSgdMomentum) {
    const double mu = settings_.momentum;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double g = grad[i] + wd * params[i];
      m[i] = mu * m[i] + g;
      params[i] -= lr * m[i];
    }
    return;
  }
  auto& v = second_[group];
  const double b1 = settings_.adam_beta1, b2 = settings_.adam_beta2;
  const double t = static_cast<double>(steps_ + 1);
  const double c1 = 1.0 - std::pow(b1, t), c2 = 1.0 - std::pow(b2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grad[i] + wd * params[i];
    m[i] = b1 * m[i] + (1.0 - b1) * g;
    v[i] = b2 * v[i] + (1.0 - b2) * g * g;
    params[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + settings_.adam_eps);
  }
}

std::string Optimizer::save_state() const {
  io::BinaryWriter w;
  w.str(to_string(settings_.kind));
  w.u64(steps_);
  w.u64(first_.size());
  for (std::size_t g = 0; g < first_.size(); ++g) {
    w.f64s(first_[g]);
    w.f64s(second_[g]);
  }
  return w.buffer();
}

void Optimizer::load_state(std::string_view blob) {
  io::BinaryReader r(blob);
  require(parse_optimizer_kind(r.str()) == settings_.kind, ErrorCode::kFormat, "optimizer kind differs");
  steps_ = r.u64();
  const auto groups = r.u64();
  require(groups == first_.size(), ErrorCode::kFormat, "optimizer group count differs");
  for (std::size_t g = 0; g < groups; ++g) {
    auto m = r.f64s();
    auto v = r.f64s();
    require(m.size() == first_[g].size() && v.size() == second_[g].size(), ErrorCode::kFormat,
            "optimizer buffer size differs");
    first_[g] = std::move(m);
    second_[g] = std::move(v);
  }
}

double clip_global_norm(std::span<std::vector<double>*> grads, double max_norm) {
  const auto& kt = kernels::active();
  double sq = 0.0;
  for (const auto* g : grads) sq += kt.dot(g->data(), g->data(), g->size());
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto* g : grads) {
      for (double& x : *g) x *= s;
    }
  }
  return norm;
}

}  // namespace ncl
