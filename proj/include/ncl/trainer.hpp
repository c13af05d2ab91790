#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ncl/checkpoint.hpp"
#include "ncl/config.hpp"
#include "ncl/data.hpp"
#include "ncl/ensemble.hpp"
#include "ncl/losses.hpp"

namespace ncl {

struct StepRecord {
  std::size_t step = 0;
  LossBreakdown losses;
  double lr = 0.0;
  double wall_ms = 0.0;  // kept in memory only; the metrics file stays reproducible
};

// One JSON object: step, nil_all, nil_hard, dis_all, dis_hard, con, total, lr.
std::string metrics_line(const StepRecord& record);

struct TrainOptions {
  // Where metrics.jsonl and checkpoint.bin go; empty keeps everything in memory.
  std::filesystem::path output_dir;
  bool resume = false;
  // Stop (after checkpointing) once this many epochs are complete, to
  // simulate an interrupted run.
  std::optional<std::size_t> stop_after_epoch;
  std::function<void(const StepRecord&)> on_step;
  std::function<void(std::size_t epoch, double mean_total)> on_epoch;
};

struct TrainResult {
  Ensemble ensemble;
  std::vector<StepRecord> log;  // steps run by this call
  std::size_t epochs_completed = 0;
  std::size_t steps_completed = 0;
};

TrainResult train(const TrainConfig& config, const SampleStore& store, const TrainOptions& options = {});
TrainResult train(const TrainConfig& config, const SampleStore& store, Ensemble initial,
                  const TrainOptions& options = {});

// Objective terms implied by a config (CE mode, ablation flags, lambda...).
ObjectiveTerms objective_terms(const TrainConfig& config);

// K single-expert runs that share nothing but the data; run k uses seed
// substream "baseline/k" of config.seed.
std::vector<Ensemble> train_independent_baselines(const TrainConfig& config, const SampleStore& store,
                                                  std::size_t k);

// Single student trained with NIL plus KL toward the frozen mean of the
// teachers' output distributions (all classes and a hard set mined from the
// teachers' mean logits), weighted by config.lambda. Every expert of every
// teacher ensemble counts as one teacher.
TrainResult offline_distill(std::span<const Ensemble* const> teachers, const TrainConfig& student_config,
                            const SampleStore& store, const TrainOptions& options = {});

struct AblationRow {
  std::string name;
  AblationFlags flags;
  bool ensemble_eval = false;  // report ensemble rather than mean single-expert accuracy
};

// The seven rows of the standard ablation: baseline, nil, ss, nil+bod_all,
// nil+nbod, nil+ss+nbod, and the last evaluated as an ensemble.
std::vector<AblationRow> standard_ablation_rows();
std::optional<AblationRow> find_ablation_row(std::string_view name);

struct AblationCell {
  std::string config_hash;
  double single_mean = 0.0;
  double ensemble = 0.0;
  double reported() const;
  bool ensemble_eval = false;
};

struct AblationResult {
  AblationRow row;
  AblationCell ce;
  AblationCell bsce;
};

// Config used for one cell of the grid.
TrainConfig ablation_config(const TrainConfig& base, const AblationRow& row, BaselineLoss loss);

// jobs > 1 runs cells on that many threads; results do not depend on it.
std::vector<AblationResult> run_ablation_grid(const TrainConfig& base, const SampleStore& store,
                                              std::span<const AblationRow> rows, std::size_t jobs = 1);

std::string ablation_csv(std::span<const AblationResult> results);

}  // namespace ncl
