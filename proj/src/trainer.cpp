#include "ncl/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "ncl/batcher.hpp"
#include "ncl/error.hpp"
#include "ncl/eval.hpp"
#include "ncl/io.hpp"
#include "ncl/kernels.hpp"
#include "ncl/optimizer.hpp"

namespace ncl {

std::string metrics_line(const StepRecord& r) {
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["nil_all"] = r.losses.nil_all;
  j["nil_hard"] = r.losses.nil_hard;
  j["dis_all"] = r.losses.dis_all;
  j["dis_hard"] = r.losses.dis_hard;
  j["con"] = r.losses.con;
  j["total"] = r.losses.total;
  j["lr"] = r.lr;
  return j.dump();
}

ObjectiveTerms objective_terms(const TrainConfig& c) {
  ObjectiveTerms t;
  t.nil_hard = c.flags.use_nil_hard;
  t.self_supervision = c.flags.use_ss;
  t.bod_all = c.flags.use_bod_all;
  t.bod_hard = c.flags.use_bod_hard;
  t.lambda = c.lambda;
  t.tau = c.tau;
  t.policy = c.gradient_policy;
  return t;
}

namespace {

constexpr const char* kMetricsFile = "metrics.jsonl";
constexpr const char* kCheckpointFile = "checkpoint.bin";

AugmentationPolicy augmentation_for(const TrainConfig& c, std::span<const std::size_t> shape) {
  return c.augmentation == "default" ? AugmentationPolicy::default_for(shape) : AugmentationPolicy::parse(c.augmentation);
}

std::string logit_stats(const ExpertBatchOutputs& out) {
  std::ostringstream os;
  for (std::size_t k = 0; k < out.num_experts(); ++k) {
    double lo = INFINITY, hi = -INFINITY, sum = 0.0;
    std::size_t bad = 0;
    for (double v : out.logits[k].flat()) {
      if (!std::isfinite(v)) {
        ++bad;
        continue;
      }
      lo = std::min(lo, v);
      hi = std::max(hi, v);
      sum += v;
    }
    const auto n = out.logits[k].size();
    os << " expert " << k << ": min=" << lo << " max=" << hi << " mean=" << (n > bad ? sum / double(n - bad) : 0.0)
       << " nonfinite=" << bad << ";";
  }
  return os.str();
}

[[noreturn]] void abort_nonfinite(const TrainOptions& opt, std::size_t step, const LossBreakdown& l,
                                  const ExpertBatchOutputs& out, const ClassCounts& counts) {
  std::ostringstream os;
  os << "non-finite loss at step " << step << " (nil_all=" << l.nil_all << " nil_hard=" << l.nil_hard
     << " dis_all=" << l.dis_all << " dis_hard=" << l.dis_hard << " con=" << l.con << ");" << logit_stats(out)
     << " counts:";
  for (auto n : counts.values()) os << ' ' << n;
  if (!opt.output_dir.empty()) io::write_file(opt.output_dir / "nonfinite_dump.txt", os.str() + "\n");
  fail(ErrorCode::kNonFiniteLoss, os.str());
}

bool finite(const LossBreakdown& l) {
  return std::isfinite(l.nil_all) && std::isfinite(l.nil_hard) && std::isfinite(l.dis_all) &&
         std::isfinite(l.dis_hard) && std::isfinite(l.con) && std::isfinite(l.total);
}

// Distillation toward the frozen teachers, added onto an objective that
// already holds the student's NIL (and SS) terms.
void add_teacher_terms(std::span<const Ensemble* const> teachers, const TrainConfig& cfg, const TwoViewBatch& batch,
                       const Matrix& student_logits, const ClassPrior& prior, std::size_t hard_count,
                       ObjectiveResult& res) {
  const auto& kt = kernels::active();
  std::vector<Matrix> zs;
  for (const Ensemble* t : teachers) {
    for (std::size_t k = 0; k < t->num_experts(); ++k) zs.push_back(t->expert_logits(k, batch.view_a));
  }
  const Matrix mean_logits = ensemble_logits(zs);
  Matrix target(student_logits.rows(), student_logits.cols());
  for (const auto& z : zs) {
    const Matrix p = balanced_probs(z, prior);
    kt.axpy(1.0 / double(zs.size()), p.data(), target.data(), p.size());
  }
  double dis_all = 0.0, dis_hard = 0.0;
  if (cfg.flags.use_bod_all) {
    const LossValue lv = distill_to_target(student_logits, target, prior);
    dis_all = lv.value;
    if (cfg.lambda != 0.0) kt.axpy(cfg.lambda, lv.grad[0].data(), res.grad_logits[0].data(), lv.grad[0].size());
  }
  if (cfg.flags.use_bod_hard) {
    const HardCategorySet set = mine_hard_categories(mean_logits, batch.labels, hard_count);
    const LossValue lv = distill_to_target_hard(student_logits, target, prior, set);
    dis_hard = lv.value;
    if (cfg.lambda != 0.0) kt.axpy(cfg.lambda, lv.grad[0].data(), res.grad_logits[0].data(), lv.grad[0].size());
  }
  const auto& l = res.losses;
  res.losses = total_loss(l.nil_all, l.nil_hard, l.con, dis_all, dis_hard, cfg.lambda);
}

TrainResult run_training(const TrainConfig& cfg, const SampleStore& store, Ensemble ens, const TrainOptions& opt,
                         std::span<const Ensemble* const> teachers) {
  cfg.validate();
  require(store.train.size() > 0, ErrorCode::kInvalidArgument, "training set is empty");
  require(ens.num_classes() == store.counts.num_classes(), ErrorCode::kShapeMismatch,
          "model and dataset disagree on the number of classes");
  require(teachers.empty() || ens.num_experts() == 1, ErrorCode::kInvalidArgument,
          "offline distillation trains a single student");

  const std::vector<std::size_t> shape = store.spec.sample_shape;
  const std::size_t num_classes = store.counts.num_classes();
  const bool ce = cfg.baseline_loss == BaselineLoss::kCe;
  const ClassPrior supervised = ce ? ClassPrior::uniform(num_classes) : ClassPrior::balanced(store.counts);
  const ClassPrior distill =
      (ce || !cfg.distill_balanced) ? ClassPrior::uniform(num_classes) : ClassPrior::balanced(store.counts);
  const std::size_t hard_count = hard_count_for(cfg.beta, num_classes);
  ObjectiveTerms terms = objective_terms(cfg);

  BatchStream stream(store.train, shape, cfg.batch_size, augmentation_for(cfg, shape), cfg.seed);
  Rng anchor_rng(cfg.seed, "anchor");
  OptimizerSettings os;
  os.kind = cfg.optimizer;
  os.momentum = cfg.momentum;
  os.weight_decay = cfg.weight_decay;
  std::vector<std::size_t> sizes(ens.num_experts(), ens.architecture().param_count());
  Optimizer optimizer(os, sizes);

  const std::size_t per_epoch = stream.batches_per_epoch();
  const std::size_t total_steps = cfg.epochs * per_epoch;
  const std::string data_hash = dataset_hash(store);
  std::size_t epoch = 0, step = 0;

  const bool persist = !opt.output_dir.empty();
  const auto metrics_path = opt.output_dir / kMetricsFile;
  const auto ckpt_path = opt.output_dir / kCheckpointFile;
  if (opt.resume) {
    require(persist, ErrorCode::kInvalidArgument, "resume needs an output directory");
    const Checkpoint ck = load_checkpoint(ckpt_path);
    require(ck.config.hash() == cfg.hash(), ErrorCode::kInvalidArgument,
            "checkpoint was written with a different config");
    require(ck.dataset_hash == data_hash, ErrorCode::kInvalidArgument, "checkpoint was written for a different dataset");
    ens = restore_ensemble(ck);
    optimizer.load_state(ck.optimizer_state);
    anchor_rng.load_state(ck.anchor_rng_state);
    stream.load_state(ck.sampler_state);
    epoch = ck.epoch;
    step = ck.step;
    // Keep exactly the lines of the steps that the checkpoint covers.
    std::string kept;
    std::istringstream in(std::filesystem::exists(metrics_path) ? io::read_file(metrics_path) : std::string());
    std::string line;
    for (std::size_t i = 0; i < step && std::getline(in, line); ++i) kept += line + "\n";
    io::write_file(metrics_path, kept);
  } else if (persist) {
    io::write_file(metrics_path, "");
  }
  std::ofstream metrics;
  if (persist) {
    metrics.open(metrics_path, std::ios::app | std::ios::binary);
    require(bool(metrics), ErrorCode::kIo, "cannot open " + metrics_path.string());
  }

  TrainResult result{std::move(ens), {}, 0, 0};
  Ensemble& model = result.ensemble;

  auto save = [&] {
    if (!persist) return;
    Checkpoint ck;
    ck.config = cfg;
    ck.sample_shape = shape;
    ck.num_classes = num_classes;
    ck.counts = store.counts;
    ck.dataset_hash = data_hash;
    ck.epoch = epoch;
    ck.step = step;
    capture_ensemble(model, ck);
    ck.optimizer_state = optimizer.save_state();
    ck.anchor_rng_state = anchor_rng.save_state();
    ck.sampler_state = stream.save_state();
    save_checkpoint(ck, ckpt_path);
  };

  const std::size_t K = model.num_experts();
  ForwardCache cache;
  std::vector<HardCategorySet> own_sets(K);
  std::vector<Matrix> queues;
  std::vector<std::vector<double>*> grads;
  for (std::size_t k = 0; k < K; ++k) grads.push_back(&model.expert(k).grad);

  while (epoch < cfg.epochs) {
    if (opt.stop_after_epoch && epoch >= *opt.stop_after_epoch) break;
    double epoch_total = 0.0;
    for (std::size_t b = 0; b < per_epoch; ++b) {
      const auto t0 = std::chrono::steady_clock::now();
      const double lr = scheduled_lr(cfg.lr_schedule, cfg.learning_rate, step, total_steps);
      const TwoViewBatch batch = stream.next_batch();
      const ExpertBatchOutputs out = model.forward(batch, cache, terms.self_supervision);
      bool finite_logits = true;
      for (const auto& z : out.logits) {
        for (double v : z.flat()) finite_logits = finite_logits && std::isfinite(v);
      }
      if (!finite_logits) abort_nonfinite(opt, step, {NAN, NAN, NAN, NAN, NAN, NAN}, out, store.counts);

      for (std::size_t k = 0; k < K; ++k) own_sets[k] = mine_hard_categories(out.logits[k], batch.labels, hard_count);
      const std::size_t anchor = static_cast<std::size_t>(anchor_rng.uniform_index(K));
      const HardCategorySet shared = mine_hard_categories(out.logits[anchor], batch.labels, hard_count);
      queues.clear();
      if (terms.self_supervision) {
        for (std::size_t k = 0; k < K; ++k) queues.push_back(model.expert(k).queue.contents());
      }

      ObjectiveResult res;
      res = ncl_objective(out, batch.labels, supervised, distill, own_sets, shared, queues, terms);
      if (!teachers.empty()) add_teacher_terms(teachers, cfg, batch, out.logits[0], distill, hard_count, res);
      if (!finite(res.losses)) abort_nonfinite(opt, step, res.losses, out, store.counts);

      model.zero_grad();
      model.backward(cache, res.grad_logits,
                     terms.self_supervision ? std::span<const Matrix>(res.grad_embeddings) : std::span<const Matrix>());
      clip_global_norm(grads, cfg.grad_clip);
      for (std::size_t k = 0; k < K; ++k) optimizer.step(k, model.expert(k).online, model.expert(k).grad, lr);
      optimizer.finish_step();
      for (std::size_t k = 0; k < K; ++k) {
        ema_update(model.expert(k), cfg.ensemble.ema_momentum);
        if (terms.self_supervision) enqueue(model.expert(k), out.momentum_embeddings[k]);
      }

      StepRecord rec;
      rec.step = step;
      rec.losses = res.losses;
      rec.lr = lr;
      rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      if (persist) metrics << metrics_line(rec) << '\n';
      if (opt.on_step) opt.on_step(rec);
      result.log.push_back(rec);
      epoch_total += rec.losses.total;
      ++step;
    }
    ++epoch;
    if (persist) metrics.flush();
    save();
    if (opt.on_epoch) opt.on_epoch(epoch, epoch_total / double(per_epoch));
  }
  result.epochs_completed = epoch;
  result.steps_completed = step;
  return result;
}

}  // namespace

TrainResult train(const TrainConfig& config, const SampleStore& store, const TrainOptions& options) {
  config.validate();
  Ensemble ens(config.ensemble, store.spec.sample_shape, store.counts.num_classes(), config.seed);
  return run_training(config, store, std::move(ens), options, {});
}

TrainResult train(const TrainConfig& config, const SampleStore& store, Ensemble initial, const TrainOptions& options) {
  require(initial.config().num_experts == config.ensemble.num_experts, ErrorCode::kInvalidArgument,
          "initial ensemble does not match the config");
  return run_training(config, store, std::move(initial), options, {});
}

std::vector<Ensemble> train_independent_baselines(const TrainConfig& config, const SampleStore& store, std::size_t k) {
  std::vector<Ensemble> out;
  for (std::size_t i = 0; i < k; ++i) {
    TrainConfig c = config;
    c.ensemble.num_experts = 1;
    c.seed = substream_seed(config.seed, "baseline/" + std::to_string(i));
    out.push_back(train(c, store).ensemble);
  }
  return out;
}

TrainResult offline_distill(std::span<const Ensemble* const> teachers, const TrainConfig& student_config,
                            const SampleStore& store, const TrainOptions& options) {
  require(!teachers.empty(), ErrorCode::kInvalidArgument, "offline distillation needs at least one teacher");
  for (const Ensemble* t : teachers) {
    require(t != nullptr && t->num_classes() == store.counts.num_classes(), ErrorCode::kShapeMismatch,
            "teacher does not match the dataset");
  }
  TrainConfig c = student_config;
  c.ensemble.num_experts = 1;
  Ensemble ens(c.ensemble, store.spec.sample_shape, store.counts.num_classes(), c.seed);
  return run_training(c, store, std::move(ens), options, teachers);
}

std::vector<AblationRow> standard_ablation_rows() {
  auto row = [](std::string name, bool nil, bool ss, bool all, bool hard, bool ens) {
    return AblationRow{std::move(name), AblationFlags{nil, ss, all, hard}, ens};
  };
  return {row("baseline", false, false, false, false, false), row("nil", true, false, false, false, false),
          row("ss", false, true, false, false, false),        row("nil+bod_all", true, false, true, false, false),
          row("nil+nbod", true, false, true, true, false),    row("nil+ss+nbod", true, true, true, true, false),
          row("ncl+ensemble", true, true, true, true, true)};
}

std::optional<AblationRow> find_ablation_row(std::string_view name) {
  for (auto& r : standard_ablation_rows()) {
    if (r.name == name) return r;
  }
  return std::nullopt;
}

double AblationCell::reported() const { return ensemble_eval ? ensemble : single_mean; }

TrainConfig ablation_config(const TrainConfig& base, const AblationRow& row, BaselineLoss loss) {
  TrainConfig c = base;
  c.flags = row.flags;
  c.baseline_loss = loss;
  return c;
}

std::vector<AblationResult> run_ablation_grid(const TrainConfig& base, const SampleStore& store,
                                              std::span<const AblationRow> rows, std::size_t jobs) {
  // Rows that differ only in how they are evaluated share one training run.
  std::map<std::string, TrainConfig> unique;
  for (const auto& r : rows) {
    for (auto loss : {BaselineLoss::kCe, BaselineLoss::kBsce}) {
      const TrainConfig c = ablation_config(base, r, loss);
      unique.emplace(c.hash(), c);
    }
  }
  std::vector<std::pair<std::string, TrainConfig>> work(unique.begin(), unique.end());
  std::map<std::string, SingleVsEnsemble> done;
  std::mutex mu;
  std::size_t next = 0;
  std::exception_ptr error;
  auto worker = [&] {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard lock(mu);
        if (next >= work.size() || error) return;
        i = next++;
      }
      try {
        const TrainResult tr = train(work[i].second, store);
        const SingleVsEnsemble cmp = compare_single_vs_ensemble(tr.ensemble, store.eval);
        std::lock_guard lock(mu);
        done[work[i].first] = cmp;
      } catch (...) {
        std::lock_guard lock(mu);
        if (!error) error = std::current_exception();
      }
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(jobs, work.size()));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);

  std::vector<AblationResult> out;
  for (const auto& r : rows) {
    AblationResult res{r, {}, {}};
    for (auto loss : {BaselineLoss::kCe, BaselineLoss::kBsce}) {
      AblationCell& cell = loss == BaselineLoss::kCe ? res.ce : res.bsce;
      cell.config_hash = ablation_config(base, r, loss).hash();
      const auto& cmp = done.at(cell.config_hash);
      cell.single_mean = cmp.single_mean;
      cell.ensemble = cmp.ensemble;
      cell.ensemble_eval = r.ensemble_eval;
    }
    out.push_back(std::move(res));
  }
  return out;
}

std::string ablation_csv(std::span<const AblationResult> results) {
  std::string s =
      "row,nil_hard,ss,bod_all,bod_hard,ensemble,acc_ce,acc_bsce,ce_single,ce_ensemble,bsce_single,bsce_ensemble,"
      "ce_config_hash,bsce_config_hash\n";
  auto b = [](bool v) { return v ? "1," : "0,"; };
  for (const auto& r : results) {
    s += r.row.name + ",";
    s += b(r.row.flags.use_nil_hard);
    s += b(r.row.flags.use_ss);
    s += b(r.row.flags.use_bod_all);
    s += b(r.row.flags.use_bod_hard);
    s += b(r.row.ensemble_eval);
    for (double v : {r.ce.reported(), r.bsce.reported(), r.ce.single_mean, r.ce.ensemble, r.bsce.single_mean,
                     r.bsce.ensemble}) {
      s += io::format_double(v) + ",";
    }
    s += r.ce.config_hash + "," + r.bsce.config_hash + "\n";
  }
  return s;
}

}  // namespace ncl
