// Acceptance checks: one PASS/FAIL line per criterion.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "ncl/cli.hpp"
#include "ncl/config.hpp"
#include "ncl/data.hpp"
#include "ncl/eval.hpp"
#include "ncl/losses.hpp"
#include "ncl/trainer.hpp"

using namespace ncl;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// 1 ------------------------------------------------------------------------

Outcome gradient_oracle() {
  const auto t0 = Clock::now();
  Rng rng(2024);
  gradcheck::Report worst;
  for (int t = 0; t < 50; ++t) {
    auto in = gradcheck::random_instance(rng, 3, 4, 7, 8);
    const auto r = gradcheck::check_instance(in);
    worst.nil_all = std::max(worst.nil_all, r.nil_all);
    worst.nil_hard = std::max(worst.nil_hard, r.nil_hard);
    worst.nbod_all = std::max(worst.nbod_all, r.nbod_all);
    worst.nbod_hard = std::max(worst.nbod_hard, r.nbod_hard);
    worst.contrastive = std::max(worst.contrastive, r.contrastive);
    worst.total_logits = std::max(worst.total_logits, r.total_logits);
    worst.total_embeddings = std::max(worst.total_embeddings, r.total_embeddings);
  }
  const double secs = seconds_since(t0);
  return {worst.worst() < 1e-4 && secs < 60.0,
          fmt("max rel err nil_all %.1e nil_hard %.1e nbod_all %.1e nbod_hard %.1e con %.1e total %.1e/%.1e, %.1fs",
              worst.nil_all, worst.nil_hard, worst.nbod_all, worst.nbod_hard, worst.contrastive, worst.total_logits,
              worst.total_embeddings, secs)};
}

// 2 ------------------------------------------------------------------------

Outcome probability_invariants() {
  const auto t0 = Clock::now();
  Rng rng(7);
  double row_err = 0, shift_err = 0, scale_err = 0, reduce_err = 0;
  bool open_interval = true;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t c = 2 + rng.uniform_index(30), b = 1 + rng.uniform_index(4);
    Matrix z(b, c);
    for (double& v : z.flat()) v = rng.normal(0.0, 4.0);
    std::vector<std::size_t> n(c), n_scaled(c);
    const std::size_t factor = 2 + rng.uniform_index(50);
    for (std::size_t j = 0; j < c; ++j) {
      n[j] = 1 + rng.uniform_index(1000);
      n_scaled[j] = n[j] * factor;
    }
    const ClassCounts counts(n), scaled(n_scaled);
    Matrix shifted = z;
    for (std::size_t i = 0; i < b; ++i) {
      const double s = rng.normal(0.0, 100.0);
      for (double& v : shifted.row(i)) v += s;
    }
    const Matrix sp = softmax_probs(z), bp = balanced_probs(z, counts);
    const Matrix sp_s = softmax_probs(shifted), bp_s = balanced_probs(shifted, counts), bp_c = balanced_probs(z, scaled);
    std::vector<std::int32_t> y(b);
    for (auto& v : y) v = static_cast<std::int32_t>(rng.uniform_index(c));
    const auto full = all_categories(b, c);
    const Matrix hp = hard_balanced_probs(z, counts, full);
    const auto hard = mine_hard_categories(z, y, 1 + rng.uniform_index(c - 1));
    const Matrix hq = hard_balanced_probs(z, counts, hard);
    for (std::size_t i = 0; i < b; ++i) {
      double s1 = 0, s2 = 0, s3 = 0;
      for (std::size_t j = 0; j < c; ++j) {
        s1 += sp(i, j);
        s2 += bp(i, j);
        open_interval = open_interval && sp(i, j) > 0 && sp(i, j) < 1 && bp(i, j) > 0 && bp(i, j) < 1;
        shift_err = std::max({shift_err, std::abs(sp(i, j) - sp_s(i, j)), std::abs(bp(i, j) - bp_s(i, j))});
        scale_err = std::max(scale_err, std::abs(bp(i, j) - bp_c(i, j)));
        reduce_err = std::max(reduce_err, std::abs(hp(i, j) - bp(i, j)));
      }
      for (double v : hq.row(i)) s3 += v;
      row_err = std::max({row_err, std::abs(s1 - 1), std::abs(s2 - 1), std::abs(s3 - 1)});
    }
    // Loss-level reductions with the full set.
    std::vector<Matrix> experts{z, shifted};
    const auto prior = ClassPrior::balanced(counts);
    const std::vector<HardCategorySet> fulls(2, full);
    reduce_err = std::max(reduce_err, std::abs(nil_hard_loss(experts, y, prior, fulls).value -
                                               nil_all_loss(experts, y, prior).value));
    reduce_err = std::max(reduce_err,
                          std::abs(nbod_hard_loss(experts, prior, full).value - nbod_all_loss(experts, prior).value));
  }
  const double secs = seconds_since(t0);
  const bool pass = row_err < 1e-6 && shift_err < 1e-6 && scale_err < 1e-6 && reduce_err < 1e-6 && open_interval &&
                    secs < 60.0;
  return {pass, fmt("1000 trials: row-sum %.1e shift %.1e count-scale %.1e full-set %.1e, entries in (0,1): %s, %.1fs",
                    row_err, shift_err, scale_err, reduce_err, open_interval ? "yes" : "no", secs)};
}

// 3 ------------------------------------------------------------------------

// Independent oracle: stable sort of the non-GT classes by descending logit.
std::vector<std::size_t> sort_oracle(std::span<const double> z, std::size_t y, std::size_t hard) {
  std::vector<std::size_t> neg;
  for (std::size_t j = 0; j < z.size(); ++j)
    if (j != y) neg.push_back(j);
  std::stable_sort(neg.begin(), neg.end(), [&](std::size_t a, std::size_t b) { return z[a] > z[b]; });
  std::vector<std::size_t> out(neg.begin(), neg.begin() + static_cast<std::ptrdiff_t>(hard));
  out.push_back(y);
  std::sort(out.begin(), out.end());
  return out;
}

Outcome hcm_suite() {
  Rng rng(99);
  int mismatches = 0, missing_gt = 0, bad_size = 0, ties = 0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t c = 2 + rng.uniform_index(25);
    const std::size_t hard = 1 + rng.uniform_index(c - 1);
    Matrix z(1, c);
    // Coarse integer logits on half the draws so ties are frequent.
    const bool coarse = t % 2 == 0;
    for (double& v : z.flat()) v = coarse ? double(rng.uniform_index(4)) : rng.normal();
    const std::vector<std::int32_t> y{static_cast<std::int32_t>(rng.uniform_index(c))};
    const auto set = mine_hard_categories(z, y, hard);
    const auto& got = set.indices[0];
    if (std::find(got.begin(), got.end(), std::size_t(y[0])) == got.end()) ++missing_gt;
    if (got.size() != hard + 1) ++bad_size;
    if (got != sort_oracle(z.row(0), std::size_t(y[0]), hard)) ++mismatches;
    if (coarse) {
      std::vector<double> v(z.flat().begin(), z.flat().end());
      std::sort(v.begin(), v.end());
      ties += std::adjacent_find(v.begin(), v.end()) != v.end();
    }
  }
  return {mismatches == 0 && missing_gt == 0 && bad_size == 0,
          fmt("1000 draws (%d with ties): oracle mismatches %d, GT missing %d, wrong size %d", ties, mismatches,
              missing_gt, bad_size)};
}

// 4 ------------------------------------------------------------------------

Outcome degenerate_cases() {
  Rng rng(5);
  bool k1 = true, same = true, empty_q = true, lam0 = true;
  double same_worst = 0.0, lam_worst = 0.0;
  for (int t = 0; t < 200; ++t) {
    auto in = gradcheck::random_instance(rng, 3, 4, 7, 8);
    const auto prior = ClassPrior::balanced(in.counts);
    const std::span<const Matrix> one(in.logits.data(), 1);
    k1 = k1 && nbod_all_loss(one, prior).value == 0.0 && nbod_hard_loss(one, prior, in.shared_set).value == 0.0;
    const std::vector<Matrix> clones(3, in.logits[0]);
    same_worst = std::max({same_worst, nbod_all_loss(clones, prior).value,
                           nbod_hard_loss(clones, prior, in.shared_set).value});
    ExpertBatchOutputs out;
    out.logits = in.logits;
    for (const auto& u : in.raw_online) out.online_embeddings.push_back(gradcheck::normalize_rows(u));
    out.momentum_embeddings = in.momentum;
    const Matrix none(0, 8);
    empty_q = empty_q &&
              contrastive_loss(out.online_embeddings[0], out.momentum_embeddings[0], none, 0.2).value == 0.0;
    ObjectiveTerms terms;
    terms.lambda = 0.0;
    const auto r = ncl_objective(out, in.labels, prior, prior, in.own_sets, in.shared_set, in.queues, terms);
    lam_worst = std::max(lam_worst, std::abs(r.losses.total - (r.losses.nil_all + r.losses.nil_hard + r.losses.con)));
    const auto tl = total_loss(0.3, 0.1, 0.2, 5.0, 7.0, 0.0);
    lam0 = lam0 && tl.total == 0.3 + 0.1 + 0.2;
  }
  same = same_worst <= 1e-9;
  lam0 = lam0 && lam_worst <= 1e-12;
  return {k1 && same && empty_q && lam0,
          fmt("K=1 nbod exactly 0: %s; identical experts max %.1e; empty queue 0: %s; lambda=0 max dev %.1e",
              k1 ? "yes" : "no", same_worst, empty_q ? "yes" : "no", lam_worst)};
}

// 5-9 ----------------------------------------------------------------------

// Desk-scale toy regime shared by the trend criteria.
struct Regime {
  std::size_t seeds = 3;
  DatasetSpec data() const {
    DatasetSpec s;
    s.num_classes = 20;
    s.max_count = 500;
    s.imbalance_factor = 100.0;
    s.sample_shape = {16};
    s.separation = 3.0;
    s.eval_per_class = 100;
    return s;
  }
  TrainConfig config() const {
    TrainConfig c;
    c.epochs = 60;
    c.batch_size = 64;
    c.ensemble.encoder_spec = "mlp:64,64";
    c.ensemble.projection_spec = "mlp:64";
    c.ensemble.embedding_dim = 32;
    c.ensemble.queue_size = 256;
    c.augmentation = "jitter:1.0";
    return c;
  }
};

struct SeedMetrics {
  double ce = 0, bsce = 0, nil = 0, nbod = 0, ncl_single = 0, ncl_ensemble = 0;
  double ens_k[3] = {0, 0, 0};
  double kl_ncl = 0, kl_baselines = 0;
  double hn_ncl = 0, hn_bsce = 0;
  double offline = 0;
};

struct TrendData {
  std::vector<SeedMetrics> seeds;
  double seconds = 0;
  SeedMetrics mean() const {
    SeedMetrics m;
    const double n = double(seeds.size());
    for (const auto& s : seeds) {
      m.ce += s.ce / n;
      m.bsce += s.bsce / n;
      m.nil += s.nil / n;
      m.nbod += s.nbod / n;
      m.ncl_single += s.ncl_single / n;
      m.ncl_ensemble += s.ncl_ensemble / n;
      for (int k = 0; k < 3; ++k) m.ens_k[k] += s.ens_k[k] / n;
      m.kl_ncl += s.kl_ncl / n;
      m.kl_baselines += s.kl_baselines / n;
      m.hn_ncl += s.hn_ncl / n;
      m.hn_bsce += s.hn_bsce / n;
      m.offline += s.offline / n;
    }
    return m;
  }
};

double mean_fraction_above(const Ensemble& e, const LabeledSet& eval) {
  double s = 0;
  for (std::size_t k = 0; k < e.num_experts(); ++k)
    s += hardest_negative_histogram(e.expert_logits(k, eval.samples), eval.labels).fraction_above;
  return s / double(e.num_experts());
}

TrendData run_trends(const Regime& regime) {
  const auto t0 = Clock::now();
  TrendData out;
  const AblationFlags off{false, false, false, false}, nil{true, false, false, false}, nbod{true, false, true, true},
      ncl{true, true, true, true};
  for (std::size_t s = 0; s < regime.seeds; ++s) {
    DatasetSpec ds = regime.data();
    ds.seed = 100 + s;
    const SampleStore store = synthesize_dataset(ds, synthesize_counts(ds));
    TrainConfig base = regime.config();
    base.seed = s;
    auto run = [&](AblationFlags f, BaselineLoss loss, std::size_t k) {
      TrainConfig c = base;
      c.flags = f;
      c.baseline_loss = loss;
      c.ensemble.num_experts = k;
      return train(c, store).ensemble;
    };
    auto cmp = [&](const Ensemble& e) { return compare_single_vs_ensemble(e, store.eval); };
    SeedMetrics m;
    m.ce = cmp(run(off, BaselineLoss::kCe, 3)).single_mean;
    const Ensemble bsce = run(off, BaselineLoss::kBsce, 3);
    m.bsce = cmp(bsce).single_mean;
    m.hn_bsce = mean_fraction_above(bsce, store.eval);
    const Ensemble nil_e = run(nil, BaselineLoss::kBsce, 3);
    m.nil = cmp(nil_e).single_mean;
    m.nbod = cmp(run(nbod, BaselineLoss::kBsce, 3)).single_mean;
    const Ensemble full = run(ncl, BaselineLoss::kBsce, 3);
    const auto fc = cmp(full);
    m.ncl_single = fc.single_mean;
    m.ncl_ensemble = fc.ensemble;
    m.ens_k[2] = fc.ensemble;
    m.ens_k[0] = cmp(run(ncl, BaselineLoss::kBsce, 1)).ensemble;
    m.ens_k[1] = cmp(run(ncl, BaselineLoss::kBsce, 2)).ensemble;
    m.hn_ncl = mean_fraction_above(full, store.eval);
    const std::size_t C = store.counts.num_classes();
    m.kl_ncl = kl_profile(full.expert_logits(0, store.eval.samples), full.expert_logits(1, store.eval.samples),
                          store.eval.labels, C)
                   .mean_kl;
    TrainConfig bc = base;
    bc.flags = off;
    const auto indep = train_independent_baselines(bc, store, 2);
    m.kl_baselines = kl_profile(indep[0].expert_logits(0, store.eval.samples),
                                indep[1].expert_logits(0, store.eval.samples), store.eval.labels, C)
                         .mean_kl;
    // Teachers: the three individually trained NIL experts.
    TrainConfig sc = base;
    sc.flags = nbod;
    const Ensemble* teachers[] = {&nil_e};
    m.offline = cmp(offline_distill(teachers, sc, store).ensemble).single_mean;
    out.seeds.push_back(m);
    std::fprintf(stderr,
                 "seed %zu: ce %.4f bsce %.4f nil %.4f nbod %.4f ncl %.4f/%.4f ens %.4f %.4f %.4f kl %.4f vs %.4f "
                 "hn %.4f vs %.4f offline %.4f\n",
                 s, m.ce, m.bsce, m.nil, m.nbod, m.ncl_single, m.ncl_ensemble, m.ens_k[0], m.ens_k[1], m.ens_k[2],
                 m.kl_ncl, m.kl_baselines, m.hn_ncl, m.hn_bsce, m.offline);
  }
  out.seconds = seconds_since(t0);
  return out;
}

Outcome trend_reproduction(const TrendData& d) {
  const auto m = d.mean();
  const double gain = 100.0 * (m.nbod - m.nil);
  const bool pass = m.bsce > m.ce && m.nil >= m.bsce && gain >= 0.5 && m.ncl_ensemble >= m.ncl_single &&
                    d.seconds < 15 * 60;
  return {pass, fmt("CE %.2f, BSCE %.2f, BSCE+NIL %.2f, +NBOD %.2f (%+.2f pt), NCL single %.2f ensemble %.2f; "
                    "all trend runs %.0fs",
                    100 * m.ce, 100 * m.bsce, 100 * m.nil, 100 * m.nbod, gain, 100 * m.ncl_single,
                    100 * m.ncl_ensemble, d.seconds)};
}

Outcome kl_reduction(const TrendData& d) {
  const auto m = d.mean();
  const double rel = 1.0 - m.kl_ncl / m.kl_baselines;
  return {rel >= 0.30, fmt("mean KL NCL %.4f vs independent BSCE %.4f: %.1f%% lower", m.kl_ncl, m.kl_baselines,
                           100 * rel)};
}

Outcome hardest_negative(const TrendData& d) {
  const auto m = d.mean();
  return {m.hn_ncl < m.hn_bsce,
          fmt("fraction of hardest-negative scores > 0.5: NCL %.4f, BSCE %.4f", m.hn_ncl, m.hn_bsce)};
}

Outcome expert_count(const TrendData& d) {
  const auto m = d.mean();
  const bool pass = m.ens_k[1] >= m.ens_k[0] - 0.003 && m.ens_k[2] >= m.ens_k[1] - 0.003;
  return {pass, fmt("ensemble top-1 K=1 %.2f, K=2 %.2f, K=3 %.2f", 100 * m.ens_k[0], 100 * m.ens_k[1],
                    100 * m.ens_k[2])};
}

Outcome offline_vs_online(const TrendData& d) {
  const auto m = d.mean();
  return {m.nbod >= m.offline,
          fmt("NIL+NBOD single %.2f vs NIL+offline student %.2f", 100 * m.nbod, 100 * m.offline)};
}

// 10 -----------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome reproducibility() {
  const fs::path root = fs::temp_directory_path() / "ncl_acceptance_repro";
  fs::remove_all(root);
  // the tool's progress lines go to stderr so stdout keeps one line per criterion
  std::streambuf* saved = std::cout.rdbuf(std::cerr.rdbuf());
  const std::string data = (root / "data").string();
  int rc = run_cli(std::vector<std::string>{"synth-data", "--out", data, "--classes", "10", "--max-count", "200",
                                            "--if", "20", "--shape", "16", "--eval-per-class", "20"});
  const std::vector<std::string> train{"train", "--data", data, "--epochs", "4", "--encoder-spec", "mlp:32",
                                       "--projection-spec", "mlp:32", "--embedding-dim", "16", "--queue-size", "128",
                                       "--seed", "3"};
  auto with_out = [&](const std::string& name, std::vector<std::string> extra = {}) {
    auto a = train;
    a.push_back("--out");
    a.push_back((root / name).string());
    a.insert(a.end(), extra.begin(), extra.end());
    return run_cli(a);
  };
  rc |= with_out("a");
  rc |= with_out("b");
  rc |= with_out("c", {"--stop-after-epoch", "2"});
  const bool partial = slurp(root / "c" / "metrics.jsonl") != slurp(root / "a" / "metrics.jsonl");
  rc |= with_out("c", {"--resume"});
  std::cout.rdbuf(saved);
  const std::string a = slurp(root / "a" / "metrics.jsonl");
  const bool identical = !a.empty() && a == slurp(root / "b" / "metrics.jsonl");
  const bool resumed = a == slurp(root / "c" / "metrics.jsonl");
  const bool ckpt = slurp(root / "a" / "checkpoint.bin") == slurp(root / "c" / "checkpoint.bin");
  const auto lines = std::count(a.begin(), a.end(), '\n');
  return {rc == 0 && identical && resumed && ckpt && partial,
          fmt("two runs bitwise identical: %s (%ld metric lines); resumed after epoch 2 matches: %s, checkpoint "
              "bytes match: %s",
              identical ? "yes" : "no", long(lines), resumed ? "yes" : "no", ckpt ? "yes" : "no")};
}

}  // namespace

int main() {
  int failed = 0;
  auto report = [&](int n, const Outcome& o) {
    std::printf("CRITERION %d: %s - %s\n", n, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
    failed += !o.pass;
  };
  report(1, gradient_oracle());
  report(2, probability_invariants());
  report(3, hcm_suite());
  report(4, degenerate_cases());
  const TrendData trends = run_trends(Regime{});
  report(5, trend_reproduction(trends));
  report(6, kl_reduction(trends));
  report(7, hardest_negative(trends));
  report(8, expert_count(trends));
  report(9, offline_vs_online(trends));
  report(10, reproducibility());
  return failed == 0 ? 0 : 1;
}
