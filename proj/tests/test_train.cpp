#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ncl/checkpoint.hpp"
#include "ncl/config.hpp"
#include "ncl/error.hpp"
#include "ncl/eval.hpp"
#include "ncl/optimizer.hpp"
#include "ncl/trainer.hpp"
#include "test_util.hpp"

using namespace ncl;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("ncl_test_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool same_params(const Ensemble& a, const Ensemble& b) {
  if (a.num_experts() != b.num_experts()) return false;
  for (std::size_t k = 0; k < a.num_experts(); ++k) {
    if (a.expert(k).online != b.expert(k).online || a.expert(k).momentum != b.expert(k).momentum) return false;
    if (!(a.expert(k).queue == b.expert(k).queue)) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("learning-rate schedules") {
  CHECK(scheduled_lr(LrSchedule::kConstant, 0.1, 50, 100) == 0.1);
  CHECK(scheduled_lr(LrSchedule::kCosine, 0.1, 0, 100) == doctest::Approx(0.1));
  CHECK(scheduled_lr(LrSchedule::kCosine, 0.1, 50, 100) == doctest::Approx(0.05));
  CHECK(scheduled_lr(LrSchedule::kStep, 0.1, 59, 100) == doctest::Approx(0.1));
  CHECK(scheduled_lr(LrSchedule::kStep, 0.1, 60, 100) == doctest::Approx(0.01));
  CHECK(scheduled_lr(LrSchedule::kStep, 0.1, 80, 100) == doctest::Approx(0.001));
  CHECK(parse_lr_schedule("step") == LrSchedule::kStep);
  CHECK_THROWS_AS(parse_lr_schedule("poly"), Error);
}

TEST_CASE("SGD momentum and Adam follow their update rules") {
  OptimizerSettings s;
  s.weight_decay = 0.1;
  Optimizer sgd(s, {1});
  std::vector<double> p{1.0};
  const std::vector<double> g{0.5};
  sgd.step(0, p, g, 0.1);
  // d = 0.5 + 0.1*1 = 0.6; buf = 0.6; p = 1 - 0.06
  CHECK(p[0] == doctest::Approx(0.94));
  sgd.step(0, p, g, 0.1);
  const double d2 = 0.5 + 0.1 * 0.94, buf2 = 0.9 * 0.6 + d2;
  CHECK(p[0] == doctest::Approx(0.94 - 0.1 * buf2));

  s.kind = OptimizerKind::kAdam;
  s.weight_decay = 0.0;
  Optimizer adam(s, {1});
  std::vector<double> q{1.0};
  adam.step(0, q, g, 0.01);
  adam.finish_step();
  CHECK(q[0] == doctest::Approx(1.0 - 0.01).epsilon(1e-6));

  Optimizer restored(s, {1});
  restored.load_state(adam.save_state());
  std::vector<double> q2 = q;
  adam.step(0, q, g, 0.01);
  restored.step(0, q2, g, 0.01);
  CHECK(q == q2);
}

TEST_CASE("global norm clipping") {
  std::vector<double> a{3, 0}, b{0, 4};
  std::vector<std::vector<double>*> gs{&a, &b};
  CHECK(clip_global_norm(gs, 10.0) == doctest::Approx(5.0));
  CHECK(a[0] == 3.0);
  CHECK(clip_global_norm(gs, 1.0) == doctest::Approx(5.0));
  CHECK(std::hypot(a[0], b[1]) == doctest::Approx(1.0));
  std::vector<double> c{30};
  std::vector<std::vector<double>*> gc{&c};
  clip_global_norm(gc, 0.0);
  CHECK(c[0] == 30.0);
}

TEST_CASE("config text, keys and precedence") {
  TrainConfig c;
  CHECK(c.lambda == 0.6);
  CHECK(c.beta == 0.3);
  CHECK(c.ensemble.num_experts == 3);
  for (const auto& k : TrainConfig::keys()) CHECK_NOTHROW(c.get(k));
  TrainConfig back;
  back.apply_text(c.to_text());
  CHECK(back == c);
  CHECK(back.hash() == c.hash());

  const auto dir = fresh_dir("config");
  std::ofstream(dir / "c.txt") << "# comment\nepochs = 7\nlambda = 0.25\nuse_ss = false\n";
  TrainConfig f = TrainConfig::load(dir / "c.txt");
  CHECK(f.epochs == 7);
  CHECK(f.lambda == 0.25);
  CHECK_FALSE(f.flags.use_ss);
  CHECK(f.hash() != c.hash());
  f.set("lambda", "0.5");
  CHECK(f.get("lambda") == "0.5");

  CHECK_THROWS_AS(c.set("no_such_key", "1"), Error);
  CHECK_THROWS_AS(c.set("epochs", "seven"), Error);
  TrainConfig bad;
  bad.beta = 1.0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = TrainConfig{};
  bad.lambda = -1;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = TrainConfig{};
  bad.tau = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("checkpoint round trip is byte-stable and detects corruption") {
  const auto store = testing::tiny_store();
  auto cfg = testing::tiny_config();
  cfg.epochs = 1;
  const auto r = train(cfg, store);
  Checkpoint ck;
  ck.config = cfg;
  ck.sample_shape = {8};
  ck.num_classes = store.counts.num_classes();
  ck.counts = store.counts;
  ck.dataset_hash = dataset_hash(store);
  ck.epoch = 1;
  ck.step = r.steps_completed;
  capture_ensemble(r.ensemble, ck);
  ck.optimizer_state = "opt";
  ck.anchor_rng_state = "rng";
  ck.sampler_state = "sampler";
  const std::string bytes = encode_checkpoint(ck);
  const Checkpoint back = decode_checkpoint(bytes);
  CHECK(encode_checkpoint(back) == bytes);
  CHECK(same_params(restore_ensemble(back), r.ensemble));
  CHECK(back.config == cfg);

  std::string flipped = bytes;
  flipped[flipped.size() / 2] ^= 0x10;
  CHECK_THROWS_AS(decode_checkpoint(flipped), Error);
  CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), Error);
  CHECK_THROWS_AS(decode_checkpoint(bytes + "x"), Error);
  std::string magic = bytes;
  magic[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(magic), Error);

  const auto dir = fresh_dir("ckpt");
  save_checkpoint(ck, dir / "a.bin");
  CHECK(slurp(dir / "a.bin") == bytes);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.bin"), Error);
}

TEST_CASE("all flags off with K=1 is plain balanced softmax") {
  const auto store = testing::tiny_store();
  auto cfg = testing::tiny_config();
  cfg.ensemble.num_experts = 1;
  cfg.flags = {false, false, false, false};
  const auto r = train(cfg, store);
  for (const auto& rec : r.log) {
    CHECK(rec.losses.total == rec.losses.nil_all);
    CHECK(rec.losses.nil_hard == 0.0);
    CHECK(rec.losses.con == 0.0);
    CHECK(rec.losses.dis_all == 0.0);
  }
  CHECK(r.log.front().losses.total > r.log.back().losses.total);
}

TEST_CASE("lambda = 0 trains exactly like distillation switched off") {
  const auto store = testing::tiny_store();
  auto cfg = testing::tiny_config();
  cfg.epochs = 2;
  cfg.lambda = 0.0;
  const auto with = train(cfg, store);
  auto off = cfg;
  off.flags.use_bod_all = off.flags.use_bod_hard = false;
  const auto without = train(off, store);
  CHECK(same_params(with.ensemble, without.ensemble));
  CHECK(with.log.back().losses.dis_all > 0.0);
  CHECK(without.log.back().losses.dis_all == 0.0);
}

TEST_CASE("term isolation: disabled terms leave the others untouched") {
  const auto store = testing::tiny_store();
  auto cfg = testing::tiny_config();
  cfg.epochs = 1;
  const auto full = train(cfg, store);
  auto part = cfg;
  part.flags.use_ss = false;
  part.flags.use_bod_hard = false;
  const auto partial = train(part, store);
  // Parameters only diverge after the first update.
  const auto& f = full.log.front().losses;
  const auto& p = partial.log.front().losses;
  CHECK(std::abs(f.nil_all - p.nil_all) < 1e-9);
  CHECK(std::abs(f.nil_hard - p.nil_hard) < 1e-9);
  CHECK(std::abs(f.dis_all - p.dis_all) < 1e-9);
  CHECK(p.con == 0.0);
  CHECK(p.dis_hard == 0.0);
  CHECK(std::abs(p.total - (p.nil_all + p.nil_hard + 0.6 * p.dis_all)) < 1e-12);
}

TEST_CASE("momentum parameters only move through the EMA") {
  const auto store = testing::tiny_store();
  auto cfg = testing::tiny_config();
  cfg.epochs = 1;
  cfg.ensemble.ema_momentum = 1.0;
  const Ensemble init(cfg.ensemble, {8}, store.counts.num_classes(), cfg.seed);
  const auto r = train(cfg, store);
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(r.ensemble.expert(k).momentum == init.expert(k).momentum);
    CHECK(r.ensemble.expert(k).online != init.expert(k).online);
  }
}

TEST_CASE("training is deterministic and resumes exactly") {
  const auto store = testing::tiny_store();
  auto cfg = testing::tiny_config();
  cfg.epochs = 4;
  const auto d1 = fresh_dir("det1"), d2 = fresh_dir("det2"), d3 = fresh_dir("det3");
  TrainOptions o1;
  o1.output_dir = d1;
  const auto a = train(cfg, store, o1);
  TrainOptions o2;
  o2.output_dir = d2;
  const auto b = train(cfg, store, o2);
  CHECK(slurp(d1 / "metrics.jsonl") == slurp(d2 / "metrics.jsonl"));
  CHECK(same_params(a.ensemble, b.ensemble));

  TrainOptions stop;
  stop.output_dir = d3;
  stop.stop_after_epoch = 2;
  const auto first = train(cfg, store, stop);
  CHECK(first.epochs_completed == 2);
  TrainOptions resume;
  resume.output_dir = d3;
  resume.resume = true;
  const auto second = train(cfg, store, resume);
  CHECK(second.epochs_completed == 4);
  CHECK(slurp(d3 / "metrics.jsonl") == slurp(d1 / "metrics.jsonl"));
  CHECK(same_params(second.ensemble, a.ensemble));
  CHECK(slurp(d3 / "checkpoint.bin") == slurp(d1 / "checkpoint.bin"));

  auto other = cfg;
  other.lambda = 0.3;
  CHECK_THROWS_AS(train(other, store, resume), Error);
}

TEST_CASE("metrics lines have the documented keys in order") {
  StepRecord r;
  r.step = 3;
  r.lr = 0.5;
  r.losses.total = 1.25;
  const auto line = metrics_line(r);
  CHECK(line.find("\"step\":3") != std::string::npos);
  const char* keys[] = {"step", "nil_all", "nil_hard", "dis_all", "dis_hard", "con", "total", "lr"};
  std::size_t pos = 0;
  for (const char* k : keys) {
    const auto at = line.find(std::string("\"") + k + "\"", pos);
    CHECK(at != std::string::npos);
    pos = at;
  }
  CHECK(line.find("wall") == std::string::npos);
}

TEST_CASE("non-finite loss aborts with a diagnostic dump") {
  const auto store = testing::tiny_store();
  auto cfg = testing::tiny_config();
  cfg.learning_rate = 1e200;
  cfg.grad_clip = 0.0;
  const auto dir = fresh_dir("nonfinite");
  TrainOptions o;
  o.output_dir = dir;
  try {
    train(cfg, store, o);
    FAIL("expected an abort");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kNonFiniteLoss);
    CHECK(std::string(e.what()).find("step") != std::string::npos);
  }
  const auto dump = slurp(dir / "nonfinite_dump.txt");
  CHECK(dump.find("counts") != std::string::npos);
}

TEST_CASE("independent baselines") {
  const auto store = testing::tiny_store();
  auto cfg = testing::tiny_config();
  cfg.epochs = 1;
  const auto two = train_independent_baselines(cfg, store, 2);
  REQUIRE(two.size() == 2);
  CHECK(two[0].num_experts() == 1);
  CHECK(two[0].expert(0).online != two[1].expert(0).online);
  const auto again = train_independent_baselines(cfg, store, 2);
  CHECK(same_params(two[0], again[0]));
  const auto kl = kl_profile(two[0].expert_logits(0, store.eval.samples), two[1].expert_logits(0, store.eval.samples),
                             store.eval.labels, store.counts.num_classes());
  CHECK(kl.mean_kl > 0.0);
}

TEST_CASE("offline distillation") {
  const auto store = testing::tiny_store();
  auto cfg = testing::tiny_config();
  cfg.epochs = 2;
  CHECK_THROWS_AS(offline_distill({}, cfg, store), Error);

  const auto teachers = train_independent_baselines(cfg, store, 2);
  const std::vector<const Ensemble*> ptrs{&teachers[0], &teachers[1]};
  auto scfg = cfg;
  scfg.ensemble.num_experts = 1;
  scfg.flags.use_ss = false;
  const auto student = offline_distill(ptrs, scfg, store);
  CHECK(student.log.back().losses.dis_all > 0.0);

  auto l0 = scfg;
  l0.lambda = 0.0;
  auto plain = l0;
  plain.flags.use_bod_all = plain.flags.use_bod_hard = false;
  const auto s0 = offline_distill(ptrs, l0, store);
  const auto nil = train(plain, store);
  CHECK(same_params(s0.ensemble, nil.ensemble));
}

TEST_CASE("offline student loss decreases toward near one-hot teachers") {
  const auto store = testing::tiny_store();
  auto cfg = testing::tiny_config();
  cfg.ensemble.num_experts = 1;
  cfg.ensemble.encoder_spec = "identity";
  cfg.flags = {false, false, true, false};
  cfg.epochs = 1;
  // A well-fit teacher stands in for the ideal one-hot predictor.
  auto tcfg = cfg;
  tcfg.epochs = 40;
  tcfg.flags = {false, false, false, false};
  const auto teacher = train(tcfg, store);
  const std::vector<const Ensemble*> ptrs{&teacher.ensemble};
  cfg.epochs = 6;
  std::vector<double> epoch_loss;
  TrainOptions o;
  o.on_epoch = [&](std::size_t, double mean_total) { epoch_loss.push_back(mean_total); };
  offline_distill(ptrs, cfg, store, o);
  REQUIRE(epoch_loss.size() == 6);
  for (std::size_t e = 1; e < 4; ++e) CHECK(epoch_loss[e] < epoch_loss[e - 1]);
}

TEST_CASE("ablation grid bookkeeping") {
  const auto rows = standard_ablation_rows();
  REQUIRE(rows.size() == 7);
  CHECK(rows.front().name == "baseline");
  CHECK(rows.back().ensemble_eval);
  CHECK(rows.back().flags == AblationFlags{});
  CHECK(find_ablation_row("nil").has_value());
  CHECK_FALSE(find_ablation_row("bogus").has_value());
  // Each row adds terms to the one before it, except ss which swaps NIL-hard for SS.
  auto count = [](const AblationFlags& f) { return int(f.use_nil_hard) + f.use_ss + f.use_bod_all + f.use_bod_hard; };
  for (std::size_t i = 1; i < rows.size(); ++i) CHECK(count(rows[i].flags) >= count(rows[i - 1].flags));

  const auto store = testing::tiny_store();
  auto base = testing::tiny_config();
  base.epochs = 1;
  CHECK(run_ablation_grid(base, store, {}).empty());

  const std::vector<AblationRow> two{rows[0], rows[1]};
  const auto a = run_ablation_grid(base, store, two, 1);
  const auto b = run_ablation_grid(base, store, two, 2);
  REQUIRE(a.size() == 2);
  CHECK(ablation_csv(a) == ablation_csv(b));
  CHECK(a[0].ce.config_hash == ablation_config(base, rows[0], BaselineLoss::kCe).hash());
  CHECK(a[0].ce.config_hash != a[0].bsce.config_hash);
  // Re-running a recorded cell from its config reproduces it.
  const auto cfg = ablation_config(base, rows[1], BaselineLoss::kBsce);
  const auto rerun = train(cfg, store);
  const auto cmp = compare_single_vs_ensemble(rerun.ensemble, store.eval);
  CHECK(cmp.single_mean == a[1].bsce.single_mean);
  CHECK(ablation_csv(a).rfind("row,nil_hard,ss,bod_all,bod_hard,ensemble,acc_ce,acc_bsce", 0) == 0);
}
