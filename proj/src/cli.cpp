#include "ncl/cli.hpp"

#include <CLI11.hpp>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <json.hpp>
#include <map>
#include <sstream>

#include "ncl/checkpoint.hpp"
#include "ncl/config.hpp"
#include "ncl/data.hpp"
#include "ncl/error.hpp"
#include "ncl/eval.hpp"
#include "ncl/io.hpp"
#include "ncl/kernels.hpp"
#include "ncl/plot.hpp"
#include "ncl/trainer.hpp"

namespace ncl {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr int kManifestSchema = 1;

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

fs::path output_dir(const std::string& flag, const std::string& command) {
  if (!flag.empty()) return flag;
  const char* root = std::getenv("NCL_OUTPUT_ROOT");
  return fs::path(root && *root ? root : "runs") / command;
}

std::vector<std::size_t> parse_shape(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string piece;
  while (std::getline(ss, piece, ',')) {
    try {
      std::size_t used = 0;
      const long v = std::stol(piece, &used);
      require(used == piece.size() && v > 0, ErrorCode::kInvalidArgument, "bad shape '" + text + "'");
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::logic_error&) {
      fail(ErrorCode::kInvalidArgument, "bad shape '" + text + "'");
    }
  }
  require(out.size() == 1 || out.size() == 3, ErrorCode::kInvalidArgument,
          "shape must be D or C,H,W, got '" + text + "'");
  return out;
}

struct Manifest {
  std::string command;
  std::vector<std::string> args;
  ordered_json config = nullptr;
  std::string dataset_hash;
  std::uint64_t seed = 0;
  std::string started;

  void write(const fs::path& dir) const {
    ordered_json j;
    j["schema_version"] = kManifestSchema;
    j["command"] = command;
    j["args"] = args;
    j["resolved_config"] = config;
    j["dataset_hash"] = dataset_hash;
    j["code_version"] = NCL_VERSION;
    j["kernels"] = std::string(kernels::active().name);
    j["seed"] = seed;
    j["output_dir"] = fs::absolute(dir).lexically_normal().string();
    j["started_at"] = started;
    j["finished_at"] = utc_now();
    io::write_file(dir / "manifest.json", j.dump(2) + "\n");
  }
};

ordered_json config_json(const TrainConfig& c) {
  ordered_json j = ordered_json::object();
  for (const auto& k : TrainConfig::keys()) j[k] = c.get(k);
  return j;
}

// Every TrainConfig key as --dashed-name, plus a few short aliases.
struct ConfigFlags {
  std::string file;
  std::map<std::string, std::string> values;
  std::vector<std::pair<std::string, CLI::Option*>> options;
  std::string experts, loss;
  CLI::Option* experts_opt = nullptr;
  CLI::Option* loss_opt = nullptr;
  bool no_ss = false, no_nil_hard = false, no_bod_all = false, no_bod_hard = false;

  void attach(CLI::App* app) {
    app->add_option("--config", file, "key = value config file");
    for (const auto& key : TrainConfig::keys()) {
      std::string flag = "--" + key;
      for (char& ch : flag) ch = ch == '_' ? '-' : ch;
      options.emplace_back(key, app->add_option(flag, values[key], "config key " + key));
    }
    experts_opt = app->add_option("--experts", experts, "alias of --num-experts");
    loss_opt = app->add_option("--loss", loss, "alias of --baseline-loss (ce|bsce)");
    app->add_flag("--no-ss", no_ss, "disable self-supervision");
    app->add_flag("--no-nil-hard", no_nil_hard, "disable the hard-category NIL term");
    app->add_flag("--no-bod-all", no_bod_all, "disable all-category distillation");
    app->add_flag("--no-bod-hard", no_bod_hard, "disable hard-category distillation");
  }

  // default < file < flags
  TrainConfig resolve() const {
    TrainConfig c;
    if (!file.empty()) c.apply_text(io::read_file(file));
    for (const auto& [key, opt] : options) {
      if (opt->count() > 0) c.set(key, values.at(key));
    }
    if (experts_opt->count() > 0) c.set("num_experts", experts);
    if (loss_opt->count() > 0) c.set("baseline_loss", loss);
    if (no_ss) c.flags.use_ss = false;
    if (no_nil_hard) c.flags.use_nil_hard = false;
    if (no_bod_all) c.flags.use_bod_all = false;
    if (no_bod_hard) c.flags.use_bod_hard = false;
    c.validate();
    return c;
  }
};

struct SynthFlags {
  std::string out;
  DatasetSpec spec;
  std::string shape = "32";
};

struct TrainFlags {
  std::string data, out;
  bool resume = false, verbose = false;
  long stop_after_epoch = -1;
};

struct EvalFlags {
  std::string checkpoint, data, out;
  long expert = -1;
};

struct AnalyzeFlags {
  std::string data, out;
  std::vector<std::string> series;
  bool balanced = false, symmetric = false;
  std::size_t bins = 20;
};

struct AblateFlags {
  std::string data, out, rows;
  std::size_t jobs = 1;
};

struct PlotFlags {
  std::string metrics, csv, x, y, out, title;
  bool bars = false;
};

int cmd_synth(const SynthFlags& f, Manifest m) {
  DatasetSpec spec = f.spec;
  spec.sample_shape = parse_shape(f.shape);
  const ClassCounts counts = synthesize_counts(spec);
  const SampleStore store = synthesize_dataset(spec, counts);
  const fs::path dir = output_dir(f.out, "synth-data");
  save_store(store, dir);
  m.dataset_hash = dataset_hash(store);
  m.seed = spec.seed;
  m.write(dir);
  std::cout << "wrote " << store.train.size() << " training and " << store.eval.size() << " eval samples to " << dir
            << " (imbalance factor " << counts.imbalance_factor() << ")\n";
  return 0;
}

int cmd_train(const TrainFlags& f, const ConfigFlags& cf, Manifest m) {
  const TrainConfig cfg = cf.resolve();
  require(!f.data.empty(), ErrorCode::kInvalidArgument, "--data is required");
  const SampleStore store = load_store(f.data);
  const fs::path dir = output_dir(f.out, "train");
  fs::create_directories(dir);
  io::write_file(dir / "config.txt", cfg.to_text());
  TrainOptions opt;
  opt.output_dir = dir;
  opt.resume = f.resume;
  if (f.stop_after_epoch >= 0) opt.stop_after_epoch = static_cast<std::size_t>(f.stop_after_epoch);
  if (f.verbose) {
    opt.on_epoch = [&](std::size_t e, double loss) {
      std::cerr << "epoch " << e << "/" << cfg.epochs << " mean loss " << loss << "\n";
    };
  }
  const TrainResult r = train(cfg, store, opt);
  const SingleVsEnsemble cmp = compare_single_vs_ensemble(r.ensemble, store.eval);
  io::write_file(dir / "summary.json", to_json(cmp).dump(2) + "\n");
  m.config = config_json(cfg);
  m.dataset_hash = dataset_hash(store);
  m.seed = cfg.seed;
  m.write(dir);
  std::cout << "trained " << r.epochs_completed << "/" << cfg.epochs << " epochs (" << r.steps_completed
            << " steps); single-expert top-1 " << cmp.single_mean << ", ensemble top-1 " << cmp.ensemble << "\n";
  return 0;
}

void check_compatible(const Checkpoint& ck, const SampleStore& store, const std::string& path) {
  require(ck.num_classes == store.counts.num_classes() && ck.sample_shape == store.spec.sample_shape,
          ErrorCode::kShapeMismatch, path + " does not match the dataset's shape");
}

int cmd_eval(const EvalFlags& f, Manifest m) {
  require(!f.checkpoint.empty() && !f.data.empty(), ErrorCode::kInvalidArgument, "--checkpoint and --data are required");
  const Checkpoint ck = load_checkpoint(f.checkpoint);
  const SampleStore store = load_store(f.data);
  check_compatible(ck, store, f.checkpoint);
  const Ensemble ens = restore_ensemble(ck);
  require(f.expert < 0 || static_cast<std::size_t>(f.expert) < ens.num_experts(), ErrorCode::kOutOfRange,
          "--expert out of range");
  const fs::path dir = output_dir(f.out, "eval");
  ordered_json j;
  j["schema_version"] = kReportSchemaVersion;
  j["checkpoint"] = f.checkpoint;
  ordered_json experts = ordered_json::array();
  std::vector<std::pair<std::string, std::string>> files;
  for (std::size_t k = 0; k < ens.num_experts(); ++k) {
    if (f.expert >= 0 && static_cast<std::size_t>(f.expert) != k) continue;
    const EvalReport r = evaluate_expert(ens, k, store.eval, store.splits);
    ordered_json e = to_json(r);
    e["expert"] = k;
    experts.push_back(e);
    files.emplace_back("per_class_expert" + std::to_string(k) + ".csv", per_class_csv(r, store.splits, store.counts));
  }
  j["experts"] = experts;
  if (f.expert < 0) {
    const EvalReport r = evaluate_ensemble(ens, store.eval, store.splits);
    j["ensemble"] = to_json(r);
    j["single_vs_ensemble"] = to_json(compare_single_vs_ensemble(ens, store.eval));
    files.emplace_back("per_class_ensemble.csv", per_class_csv(r, store.splits, store.counts));
  }
  io::write_file(dir / "eval.json", j.dump(2) + "\n");
  for (const auto& [name, body] : files) io::write_file(dir / name, body);
  m.config = config_json(ck.config);
  m.dataset_hash = dataset_hash(store);
  m.seed = ck.config.seed;
  m.write(dir);
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_analyze(const AnalyzeFlags& f, Manifest m) {
  require(!f.data.empty() && !f.series.empty(), ErrorCode::kInvalidArgument, "--data and at least one --series needed");
  const SampleStore store = load_store(f.data);
  struct Item {
    std::string name;
    std::vector<std::string> paths;
    std::vector<Ensemble> models;
  };
  // Parse and load everything first so a bad input leaves no output behind.
  std::vector<Item> items;
  for (const auto& s : f.series) {
    const auto eq = s.find('=');
    require(eq != std::string::npos && eq > 0 && eq + 1 < s.size(), ErrorCode::kInvalidArgument,
            "--series must look like NAME=ckpt or NAME=ckptA+ckptB, got '" + s + "'");
    Item it{s.substr(0, eq), {}, {}};
    std::stringstream ss(s.substr(eq + 1));
    std::string p;
    while (std::getline(ss, p, '+')) it.paths.push_back(p);
    require(it.paths.size() == 1 || it.paths.size() == 2, ErrorCode::kInvalidArgument,
            "series '" + it.name + "' needs one or two checkpoints");
    for (const auto& path : it.paths) {
      require(fs::exists(path), ErrorCode::kIo, "checkpoint not found: " + path);
      const Checkpoint ck = load_checkpoint(path);
      check_compatible(ck, store, path);
      it.models.push_back(restore_ensemble(ck));
    }
    require(it.models.size() == 2 || it.models[0].num_experts() >= 2, ErrorCode::kInvalidArgument,
            "series '" + it.name + "' compares experts 0 and 1 of one checkpoint, which has only one expert");
    items.push_back(std::move(it));
  }
  const fs::path dir = output_dir(f.out, "analyze");
  KLOptions ko;
  ko.mode = f.balanced ? ProbMode::kBalanced : ProbMode::kSoftmax;
  ko.symmetric = f.symmetric;
  ordered_json j;
  j["schema_version"] = kReportSchemaVersion;
  j["prob_mode"] = f.balanced ? "balanced" : "softmax";
  j["symmetric"] = f.symmetric;
  ordered_json series = ordered_json::array();
  plot::Chart kl_chart{"Inter-expert KL per class", "class index (head to tail)", "mean KL", plot::Style::kLines, {}};
  plot::Chart hn_chart{"Hardest-negative score distribution", "largest non-target softmax probability",
                       "fraction of eval samples", plot::Style::kBars, {}};
  std::vector<std::pair<std::string, std::string>> files;
  for (const auto& it : items) {
    const Matrix za = it.models[0].expert_logits(0, store.eval.samples);
    const Matrix zb = it.models.size() == 2 ? it.models[1].expert_logits(0, store.eval.samples)
                                            : it.models[0].expert_logits(1, store.eval.samples);
    const KLProfile kl = kl_profile(za, zb, store.eval.labels, store.counts.num_classes(), &store.counts, ko);
    const HardNegHistogram hn = hardest_negative_histogram(za, store.eval.labels, f.bins);
    ordered_json s;
    s["name"] = it.name;
    s["checkpoints"] = it.paths;
    s["kl_profile"] = to_json(kl);
    s["hardest_negative"] = to_json(hn);
    series.push_back(s);
    files.emplace_back("kl_" + it.name + ".csv", kl_csv(kl));
    files.emplace_back("hardneg_" + it.name + ".csv", histogram_csv(hn));
    plot::Series ks{it.name, {}, kl.per_class_kl};
    for (std::size_t c = 0; c < kl.per_class_kl.size(); ++c) ks.x.push_back(double(c));
    kl_chart.series.push_back(std::move(ks));
    plot::Series hs{it.name, {}, {}};
    for (std::size_t b = 0; b < hn.counts.size(); ++b) {
      hs.x.push_back(0.5 * (hn.bin_edges[b] + hn.bin_edges[b + 1]));
      hs.y.push_back(double(hn.counts[b]) / double(std::max<std::size_t>(hn.total(), 1)));
    }
    hn_chart.series.push_back(std::move(hs));
  }
  j["series"] = series;
  io::write_file(dir / "analysis.json", j.dump(2) + "\n");
  for (const auto& [name, body] : files) io::write_file(dir / name, body);
  io::write_file(dir / "kl_profile.svg", plot::render_svg(kl_chart));
  io::write_file(dir / "hardest_negative.svg", plot::render_svg(hn_chart));
  m.dataset_hash = dataset_hash(store);
  m.write(dir);
  for (const auto& s : series) {
    std::cout << s["name"].get<std::string>() << ": mean KL " << s["kl_profile"]["mean_kl"].get<double>()
              << ", hardest-negative > 0.5: " << s["hardest_negative"]["fraction_above_0_5"].get<double>() << "\n";
  }
  return 0;
}

int cmd_ablate(const AblateFlags& f, const ConfigFlags& cf, Manifest m) {
  const TrainConfig base = cf.resolve();
  require(!f.data.empty(), ErrorCode::kInvalidArgument, "--data is required");
  std::vector<AblationRow> rows;
  if (f.rows.empty()) {
    rows = standard_ablation_rows();
  } else {
    std::stringstream ss(f.rows);
    std::string name;
    while (std::getline(ss, name, ',')) {
      auto r = find_ablation_row(name);
      require(r.has_value(), ErrorCode::kInvalidArgument, "unknown ablation row '" + name + "'");
      rows.push_back(*r);
    }
  }
  const SampleStore store = load_store(f.data);
  const auto results = run_ablation_grid(base, store, rows, f.jobs);
  const fs::path dir = output_dir(f.out, "ablate");
  io::write_file(dir / "ablation.csv", ablation_csv(results));
  std::vector<std::string> header{"row", "NIL", "SS", "BOD_all", "BOD_hard", "Ensemble", "Acc.@CE", "Acc.@BSCE"};
  std::vector<std::vector<std::string>> table;
  auto mark = [](bool b) { return std::string(b ? "x" : ""); };
  auto pct = [](double v) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
    return std::string(buf);
  };
  for (const auto& r : results) {
    table.push_back({r.row.name, mark(r.row.flags.use_nil_hard), mark(r.row.flags.use_ss), mark(r.row.flags.use_bod_all),
                     mark(r.row.flags.use_bod_hard), mark(r.row.ensemble_eval), pct(r.ce.reported()),
                     pct(r.bsce.reported())});
  }
  io::write_file(dir / "ablation.svg", plot::table_svg("Ablation (top-1 %)", header, table));
  m.config = config_json(base);
  m.dataset_hash = dataset_hash(store);
  m.seed = base.seed;
  m.write(dir);
  std::cout << ablation_csv(results);
  return 0;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double cell_value(const std::string& s) {
  if (s.empty()) return std::numeric_limits<double>::quiet_NaN();
  try {
    return std::stod(s);
  } catch (const std::logic_error&) {
    fail(ErrorCode::kFormat, "non-numeric cell '" + s + "'");
  }
}

int cmd_plot(const PlotFlags& f, Manifest m) {
  require(f.metrics.empty() != f.csv.empty(), ErrorCode::kInvalidArgument, "give exactly one of --metrics or --csv");
  plot::Chart chart;
  if (!f.metrics.empty()) {
    chart = {f.title.empty() ? "Training losses" : f.title, "step", "loss", plot::Style::kLines, {}};
    const std::vector<std::string> keys{"total", "nil_all", "nil_hard", "dis_all", "dis_hard", "con"};
    for (const auto& k : keys) chart.series.push_back({k, {}, {}});
    std::istringstream in(io::read_file(f.metrics));
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line);
      for (std::size_t i = 0; i < keys.size(); ++i) {
        chart.series[i].x.push_back(j.at("step").get<double>());
        chart.series[i].y.push_back(j.at(keys[i]).get<double>());
      }
    }
  } else {
    require(!f.x.empty() && !f.y.empty(), ErrorCode::kInvalidArgument, "--csv needs --x and --y");
    std::istringstream in(io::read_file(f.csv));
    std::string line;
    require(bool(std::getline(in, line)), ErrorCode::kFormat, "empty CSV");
    const auto header = split_csv_line(line);
    auto col = [&](const std::string& name) {
      const auto it = std::find(header.begin(), header.end(), name);
      require(it != header.end(), ErrorCode::kInvalidArgument, "no column '" + name + "'");
      return static_cast<std::size_t>(it - header.begin());
    };
    const std::size_t xc = col(f.x);
    std::vector<std::pair<std::string, std::size_t>> ys;
    for (const auto& y : split_csv_line(f.y)) ys.emplace_back(y, col(y));
    chart = {f.title.empty() ? f.csv : f.title, f.x, f.y, f.bars ? plot::Style::kBars : plot::Style::kLines, {}};
    for (const auto& [name, c] : ys) chart.series.push_back({name, {}, {}});
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto cells = split_csv_line(line);
      for (std::size_t i = 0; i < ys.size(); ++i) {
        chart.series[i].x.push_back(cell_value(cells.at(xc)));
        chart.series[i].y.push_back(cell_value(cells.at(ys[i].second)));
      }
    }
  }
  const fs::path dir = output_dir(f.out, "plot");
  io::write_file(dir / "plot.svg", plot::render_svg(chart));
  m.write(dir);
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Nested collaborative learning on synthetic long-tailed data", "ncl"};
  app.require_subcommand(1);
  app.set_version_flag("--version", NCL_VERSION);
  std::string kernel_choice;
  app.add_option("--kernels", kernel_choice, "force a kernel table (scalar|avx2)");

  SynthFlags sf;
  auto* synth = app.add_subcommand("synth-data", "write a synthetic long-tailed dataset");
  synth->add_option("--out", sf.out, "output directory");
  synth->add_option("--classes", sf.spec.num_classes, "number of classes")->capture_default_str();
  synth->add_option("--max-count", sf.spec.max_count, "size of the largest class")->capture_default_str();
  synth->add_option("--if", sf.spec.imbalance_factor, "imbalance factor (largest / smallest)")->capture_default_str();
  std::string profile = "exponential";
  synth->add_option("--profile", profile, "exponential|step")->capture_default_str();
  synth->add_option("--shape", sf.shape, "sample shape: D or C,H,W")->capture_default_str();
  synth->add_option("--seed", sf.spec.seed, "root seed")->capture_default_str();
  synth->add_option("--separation", sf.spec.separation, "class centre norm in noise units")->capture_default_str();
  synth->add_option("--noise", sf.spec.noise, "per-coordinate noise stddev")->capture_default_str();
  synth->add_option("--clusters", sf.spec.clusters_per_class, "sub-clusters per class")->capture_default_str();
  synth->add_option("--cluster-spread", sf.spec.cluster_spread, "sub-cluster offset stddev")->capture_default_str();
  synth->add_option("--groups", sf.spec.groups, "superclasses of mutually similar classes (0: none)")
      ->capture_default_str();
  synth->add_option("--group-similarity", sf.spec.group_similarity, "centre cosine between sibling classes")
      ->capture_default_str();
  synth->add_option("--eval-per-class", sf.spec.eval_per_class, "balanced eval samples per class")
      ->capture_default_str();
  synth->add_option("--step-fraction", sf.spec.step_fraction, "step profile: share of head classes")
      ->capture_default_str();

  TrainFlags tf;
  ConfigFlags train_cfg;
  auto* train_cmd = app.add_subcommand("train", "train an ensemble and write checkpoint + metrics");
  train_cmd->add_option("--data", tf.data, "dataset directory")->required();
  train_cmd->add_option("--out", tf.out, "output directory");
  train_cmd->add_flag("--resume", tf.resume, "continue from OUT/checkpoint.bin");
  train_cmd->add_option("--stop-after-epoch", tf.stop_after_epoch, "stop once this many epochs are done");
  train_cmd->add_flag("--verbose", tf.verbose, "print per-epoch loss");
  train_cfg.attach(train_cmd);

  EvalFlags ef;
  auto* eval_cmd = app.add_subcommand("eval", "accuracy with many/medium/few breakdown");
  eval_cmd->add_option("--checkpoint", ef.checkpoint, "checkpoint file")->required();
  eval_cmd->add_option("--data", ef.data, "dataset directory")->required();
  eval_cmd->add_option("--out", ef.out, "output directory");
  eval_cmd->add_option("--expert", ef.expert, "evaluate only this expert");

  AnalyzeFlags af;
  auto* analyze = app.add_subcommand("analyze", "KL profiles and hardest-negative histograms");
  analyze->add_option("--data", af.data, "dataset directory")->required();
  analyze->add_option("--series", af.series, "NAME=ckpt (experts 0 vs 1) or NAME=ckptA+ckptB")->required();
  analyze->add_option("--out", af.out, "output directory");
  analyze->add_flag("--balanced", af.balanced, "KL over balanced probabilities");
  analyze->add_flag("--symmetric", af.symmetric, "report the mean of both KL directions");
  analyze->add_option("--bins", af.bins, "histogram bins")->capture_default_str();

  AblateFlags bf;
  ConfigFlags ablate_cfg;
  auto* ablate = app.add_subcommand("ablate", "run the ablation grid");
  ablate->add_option("--data", bf.data, "dataset directory")->required();
  ablate->add_option("--out", bf.out, "output directory");
  ablate->add_option("--rows", bf.rows, "comma-separated row names (default: all seven)");
  ablate->add_option("--jobs", bf.jobs, "grid cells trained in parallel")->capture_default_str();
  ablate_cfg.attach(ablate);

  PlotFlags pf;
  auto* plot_cmd = app.add_subcommand("plot", "render a CSV or metrics log as SVG");
  plot_cmd->add_option("--metrics", pf.metrics, "metrics.jsonl from train");
  plot_cmd->add_option("--csv", pf.csv, "CSV file");
  plot_cmd->add_option("--x", pf.x, "x column");
  plot_cmd->add_option("--y", pf.y, "comma-separated y columns");
  plot_cmd->add_flag("--bars", pf.bars, "bar chart instead of lines");
  plot_cmd->add_option("--title", pf.title, "chart title");
  plot_cmd->add_option("--out", pf.out, "output directory");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  Manifest m;
  m.args = args;
  m.started = utc_now();
  try {
    if (!kernel_choice.empty()) {
      require(kernels::select(kernel_choice), ErrorCode::kInvalidArgument,
              "kernel table '" + kernel_choice + "' is not available");
    }
    if (synth->parsed()) {
      m.command = "synth-data";
      sf.spec.profile = parse_count_profile(profile);
      return cmd_synth(sf, m);
    }
    if (train_cmd->parsed()) {
      m.command = "train";
      return cmd_train(tf, train_cfg, m);
    }
    if (eval_cmd->parsed()) {
      m.command = "eval";
      return cmd_eval(ef, m);
    }
    if (analyze->parsed()) {
      m.command = "analyze";
      return cmd_analyze(af, m);
    }
    if (ablate->parsed()) {
      m.command = "ablate";
      return cmd_ablate(bf, ablate_cfg, m);
    }
    if (plot_cmd->parsed()) {
      m.command = "plot";
      return cmd_plot(pf, m);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

int run_cli(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args);
}

}  // namespace ncl
