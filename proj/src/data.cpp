#include "ncl/data.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "ncl/error.hpp"
#include "ncl/io.hpp"
#include "ncl/rng.hpp"

namespace ncl {

using nlohmann::json;

std::string_view to_string(CountProfile profile) {
  return profile == CountProfile::kExponential ? "exponential" : "step";
}

CountProfile parse_count_profile(std::string_view text) {
  if (text == "exponential") return CountProfile::kExponential;
  if (text == "step") return CountProfile::kStep;
  fail(ErrorCode::kInvalidArgument, "unknown count profile '" + std::string(text) + "'");
}

std::size_t DatasetSpec::sample_dim() const {
  std::size_t dim = 1;
  for (std::size_t s : sample_shape) dim *= s;
  return dim;
}

void DatasetSpec::validate() const {
  require(num_classes >= 1, ErrorCode::kInvalidArgument, "num_classes must be positive");
  require(max_count >= 1, ErrorCode::kInvalidArgument, "max_count must be positive");
  require(std::isfinite(imbalance_factor) && imbalance_factor >= 1.0, ErrorCode::kImbalanceFactorBelowOne,
          "imbalance factor must be >= 1, got " + std::to_string(imbalance_factor));
  require(num_classes >= 2 || imbalance_factor == 1.0, ErrorCode::kInvalidArgument,
          "a long-tailed dataset needs at least two classes");
  require(sample_shape.size() == 1 || sample_shape.size() == 3, ErrorCode::kInvalidArgument,
          "sample_shape must be {d} or {channels, height, width}");
  require(sample_dim() >= 1, ErrorCode::kInvalidArgument, "sample dimension must be positive");
  require(noise >= 0.0 && separation >= 0.0, ErrorCode::kInvalidArgument, "noise and separation must be >= 0");
  require(clusters_per_class >= 1, ErrorCode::kInvalidArgument, "clusters_per_class must be >= 1");
  require(groups <= num_classes, ErrorCode::kInvalidArgument, "groups must not exceed num_classes");
  require(group_similarity >= 0.0 && group_similarity < 1.0, ErrorCode::kInvalidArgument,
          "group_similarity must be in [0, 1)");
  require(step_fraction > 0.0 && step_fraction < 1.0, ErrorCode::kInvalidArgument, "step_fraction must be in (0, 1)");
}

ClassCounts::ClassCounts(std::vector<std::size_t> counts) : counts_(std::move(counts)) {
  require(!counts_.empty(), ErrorCode::kInvalidArgument, "class counts are empty");
  for (std::size_t j = 0; j < counts_.size(); ++j) {
    require(counts_[j] >= 1, ErrorCode::kInvalidArgument, "class " + std::to_string(j) + " has zero samples");
  }
}

std::size_t ClassCounts::total() const {
  std::size_t n = 0;
  for (std::size_t c : counts_) n += c;
  return n;
}

double ClassCounts::imbalance_factor() const {
  const auto [lo, hi] = std::minmax_element(counts_.begin(), counts_.end());
  return static_cast<double>(*hi) / static_cast<double>(*lo);
}

ClassCounts ClassCounts::uniform(std::size_t num_classes, std::size_t count) {
  return ClassCounts(std::vector<std::size_t>(num_classes, count));
}

std::string_view to_string(Split split) {
  switch (split) {
    case Split::kMany: return "many";
    case Split::kMedium: return "medium";
    case Split::kFew: return "few";
  }
  return "?";
}

Split parse_split(std::string_view text) {
  if (text == "many") return Split::kMany;
  if (text == "medium") return Split::kMedium;
  if (text == "few") return Split::kFew;
  fail(ErrorCode::kFormat, "unknown split '" + std::string(text) + "'");
}

std::vector<std::size_t> SplitAssignment::classes_in(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < split_of_class.size(); ++j) {
    if (split_of_class[j] == split) out.push_back(j);
  }
  return out;
}

ClassCounts synthesize_counts(const DatasetSpec& spec) {
  spec.validate();
  const std::size_t classes = spec.num_classes;
  const double max_count = static_cast<double>(spec.max_count);
  const double tail = std::round(max_count / spec.imbalance_factor);
  require(tail >= 1.0, ErrorCode::kTailCountBelowOne,
          "max_count / imbalance_factor rounds to " + std::to_string(tail) + " samples for the smallest class");

  std::vector<std::size_t> counts(classes);
  for (std::size_t j = 0; j < classes; ++j) {
    double raw = max_count;
    if (classes > 1) {
      if (spec.profile == CountProfile::kExponential) {
        const double t = static_cast<double>(j) / static_cast<double>(classes - 1);
        raw = max_count * std::pow(spec.imbalance_factor, -t);
      } else {
        const auto head = static_cast<std::size_t>(std::ceil(spec.step_fraction * static_cast<double>(classes)));
        raw = j < head ? max_count : max_count / spec.imbalance_factor;
      }
    }
    counts[j] = static_cast<std::size_t>(std::max(1.0, std::round(raw)));
  }
  ClassCounts result(std::move(counts));
  const double effective = result.imbalance_factor();
  if (std::abs(effective - spec.imbalance_factor) > 1e-2 * spec.imbalance_factor) {
    std::clog << "warning: rounding class counts changes the imbalance factor from " << spec.imbalance_factor
              << " to " << effective << "\n";
  }
  return result;
}

SplitAssignment assign_splits(const ClassCounts& counts) {
  SplitAssignment out;
  out.split_of_class.reserve(counts.num_classes());
  for (std::size_t c : counts.values()) {
    out.split_of_class.push_back(c > 100 ? Split::kMany : (c >= 20 ? Split::kMedium : Split::kFew));
  }
  return out;
}

namespace {

// Rows of a d x d orthonormal basis (first `count` rows used), by
// Gram-Schmidt on Gaussian vectors.
std::vector<std::vector<double>> random_orthonormal(std::size_t count, std::size_t dim, Rng& rng) {
  std::vector<std::vector<double>> basis;
  while (basis.size() < count) {
    std::vector<double> v(dim);
    for (double& x : v) x = rng.normal();
    for (const auto& b : basis) {
      double proj = 0.0;
      for (std::size_t i = 0; i < dim; ++i) proj += v[i] * b[i];
      for (std::size_t i = 0; i < dim; ++i) v[i] -= proj * b[i];
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 1e-8) continue;
    for (double& x : v) x /= norm;
    basis.push_back(std::move(v));
  }
  return basis;
}

std::vector<double> random_unit(std::size_t dim, Rng& rng) {
  std::vector<double> v(dim);
  double norm = 0.0;
  while (norm < 1e-8) {
    norm = 0.0;
    for (double& x : v) {
      x = rng.normal();
      norm += x * x;
    }
    norm = std::sqrt(norm);
  }
  for (double& x : v) x /= norm;
  return v;
}

// Per class, one prototype per sub-cluster.
using Prototypes = std::vector<std::vector<std::vector<double>>>;

Prototypes vector_prototypes(const DatasetSpec& spec, Rng& rng) {
  const std::size_t dim = spec.sample_dim();
  const double radius = spec.separation * spec.noise;
  std::vector<std::vector<double>> directions;
  const std::size_t basis = spec.num_classes + spec.groups;
  if (dim >= basis) {
    directions = random_orthonormal(basis, dim, rng);
  } else {
    for (std::size_t c = 0; c < basis; ++c) directions.push_back(random_unit(dim, rng));
  }
  if (spec.groups > 0) {
    const double a = std::sqrt(spec.group_similarity), b = std::sqrt(1.0 - spec.group_similarity);
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
      const auto& g = directions[spec.num_classes + c % spec.groups];
      for (std::size_t i = 0; i < dim; ++i) directions[c][i] = a * g[i] + b * directions[c][i];
    }
  }
  Prototypes protos(spec.num_classes);
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    for (std::size_t m = 0; m < spec.clusters_per_class; ++m) {
      std::vector<double> p(dim);
      for (std::size_t i = 0; i < dim; ++i) {
        p[i] = radius * directions[c][i];
        if (spec.clusters_per_class > 1) p[i] += spec.cluster_spread * spec.noise * rng.normal();
      }
      protos[c].push_back(std::move(p));
    }
  }
  return protos;
}

// Smooth per-class templates: a few Gaussian blobs per channel, scaled to an
// L2 norm of separation * noise.
Prototypes image_prototypes(const DatasetSpec& spec, Rng& rng) {
  const std::size_t channels = spec.sample_shape[0], height = spec.sample_shape[1], width = spec.sample_shape[2];
  Prototypes protos(spec.num_classes);
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    for (std::size_t m = 0; m < spec.clusters_per_class; ++m) {
      std::vector<double> img(channels * height * width, 0.0);
      for (std::size_t ch = 0; ch < channels; ++ch) {
        for (int blob = 0; blob < 3; ++blob) {
          const double cy = rng.uniform(0.0, static_cast<double>(height));
          const double cx = rng.uniform(0.0, static_cast<double>(width));
          const double sigma = rng.uniform(1.0, std::max(1.5, static_cast<double>(std::min(height, width)) / 3.0));
          const double amp = rng.normal();
          for (std::size_t y = 0; y < height; ++y) {
            for (std::size_t x = 0; x < width; ++x) {
              const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
              img[(ch * height + y) * width + x] += amp * std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
            }
          }
        }
      }
      double norm = 0.0;
      for (double v : img) norm += v * v;
      norm = std::sqrt(std::max(norm, 1e-12));
      for (double& v : img) v *= spec.separation * spec.noise / norm;
      protos[c].push_back(std::move(img));
    }
  }
  return protos;
}

void draw_sample(const DatasetSpec& spec, const std::vector<double>& proto, std::span<double> out, Rng& rng) {
  if (!spec.is_image()) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = proto[i] + spec.noise * rng.normal();
    return;
  }
  // Images: the template shifted by up to one pixel, plus pixel noise.
  const auto channels = spec.sample_shape[0], height = spec.sample_shape[1], width = spec.sample_shape[2];
  const int dy = static_cast<int>(rng.uniform_index(3)) - 1;
  const int dx = static_cast<int>(rng.uniform_index(3)) - 1;
  for (std::size_t ch = 0; ch < channels; ++ch) {
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        const long sy = static_cast<long>(y) - dy, sx = static_cast<long>(x) - dx;
        double v = 0.0;
        if (sy >= 0 && sx >= 0 && sy < static_cast<long>(height) && sx < static_cast<long>(width)) {
          v = proto[(ch * height + static_cast<std::size_t>(sy)) * width + static_cast<std::size_t>(sx)];
        }
        out[(ch * height + y) * width + x] = v + spec.noise * rng.normal();
      }
    }
  }
}

LabeledSet draw_set(const DatasetSpec& spec, const Prototypes& protos, std::span<const std::size_t> per_class,
                    Rng& rng) {
  std::size_t n = 0;
  for (std::size_t c : per_class) n += c;
  LabeledSet set{Matrix(n, spec.sample_dim()), {}};
  set.labels.reserve(n);
  std::size_t row = 0;
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    for (std::size_t i = 0; i < per_class[c]; ++i, ++row) {
      const auto& proto = protos[c][rng.uniform_index(protos[c].size())];
      draw_sample(spec, proto, set.samples.row(row), rng);
      set.labels.push_back(static_cast<std::int32_t>(c));
    }
  }
  return set;
}

}  // namespace

SampleStore synthesize_dataset(const DatasetSpec& spec, const ClassCounts& counts) {
  spec.validate();
  require(counts.num_classes() == spec.num_classes, ErrorCode::kShapeMismatch,
          "counts cover " + std::to_string(counts.num_classes()) + " classes, spec has " +
              std::to_string(spec.num_classes));
  Rng proto_rng(spec.seed, "data/prototypes");
  const Prototypes protos = spec.is_image() ? image_prototypes(spec, proto_rng) : vector_prototypes(spec, proto_rng);

  Rng train_rng(spec.seed, "data/train");
  Rng eval_rng(spec.seed, "data/eval");
  SampleStore store;
  store.spec = spec;
  store.counts = counts;
  store.splits = assign_splits(counts);
  store.train = draw_set(spec, protos, counts.values(), train_rng);
  const std::vector<std::size_t> balanced(spec.num_classes, spec.eval_per_class);
  store.eval = draw_set(spec, protos, balanced, eval_rng);
  return store;
}

namespace {

json spec_to_json(const DatasetSpec& s) {
  return json{{"num_classes", s.num_classes},
              {"max_count", s.max_count},
              {"imbalance_factor", s.imbalance_factor},
              {"profile", std::string(to_string(s.profile))},
              {"sample_shape", s.sample_shape},
              {"seed", s.seed},
              {"separation", s.separation},
              {"noise", s.noise},
              {"clusters_per_class", s.clusters_per_class},
              {"cluster_spread", s.cluster_spread},
              {"groups", s.groups},
              {"group_similarity", s.group_similarity},
              {"eval_per_class", s.eval_per_class},
              {"step_fraction", s.step_fraction}};
}

DatasetSpec spec_from_json(const json& j) {
  DatasetSpec s;
  s.num_classes = j.at("num_classes").get<std::size_t>();
  s.max_count = j.at("max_count").get<std::size_t>();
  s.imbalance_factor = j.at("imbalance_factor").get<double>();
  s.profile = parse_count_profile(j.at("profile").get<std::string>());
  s.sample_shape = j.at("sample_shape").get<std::vector<std::size_t>>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.separation = j.at("separation").get<double>();
  s.noise = j.at("noise").get<double>();
  s.clusters_per_class = j.at("clusters_per_class").get<std::size_t>();
  s.cluster_spread = j.at("cluster_spread").get<double>();
  s.groups = j.value("groups", std::size_t{0});
  s.group_similarity = j.value("group_similarity", 0.5);
  s.eval_per_class = j.at("eval_per_class").get<std::size_t>();
  s.step_fraction = j.at("step_fraction").get<double>();
  return s;
}

void save_set(const LabeledSet& set, const std::filesystem::path& dir, const std::string& prefix) {
  io::write_file(dir / (prefix + "_samples.f64"), io::encode_f64_array(set.samples.flat()));
  io::write_file(dir / (prefix + "_labels.i32"), io::encode_i32_array(set.labels));
}

LabeledSet load_set(const std::filesystem::path& dir, const json& meta, std::size_t dim, std::size_t classes) {
  LabeledSet set;
  const auto n = meta.at("num_samples").get<std::size_t>();
  auto values = io::decode_f64_array(io::read_file(dir / meta.at("samples_file").get<std::string>()));
  require(values.size() == n * dim, ErrorCode::kFormat, "sample file size does not match meta.json");
  set.samples = Matrix(n, dim, std::move(values));
  set.labels = io::decode_i32_array(io::read_file(dir / meta.at("labels_file").get<std::string>()));
  require(set.labels.size() == n, ErrorCode::kFormat, "label file size does not match meta.json");
  for (auto label : set.labels) {
    require(label >= 0 && static_cast<std::size_t>(label) < classes, ErrorCode::kFormat, "label out of range");
  }
  return set;
}

}  // namespace

void save_store(const SampleStore& store, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json splits = json::array();
  for (Split s : store.splits.split_of_class) splits.push_back(std::string(to_string(s)));
  const json meta{
      {"schema_version", 1},
      {"spec", spec_to_json(store.spec)},
      {"counts", std::vector<std::size_t>(store.counts.values().begin(), store.counts.values().end())},
      {"splits", splits},
      {"sample_dim", store.spec.sample_dim()},
      {"sample_dtype", "float64-le"},
      {"label_dtype", "int32-le"},
      {"train", {{"num_samples", store.train.size()},
                 {"samples_file", "train_samples.f64"},
                 {"labels_file", "train_labels.i32"}}},
      {"eval", {{"num_samples", store.eval.size()},
                {"samples_file", "eval_samples.f64"},
                {"labels_file", "eval_labels.i32"}}},
      {"dataset_hash", dataset_hash(store)},
  };
  save_set(store.train, dir, "train");
  save_set(store.eval, dir, "eval");
  io::write_file(dir / "counts.csv", counts_csv(store.counts, store.splits));
  io::write_file(dir / "meta.json", meta.dump(2) + "\n");
}

SampleStore load_store(const std::filesystem::path& dir) {
  require(std::filesystem::exists(dir / "meta.json"), ErrorCode::kIo, "no meta.json in " + dir.string());
  json meta;
  try {
    meta = json::parse(io::read_file(dir / "meta.json"));
  } catch (const json::exception& e) {
    fail(ErrorCode::kFormat, std::string("meta.json: ") + e.what());
  }
  SampleStore store;
  try {
    require(meta.at("schema_version").get<int>() == 1, ErrorCode::kFormat, "unsupported dataset schema_version");
    store.spec = spec_from_json(meta.at("spec"));
    store.counts = ClassCounts(meta.at("counts").get<std::vector<std::size_t>>());
    for (const auto& s : meta.at("splits")) store.splits.split_of_class.push_back(parse_split(s.get<std::string>()));
    const std::size_t dim = store.spec.sample_dim();
    store.train = load_set(dir, meta.at("train"), dim, store.spec.num_classes);
    store.eval = load_set(dir, meta.at("eval"), dim, store.spec.num_classes);
  } catch (const json::exception& e) {
    fail(ErrorCode::kFormat, std::string("meta.json: ") + e.what());
  }
  require(store.counts.num_classes() == store.spec.num_classes, ErrorCode::kFormat, "counts length mismatch");
  require(store.splits.split_of_class.size() == store.spec.num_classes, ErrorCode::kFormat, "splits length mismatch");
  return store;
}

std::string counts_csv(const ClassCounts& counts, const SplitAssignment& splits) {
  std::ostringstream os;
  os << "class_index,count,split\n";
  for (std::size_t j = 0; j < counts.num_classes(); ++j) {
    os << j << ',' << counts[j] << ',' << to_string(splits.split_of_class.at(j)) << '\n';
  }
  return os.str();
}

std::string dataset_hash(const SampleStore& store) {
  std::uint64_t h = io::fnv1a64(io::encode_f64_array(store.train.samples.flat()));
  h = io::fnv1a64(io::encode_i32_array(store.train.labels), h);
  h = io::fnv1a64(io::encode_f64_array(store.eval.samples.flat()), h);
  h = io::fnv1a64(io::encode_i32_array(store.eval.labels), h);
  for (std::size_t c : store.counts.values()) h = io::fnv1a64(std::to_string(c) + ",", h);
  return io::hex64(h);
}

}  // namespace ncl
