#include "ncl/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <functional>
#include <map>

#include "ncl/error.hpp"
#include "ncl/io.hpp"

namespace ncl {

std::string_view to_string(BaselineLoss loss) { return loss == BaselineLoss::kCe ? "ce" : "bsce"; }

BaselineLoss parse_baseline_loss(std::string_view text) {
  if (text == "ce") return BaselineLoss::kCe;
  if (text == "bsce") return BaselineLoss::kBsce;
  fail(ErrorCode::kInvalidArgument, "unknown baseline_loss '" + std::string(text) + "'");
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <class T>
T parse_number(std::string_view key, std::string_view text) {
  T v{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  require(ec == std::errc() && ptr == text.data() + text.size(), ErrorCode::kInvalidArgument,
          "bad value '" + std::string(text) + "' for " + std::string(key));
  return v;
}

bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  fail(ErrorCode::kInvalidArgument, "bad boolean '" + std::string(text) + "' for " + std::string(key));
}

std::string show(bool b) { return b ? "true" : "false"; }
std::string show(double d) { return io::format_double(d); }
std::string show(std::size_t n) { return std::to_string(n); }

struct Field {
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, std::string_view, std::string_view)> set;
};

#define NCL_SIZE_FIELD(name, member)                                                           \
  {name,                                                                                       \
   {[](const TrainConfig& c) { return show(c.member); },                                       \
    [](TrainConfig& c, std::string_view k, std::string_view v) { c.member = parse_number<std::size_t>(k, v); }}}
#define NCL_REAL_FIELD(name, member)                                                           \
  {name,                                                                                       \
   {[](const TrainConfig& c) { return show(c.member); },                                       \
    [](TrainConfig& c, std::string_view k, std::string_view v) { c.member = parse_number<double>(k, v); }}}
#define NCL_BOOL_FIELD(name, member)                                                           \
  {name,                                                                                       \
   {[](const TrainConfig& c) { return show(c.member); },                                       \
    [](TrainConfig& c, std::string_view k, std::string_view v) { c.member = parse_bool(k, v); }}}
#define NCL_TEXT_FIELD(name, member)                                                           \
  {name,                                                                                       \
   {[](const TrainConfig& c) { return c.member; },                                             \
    [](TrainConfig& c, std::string_view, std::string_view v) { c.member = std::string(v); }}}

// Ordered: this is also the order of to_text().
const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      NCL_SIZE_FIELD("epochs", epochs),
      NCL_SIZE_FIELD("batch_size", batch_size),
      NCL_REAL_FIELD("learning_rate", learning_rate),
      {"lr_schedule",
       {[](const TrainConfig& c) { return std::string(to_string(c.lr_schedule)); },
        [](TrainConfig& c, std::string_view, std::string_view v) { c.lr_schedule = parse_lr_schedule(v); }}},
      NCL_REAL_FIELD("weight_decay", weight_decay),
      {"optimizer",
       {[](const TrainConfig& c) { return std::string(to_string(c.optimizer)); },
        [](TrainConfig& c, std::string_view, std::string_view v) { c.optimizer = parse_optimizer_kind(v); }}},
      NCL_REAL_FIELD("momentum", momentum),
      NCL_REAL_FIELD("lambda", lambda),
      NCL_REAL_FIELD("beta", beta),
      NCL_REAL_FIELD("tau", tau),
      {"seed",
       {[](const TrainConfig& c) { return std::to_string(c.seed); },
        [](TrainConfig& c, std::string_view k, std::string_view v) { c.seed = parse_number<std::uint64_t>(k, v); }}},
      NCL_BOOL_FIELD("use_nil_hard", flags.use_nil_hard),
      NCL_BOOL_FIELD("use_ss", flags.use_ss),
      NCL_BOOL_FIELD("use_bod_all", flags.use_bod_all),
      NCL_BOOL_FIELD("use_bod_hard", flags.use_bod_hard),
      {"baseline_loss",
       {[](const TrainConfig& c) { return std::string(to_string(c.baseline_loss)); },
        [](TrainConfig& c, std::string_view, std::string_view v) { c.baseline_loss = parse_baseline_loss(v); }}},
      {"gradient_policy",
       {[](const TrainConfig& c) { return std::string(to_string(c.gradient_policy)); },
        [](TrainConfig& c, std::string_view, std::string_view v) { c.gradient_policy = parse_gradient_policy(v); }}},
      NCL_BOOL_FIELD("distill_balanced", distill_balanced),
      NCL_REAL_FIELD("grad_clip", grad_clip),
      NCL_TEXT_FIELD("augmentation", augmentation),
      NCL_SIZE_FIELD("num_experts", ensemble.num_experts),
      NCL_SIZE_FIELD("embedding_dim", ensemble.embedding_dim),
      NCL_SIZE_FIELD("queue_size", ensemble.queue_size),
      NCL_REAL_FIELD("ema_momentum", ensemble.ema_momentum),
      NCL_TEXT_FIELD("encoder_spec", ensemble.encoder_spec),
      NCL_TEXT_FIELD("projection_spec", ensemble.projection_spec),
      NCL_TEXT_FIELD("classifier", ensemble.classifier),
      NCL_REAL_FIELD("cosine_scale", ensemble.cosine_scale),
  };
  return table;
}

#undef NCL_SIZE_FIELD
#undef NCL_REAL_FIELD
#undef NCL_BOOL_FIELD
#undef NCL_TEXT_FIELD

const Field& field(std::string_view key) {
  for (const auto& [name, f] : fields()) {
    if (name == key) return f;
  }
  fail(ErrorCode::kInvalidArgument, "unknown config key '" + std::string(key) + "'");
}

}  // namespace

void TrainConfig::validate() const {
  require(epochs >= 1, ErrorCode::kInvalidArgument, "epochs must be >= 1");
  require(batch_size >= 1, ErrorCode::kInvalidArgument, "batch_size must be >= 1");
  require(std::isfinite(learning_rate) && learning_rate > 0.0, ErrorCode::kInvalidArgument,
          "learning_rate must be positive");
  require(std::isfinite(lambda) && lambda >= 0.0, ErrorCode::kOutOfRange, "lambda must be >= 0");
  require(beta > 0.0 && beta < 1.0, ErrorCode::kOutOfRange, "beta must lie in (0,1)");
  require(std::isfinite(tau) && tau > 0.0, ErrorCode::kOutOfRange, "tau must be positive");
  require(weight_decay >= 0.0, ErrorCode::kOutOfRange, "weight_decay must be >= 0");
  require(momentum >= 0.0 && momentum < 1.0, ErrorCode::kOutOfRange, "momentum must lie in [0,1)");
  ensemble.validate();
}

const std::vector<std::string>& TrainConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const auto& [name, f] : fields()) out.push_back(name);
    return out;
  }();
  return k;
}

void TrainConfig::set(std::string_view key, std::string_view value) { field(key).set(*this, key, value); }

std::string TrainConfig::get(std::string_view key) const { return field(key).get(*this); }

std::string TrainConfig::to_text() const {
  std::string out;
  for (const auto& [name, f] : fields()) out += name + " = " + f.get(*this) + "\n";
  return out;
}

void TrainConfig::apply_text(std::string_view text) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    require(eq != std::string::npos, ErrorCode::kFormat, "config line " + std::to_string(line_no) + ": missing '='");
    set(trim(std::string_view(t).substr(0, eq)), trim(std::string_view(t).substr(eq + 1)));
  }
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  TrainConfig c;
  c.apply_text(io::read_file(path));
  return c;
}

std::string TrainConfig::hash() const { return io::hex64(io::fnv1a64(to_text())); }

}  // namespace ncl
