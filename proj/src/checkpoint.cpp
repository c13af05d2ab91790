#include "ncl/checkpoint.hpp"

#include "ncl/error.hpp"
#include "ncl/io.hpp"

namespace ncl {

namespace {

constexpr std::string_view kMagic = "NCLCKPT1";

void write_sizes(io::BinaryWriter& w, std::span<const std::size_t> v) {
  w.u64(v.size());
  for (auto x : v) w.u64(x);
}

std::vector<std::size_t> read_sizes(io::BinaryReader& r) {
  const auto n = r.u64();
  require(n <= r.remaining() / 8, ErrorCode::kFormat, "checkpoint size list truncated");
  std::vector<std::size_t> v(n);
  for (auto& x : v) x = r.u64();
  return v;
}

}  // namespace

std::string encode_checkpoint(const Checkpoint& c) {
  io::BinaryWriter w;
  w.bytes(kMagic);
  w.u32(Checkpoint::kVersion);
  w.str(c.config.to_text());
  write_sizes(w, c.sample_shape);
  w.u64(c.num_classes);
  write_sizes(w, c.counts.values());
  w.str(c.dataset_hash);
  w.u64(c.epoch);
  w.u64(c.step);
  w.u64(c.experts.size());
  for (const auto& e : c.experts) {
    w.f64s(e.online);
    w.f64s(e.momentum);
    w.u64(e.queue.rows());
    w.u64(e.queue.cols());
    w.f64s(e.queue.values());
  }
  w.str(c.optimizer_state);
  w.str(c.anchor_rng_state);
  w.str(c.sampler_state);
  std::string out = w.buffer();
  io::BinaryWriter tail;
  tail.u64(io::fnv1a64(out));
  return out + tail.buffer();
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  require(bytes.size() >= kMagic.size() + 12, ErrorCode::kFormat, "checkpoint too short");
  const std::string_view body = bytes.substr(0, bytes.size() - 8);
  io::BinaryReader tail(bytes.substr(bytes.size() - 8));
  require(tail.u64() == io::fnv1a64(body), ErrorCode::kFormat, "checkpoint checksum mismatch");
  io::BinaryReader r(body);
  require(r.bytes(kMagic.size()) == kMagic, ErrorCode::kFormat, "not a checkpoint file");
  const auto version = r.u32();
  require(version == Checkpoint::kVersion, ErrorCode::kFormat,
          "unsupported checkpoint version " + std::to_string(version));
  Checkpoint c;
  c.config.apply_text(r.str());
  c.sample_shape = read_sizes(r);
  c.num_classes = r.u64();
  c.counts = ClassCounts(read_sizes(r));
  c.dataset_hash = r.str();
  c.epoch = r.u64();
  c.step = r.u64();
  const auto k = r.u64();
  require(k <= 4096, ErrorCode::kFormat, "implausible expert count");
  for (std::uint64_t i = 0; i < k; ++i) {
    CheckpointExpert e;
    e.online = r.f64s();
    e.momentum = r.f64s();
    const auto rows = r.u64();
    const auto cols = r.u64();
    auto q = r.f64s();
    require(q.size() == rows * cols, ErrorCode::kFormat, "queue shape mismatch");
    e.queue = Matrix(rows, cols, std::move(q));
    c.experts.push_back(std::move(e));
  }
  c.optimizer_state = r.str();
  c.anchor_rng_state = r.str();
  c.sampler_state = r.str();
  require(r.remaining() == 0, ErrorCode::kFormat, "trailing bytes in checkpoint");
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  io::write_file(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(io::read_file(path)); }

void capture_ensemble(const Ensemble& ensemble, Checkpoint& ckpt) {
  ckpt.experts.clear();
  for (std::size_t k = 0; k < ensemble.num_experts(); ++k) {
    const auto& e = ensemble.expert(k);
    ckpt.experts.push_back({e.online, e.momentum, e.queue.contents()});
  }
}

Ensemble restore_ensemble(const Checkpoint& ckpt) {
  Ensemble ens(ckpt.config.ensemble, ckpt.sample_shape, ckpt.num_classes, ckpt.config.seed);
  require(ckpt.experts.size() == ens.num_experts(), ErrorCode::kFormat, "checkpoint expert count mismatch");
  for (std::size_t k = 0; k < ens.num_experts(); ++k) {
    auto& e = ens.expert(k);
    const auto& s = ckpt.experts[k];
    require(s.online.size() == e.online.size() && s.momentum.size() == e.momentum.size(), ErrorCode::kFormat,
            "checkpoint parameter count mismatch");
    e.online = s.online;
    e.momentum = s.momentum;
    e.queue.assign(s.queue);
  }
  return ens;
}

}  // namespace ncl
