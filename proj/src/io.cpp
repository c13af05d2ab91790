#include "ncl/io.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

#include "ncl/error.hpp"

namespace ncl::io {

namespace {

template <class T>
void put_le(std::string& out, T value) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  U bits;
  std::memcpy(&bits, &value, sizeof(T));
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

template <class T>
T get_le(const char* p) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<U>(static_cast<unsigned char>(p[i])) << (8 * i);
  T value;
  std::memcpy(&value, &bits, sizeof(T));
  return value;
}

}  // namespace

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t state) {
  for (std::uint8_t b : bytes) {
    state ^= b;
    state *= 0x100000001b3ULL;
  }
  return state;
}

std::uint64_t fnv1a64(std::string_view text, std::uint64_t state) {
  return fnv1a64(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()), state);
}

std::string hex64(std::uint64_t value) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, value >>= 4) out[static_cast<std::size_t>(i)] = kDigits[value & 0xF];
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorCode::kIo, "cannot write " + tmp);
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    require(static_cast<bool>(out), ErrorCode::kIo, "short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

void BinaryWriter::u32(std::uint32_t v) { put_le(buf_, v); }
void BinaryWriter::u64(std::uint64_t v) { put_le(buf_, v); }
void BinaryWriter::f64(double v) { put_le(buf_, v); }
void BinaryWriter::bytes(std::string_view raw) { buf_.append(raw); }

void BinaryWriter::str(std::string_view s) {
  u64(s.size());
  buf_.append(s);
}

void BinaryWriter::f64s(std::span<const double> values) {
  u64(values.size());
  for (double v : values) f64(v);
}

void BinaryWriter::i32s(std::span<const std::int32_t> values) {
  u64(values.size());
  for (std::int32_t v : values) put_le(buf_, v);
}

void BinaryReader::need(std::size_t n) const {
  require(remaining() >= n, ErrorCode::kFormat, "truncated binary data");
}

std::uint32_t BinaryReader::u32() {
  need(4);
  const auto v = get_le<std::uint32_t>(data_.data() + pos_);
  pos_ += 4;
  return v;
}

std::uint64_t BinaryReader::u64() {
  need(8);
  const auto v = get_le<std::uint64_t>(data_.data() + pos_);
  pos_ += 8;
  return v;
}

double BinaryReader::f64() {
  need(8);
  const auto v = get_le<double>(data_.data() + pos_);
  pos_ += 8;
  return v;
}

std::string BinaryReader::bytes(std::size_t n) {
  need(n);
  std::string out(data_.substr(pos_, n));
  pos_ += n;
  return out;
}

std::string BinaryReader::str() { return bytes(static_cast<std::size_t>(u64())); }

std::vector<double> BinaryReader::f64s() {
  const auto n = u64();
  need(n * 8);
  std::vector<double> out(n);
  for (auto& v : out) v = f64();
  return out;
}

std::vector<std::int32_t> BinaryReader::i32s() {
  const auto n = u64();
  need(n * 4);
  std::vector<std::int32_t> out(n);
  for (auto& v : out) {
    v = get_le<std::int32_t>(data_.data() + pos_);
    pos_ += 4;
  }
  return out;
}

std::string encode_f64_array(std::span<const double> values) {
  std::string out;
  out.reserve(values.size() * 8);
  for (double v : values) put_le(out, v);
  return out;
}

std::vector<double> decode_f64_array(std::string_view raw) {
  require(raw.size() % 8 == 0, ErrorCode::kFormat, "float64 array size not a multiple of 8");
  std::vector<double> out(raw.size() / 8);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = get_le<double>(raw.data() + 8 * i);
  return out;
}

std::string encode_i32_array(std::span<const std::int32_t> values) {
  std::string out;
  out.reserve(values.size() * 4);
  for (std::int32_t v : values) put_le(out, v);
  return out;
}

std::vector<std::int32_t> decode_i32_array(std::string_view raw) {
  require(raw.size() % 4 == 0, ErrorCode::kFormat, "int32 array size not a multiple of 4");
  std::vector<std::int32_t> out(raw.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = get_le<std::int32_t>(raw.data() + 4 * i);
  return out;
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace ncl::io
