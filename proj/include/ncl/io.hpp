#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ncl::io {

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t state = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a64(std::string_view text, std::uint64_t state = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t value);

std::string read_file(const std::filesystem::path& path);
// Writes through a temporary sibling and renames, so readers never see a
// half-written file.
void write_file(const std::filesystem::path& path, std::string_view contents);

// Little-endian binary encoding, independent of host byte order.
class BinaryWriter {
 public:
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f64(double v);
  void bytes(std::string_view raw);
  void str(std::string_view s);  // length-prefixed
  void f64s(std::span<const double> values);  // length-prefixed
  void i32s(std::span<const std::int32_t> values);  // length-prefixed

  const std::string& buffer() const noexcept { return buf_; }

 private:
  std::string buf_;
};

class BinaryReader {
 public:
  explicit BinaryReader(std::string_view data) : data_(data) {}

  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  std::string bytes(std::size_t n);
  std::string str();
  std::vector<double> f64s();
  std::vector<std::int32_t> i32s();

  std::size_t position() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return data_.size() - pos_; }

 private:
  void need(std::size_t n) const;
  std::string_view data_;
  std::size_t pos_ = 0;
};

// Raw little-endian arrays without length prefix (dataset sample files).
std::string encode_f64_array(std::span<const double> values);
std::vector<double> decode_f64_array(std::string_view raw);
std::string encode_i32_array(std::span<const std::int32_t> values);
std::vector<std::int32_t> decode_i32_array(std::string_view raw);

// Shortest round-trip text for a double (used in CSV output).
std::string format_double(double v);

}  // namespace ncl::io
