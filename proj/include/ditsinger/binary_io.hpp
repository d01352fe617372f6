#pragma once

// Explicit little-endian byte encoding shared by the corpus, mel and
// checkpoint formats. Every file ends with a CRC-32 of the bytes before it.

#include <bit>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace ditsinger::io {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(std::string_view s);
  void raw(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }

  // Appends CRC-32 of the current contents.
  void seal();
  const std::vector<std::uint8_t>& bytes() const { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<std::uint8_t> bytes, std::string origin);

  // Verifies and strips the trailing CRC-32; throws ChecksumMismatch.
  void unseal();
  void expect_magic(std::string_view magic);

  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str();
  bool at_end() const { return pos_ == end_; }
  const std::string& origin() const { return origin_; }

 private:
  void need(std::size_t n);
  std::vector<std::uint8_t> buf_;
  std::size_t pos_ = 0;
  std::size_t end_ = 0;
  std::string origin_;
};

std::uint32_t crc32(const std::uint8_t* data, std::size_t size);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);
void write_text(const std::filesystem::path& path, std::string_view text);
std::string read_text(const std::filesystem::path& path);

}  // namespace ditsinger::io
