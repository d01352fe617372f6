#include "ditsinger/binary_io.hpp"

#include "ditsinger/errors.hpp"

#include <zlib.h>

#include <algorithm>
#include <fstream>
#include <iterator>
#include <sstream>

namespace ditsinger::io {

std::uint32_t crc32(const std::uint8_t* data, std::size_t size) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  return static_cast<std::uint32_t>(::crc32(crc, data, static_cast<uInt>(size)));
}

void ByteWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::str(std::string_view s) {
  u32(static_cast<std::uint32_t>(s.size()));
  raw(s);
}

void ByteWriter::seal() { u32(crc32(buf_.data(), buf_.size())); }

ByteReader::ByteReader(std::vector<std::uint8_t> bytes, std::string origin)
    : buf_(std::move(bytes)), end_(buf_.size()), origin_(std::move(origin)) {}

void ByteReader::unseal() {
  if (buf_.size() < 4) throw ChecksumMismatch(origin_ + ": file too short for checksum");
  const std::size_t body = buf_.size() - 4;
  std::uint32_t stored = 0;
  for (int i = 0; i < 4; ++i) stored |= static_cast<std::uint32_t>(buf_[body + i]) << (8 * i);
  if (stored != crc32(buf_.data(), body)) throw ChecksumMismatch(origin_ + ": checksum mismatch (truncated or corrupt)");
  end_ = body;
}

void ByteReader::expect_magic(std::string_view magic) {
  need(magic.size());
  if (!std::equal(magic.begin(), magic.end(), buf_.begin() + static_cast<std::ptrdiff_t>(pos_))) {
    throw IoError(origin_ + ": bad magic, expected " + std::string(magic));
  }
  pos_ += magic.size();
}

void ByteReader::need(std::size_t n) {
  if (pos_ + n > end_) throw ChecksumMismatch(origin_ + ": unexpected end of data");
}

std::uint8_t ByteReader::u8() {
  need(1);
  return buf_[pos_++];
}

std::uint32_t ByteReader::u32() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf_[pos_ + i]) << (8 * i);
  pos_ += 4;
  return v;
}

std::uint64_t ByteReader::u64() {
  need(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf_[pos_ + i]) << (8 * i);
  pos_ += 8;
  return v;
}

std::string ByteReader::str() {
  const std::uint32_t n = u32();
  need(n);
  std::string s(buf_.begin() + static_cast<std::ptrdiff_t>(pos_), buf_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
  pos_ += n;
  return s;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace ditsinger::io
