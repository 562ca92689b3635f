#include "fewshot/binary_io.hpp"

#include <bit>
#include <fstream>
#include <iterator>
#include <limits>

namespace fewshot {
namespace {

// Guards allocations driven by corrupt length fields.
constexpr std::uint64_t kMaxArrayLength = std::uint64_t{1} << 32;

}  // namespace

void BinaryWriter::bytes(std::string_view raw) {
  out_.write(raw.data(), static_cast<std::streamsize>(raw.size()));
}

void BinaryWriter::u8(std::uint8_t v) { out_.put(static_cast<char>(v)); }

void BinaryWriter::u32(std::uint32_t v) {
  char buf[4];
  for (int i = 0; i < 4; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out_.write(buf, 4);
}

void BinaryWriter::u64(std::uint64_t v) {
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out_.write(buf, 8);
}

void BinaryWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void BinaryWriter::str(std::string_view s) {
  u64(s.size());
  bytes(s);
}

void BinaryWriter::f64_array(std::span<const double> values) {
  u64(values.size());
  for (double v : values) f64(v);
}

void BinaryReader::fail(const std::string& msg) const { throw FormatError(what_ + ": " + msg); }

std::string BinaryReader::bytes(std::size_t n) {
  std::string out(n, '\0');
  in_.read(out.data(), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in_.gcount()) != n) fail("unexpected end of file (truncated?)");
  return out;
}

std::uint8_t BinaryReader::u8() { return static_cast<std::uint8_t>(bytes(1)[0]); }

std::uint32_t BinaryReader::u32() {
  const std::string b = bytes(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t{static_cast<unsigned char>(b[i])} << (8 * i);
  return v;
}

std::uint64_t BinaryReader::u64() {
  const std::string b = bytes(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t{static_cast<unsigned char>(b[i])} << (8 * i);
  return v;
}

double BinaryReader::f64() { return std::bit_cast<double>(u64()); }

std::string BinaryReader::str() {
  const std::uint64_t n = u64();
  if (n > kMaxArrayLength) fail("string length " + std::to_string(n) + " is implausible");
  return bytes(static_cast<std::size_t>(n));
}

std::vector<double> BinaryReader::f64_array() {
  const std::uint64_t n = u64();
  if (n > kMaxArrayLength) fail("array length " + std::to_string(n) + " is implausible");
  std::vector<double> out(static_cast<std::size_t>(n));
  for (double& v : out) v = f64();
  return out;
}

void BinaryReader::expect_end() {
  if (in_.peek() != std::char_traits<char>::eof()) fail("trailing bytes after end of data");
}

void BinaryReader::header(std::string_view magic, std::uint32_t supported_version) {
  const std::string got(bytes(magic.size()));
  if (got != magic) fail("bad magic bytes, expected \"" + std::string(magic) + "\"");
  const std::uint32_t version = u32();
  if (version != supported_version) {
    fail("unsupported format version " + std::to_string(version) + " (this build reads version " +
         std::to_string(supported_version) + ")");
  }
}

std::string read_file(const std::filesystem::path& path, std::string_view what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + std::string(what) + " " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("failed reading " + path.string());
  return bytes;
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace fewshot
