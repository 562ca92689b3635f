#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fewshot {

// A file could not be opened, read or written.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed, truncated or unsupported container file.
class FormatError : public IoError {
 public:
  using IoError::IoError;
};

// Whole-file helpers; both throw IoError.
std::string read_file(const std::filesystem::path& path, std::string_view what);
void write_file(const std::filesystem::path& path, std::string_view bytes);

// Explicit little-endian encoding, independent of host byte order.
class BinaryWriter {
 public:
  explicit BinaryWriter(std::ostream& out) : out_(out) {}

  void bytes(std::string_view raw);
  void u8(std::uint8_t v);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f64(double v);
  void str(std::string_view s);
  void f64_array(std::span<const double> values);

 private:
  std::ostream& out_;
};

class BinaryReader {
 public:
  BinaryReader(std::istream& in, std::string what) : in_(in), what_(std::move(what)) {}

  std::string bytes(std::size_t n);
  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  std::string str();
  std::vector<double> f64_array();
  // Throws unless the stream is exhausted.
  void expect_end();

  // Reads the magic and version, throwing on mismatch.
  void header(std::string_view magic, std::uint32_t supported_version);

 private:
  [[noreturn]] void fail(const std::string& msg) const;

  std::istream& in_;
  std::string what_;
};

}  // namespace fewshot
