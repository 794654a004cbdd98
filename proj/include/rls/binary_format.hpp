#pragma once

// Little-endian encoding helpers and the error type shared by the RLSW
// checkpoint and RLSC chip file formats.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

namespace rls::io {

enum class FormatErrc {
  io_failure,
  bad_magic,
  version_mismatch,
  truncated_payload,
  malformed,
};

const char* to_string(FormatErrc code);

class FormatError : public std::runtime_error {
 public:
  FormatError(FormatErrc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}
  FormatErrc code() const { return code_; }

 private:
  FormatErrc code_;
};

class ByteWriter {
 public:
  void bytes(std::string_view s) { buf_.append(s); }
  void u32(std::uint32_t v);
  void f64(double v);
  const std::string& buffer() const { return buf_; }

 private:
  std::string buf_;
};

// Bounds-checked reader; running past the end raises truncated_payload.
class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}
  std::string_view bytes(std::size_t n);
  std::uint32_t u32();
  double f64();
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path);
// Writes via a temporary sibling and rename so readers never see a partial file.
void write_file(const std::filesystem::path& path, std::string_view contents);

// Lower-case hex SHA-256.
std::string sha256_hex(std::string_view data);

}  // namespace rls::io
