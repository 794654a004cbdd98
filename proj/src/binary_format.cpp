#include "rls/binary_format.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace rls::io {

const char* to_string(FormatErrc code) {
  switch (code) {
    case FormatErrc::io_failure: return "I/O failure";
    case FormatErrc::bad_magic: return "bad magic";
    case FormatErrc::version_mismatch: return "version mismatch";
    case FormatErrc::truncated_payload: return "truncated payload";
    case FormatErrc::malformed: return "malformed file";
  }
  return "unknown format error";
}

namespace {

template <class T>
void put_le(std::string& buf, T v) {
  unsigned char raw[sizeof(T)];
  std::memcpy(raw, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big)
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(raw[i], raw[sizeof(T) - 1 - i]);
  buf.append(reinterpret_cast<const char*>(raw), sizeof(T));
}

template <class T>
T get_le(std::string_view bytes) {
  unsigned char raw[sizeof(T)];
  std::memcpy(raw, bytes.data(), sizeof(T));
  if constexpr (std::endian::native == std::endian::big)
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(raw[i], raw[sizeof(T) - 1 - i]);
  T v;
  std::memcpy(&v, raw, sizeof(T));
  return v;
}

}  // namespace

void ByteWriter::u32(std::uint32_t v) { put_le(buf_, v); }
void ByteWriter::f64(double v) { put_le(buf_, v); }

std::string_view ByteReader::bytes(std::size_t n) {
  if (remaining() < n)
    throw FormatError(FormatErrc::truncated_payload,
                      "needed " + std::to_string(n) + " bytes at offset " + std::to_string(pos_) + ", " +
                          std::to_string(remaining()) + " left");
  auto out = data_.substr(pos_, n);
  pos_ += n;
  return out;
}

std::uint32_t ByteReader::u32() { return get_le<std::uint32_t>(bytes(4)); }
double ByteReader::f64() { return get_le<double>(bytes(8)); }

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatErrc::io_failure, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::string_view contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError(FormatErrc::io_failure, "cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw FormatError(FormatErrc::io_failure, "short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("SHA-256 computation failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xF]);
  }
  return out;
}

}  // namespace rls::io
