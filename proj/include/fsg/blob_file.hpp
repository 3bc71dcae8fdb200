#pragma once

// Binary container shared by model checkpoints and bloom filters:
//   4-byte magic | u32 container version | u64 header length |
//   JSON header (UTF-8) | raw little-endian payload

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

#include "json.hpp"

namespace fsg::io {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct BlobFile {
  nlohmann::json header;
  std::string payload;
};

void write_blob_file(const std::filesystem::path& path, std::string_view magic,
                     const nlohmann::json& header, std::string_view payload);
BlobFile read_blob_file(const std::filesystem::path& path, std::string_view magic);

std::string read_file(const std::filesystem::path& path);
/// Writes to a sibling temp file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

template <typename T>
void append_pod(std::string& out, const T& value) {
  const auto* p = reinterpret_cast<const char*>(&value);
  out.append(p, sizeof(T));
}

template <typename T>
void append_span(std::string& out, std::span<const T> values) {
  out.append(reinterpret_cast<const char*>(values.data()), values.size_bytes());
}

/// Sequential reader over a byte buffer; throws FormatError on truncation.
class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T read() {
    T value;
    copy_out(&value, sizeof(T));
    return value;
  }

  template <typename T>
  void read_into(std::span<T> out) {
    copy_out(out.data(), out.size_bytes());
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void copy_out(void* dst, std::size_t n) {
    if (n > remaining()) throw FormatError("unexpected end of data");
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace fsg::io
