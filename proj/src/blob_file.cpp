#include "fsg/blob_file.hpp"

#include <fstream>
#include <sstream>
#include <system_error>

namespace fsg::io {

namespace {
constexpr std::uint32_t kContainerVersion = 1;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return std::move(buf).str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_blob_file(const std::filesystem::path& path, std::string_view magic,
                     const nlohmann::json& header, std::string_view payload) {
  if (magic.size() != 4) throw std::invalid_argument("magic must be 4 bytes");
  const std::string text = header.dump();
  std::string out;
  out.reserve(16 + text.size() + payload.size());
  out.append(magic);
  append_pod(out, kContainerVersion);
  append_pod(out, static_cast<std::uint64_t>(text.size()));
  out.append(text);
  out.append(payload);
  write_file_atomic(path, out);
}

BlobFile read_blob_file(const std::filesystem::path& path, std::string_view magic) {
  const std::string bytes = read_file(path);
  ByteReader reader(bytes);
  char got[4];
  reader.read_into(std::span<char>(got, 4));
  if (std::string_view(got, 4) != magic) {
    throw FormatError(path.string() + ": bad magic, expected " + std::string(magic));
  }
  const auto version = reader.read<std::uint32_t>();
  if (version != kContainerVersion) {
    throw FormatError(path.string() + ": unsupported container version " +
                      std::to_string(version));
  }
  const auto header_len = reader.read<std::uint64_t>();
  if (header_len > reader.remaining()) throw FormatError(path.string() + ": truncated header");
  const std::size_t header_pos = 16;
  BlobFile blob;
  try {
    blob.header = nlohmann::json::parse(bytes.substr(header_pos, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": invalid JSON header: " + e.what());
  }
  blob.payload = bytes.substr(header_pos + header_len);
  return blob;
}

}  // namespace fsg::io
