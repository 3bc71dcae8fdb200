#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace fsg {

/// Git blob object id: hex SHA-1 of "blob <size>\0" followed by the bytes,
/// so `git hash-object <file>` reproduces it.
std::string git_blob_hash(std::string_view bytes);
std::string git_blob_hash_file(const std::filesystem::path& path);

}  // namespace fsg
