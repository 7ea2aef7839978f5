#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

namespace lfss {

/// FNV-1a over a byte range. Used for taxonomy and input-file fingerprints.
std::uint64_t fnv1a64(const void* data, std::size_t size);
std::uint64_t fnv1a64(const std::string& s);

/// FNV-1a over a whole file's contents.
std::uint64_t fnv1a64_file(const std::filesystem::path& path);

std::string hex64(std::uint64_t value);

}  // namespace lfss
