#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace graad {

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

// FNV-1a, 64-bit, as 16 lowercase hex digits.
std::uint64_t fnv1a64(std::string_view bytes);
std::string fnv1a64_hex(std::string_view bytes);

}  // namespace graad
