#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include <json.hpp>

namespace vsearch {

inline constexpr std::string_view kToolName = "vsearch";
inline constexpr std::string_view kToolVersion = "1.0.0";

/// {"tool": ..., "version": ..., "config": effective_config}. Contains no
/// timestamps or host data so artifacts stay byte-reproducible.
nlohmann::json provenance_block(const nlohmann::json& effective_config);

/// 64-bit FNV-1a; stable across platforms, used for run ids.
std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t v);

/// Writes to "<path>.tmp.<pid>" then renames over path.
void write_text_atomic(const std::filesystem::path& path, std::string_view text);
void write_json_atomic(const std::filesystem::path& path, const nlohmann::json& j);

/// Throws IoError unless a file can be created in path's directory.
void ensure_writable(const std::filesystem::path& path);

}  // namespace vsearch
