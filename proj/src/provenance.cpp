#include "vsearch/provenance.hpp"

#include <fstream>
#include <system_error>
#include <unistd.h>

#include <fmt/format.h>

#include "vsearch/error.hpp"

namespace vsearch {

namespace fs = std::filesystem;

nlohmann::json provenance_block(const nlohmann::json& effective_config) {
  return {{"tool", kToolName}, {"version", kToolVersion}, {"config", effective_config}};
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string hex64(std::uint64_t v) { return fmt::format("{:016x}", v); }

void write_text_atomic(const fs::path& path, std::string_view text) {
  fs::path tmp = path;
  tmp += fmt::format(".tmp.{}", ::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(fmt::format("cannot write '{}'", tmp.string()));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.flush();
    if (!out) throw IoError(fmt::format("write to '{}' failed", tmp.string()));
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError(fmt::format("cannot move result into '{}'", path.string()));
  }
}

void write_json_atomic(const fs::path& path, const nlohmann::json& j) {
  write_text_atomic(path, j.dump(2) + "\n");
}

void ensure_writable(const fs::path& path) {
  const fs::path dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir))
    throw IoError(fmt::format("output directory '{}' cannot be created", dir.string()));
  const fs::path probe = dir / fmt::format(".vsearch-write-probe.{}", ::getpid());
  {
    std::ofstream out(probe);
    if (!out) throw IoError(fmt::format("output location '{}' is not writable", dir.string()));
  }
  fs::remove(probe, ec);
}

}  // namespace vsearch
