#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace taxpref {

// 64-bit FNV-1a. Used for seed mixing and mock-output derivation, not integrity.
std::uint64_t fnv1a64(std::string_view data);

// Derives a per-item seed from a stage seed and a stable item id.
std::uint64_t mix_seed(std::uint64_t stage_seed, std::string_view item_id);

// SHA-256 hex digests back the run manifest's content addressing.
std::string sha256_hex(std::string_view data);
std::string sha256_file_hex(const std::filesystem::path& path);

std::string trim(std::string_view s);
std::string to_lower_ascii(std::string_view s);
std::vector<std::string> split_lines(std::string_view text);
bool starts_with(std::string_view s, std::string_view prefix);

// Maps an arbitrary id onto a filesystem-safe name (percent-encodes
// everything outside [A-Za-z0-9._-]).
std::string sanitize_filename(std::string_view id);

std::string read_text_file(const std::filesystem::path& path);

// Write-temp-then-rename so readers never observe a half-written file.
void write_text_file_atomic(const std::filesystem::path& path, std::string_view content);

// Deterministic RNG helpers. std::uniform_*_distribution output is
// implementation-defined, so all sampling in the project goes through these.
class DetRng {
 public:
  explicit DetRng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 bits of mantissa.
  double unit_double() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Uniform in [0, n). n must be > 0.
  std::size_t uniform_index(std::size_t n);

  template <typename T>
  void shuffle(std::vector<T>& items) {
    if (items.size() < 2) return;
    for (std::size_t i = items.size() - 1; i > 0; --i) {
      std::swap(items[i], items[uniform_index(i + 1)]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace taxpref
