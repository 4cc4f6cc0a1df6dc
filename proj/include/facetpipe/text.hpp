#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace facetpipe {

// ASCII whitespace only; facet text is UTF-8 and multibyte sequences are
// never treated as space.
bool is_space(char c) noexcept;
bool is_alnum(char c) noexcept;

std::string_view trim(std::string_view s) noexcept;
std::string to_lower(std::string_view s);

// Lowercase and collapse whitespace runs to a single space (trimmed). Used as
// the query identity for dedup and key matching.
std::string normalize_query(std::string_view s);

// Split on an exact multi-character separator. Empty pieces are kept.
std::vector<std::string> split_exact(std::string_view s, std::string_view sep);
std::string join(const std::vector<std::string>& items, std::string_view sep);

bool starts_with(std::string_view s, std::string_view prefix) noexcept;
bool ends_with(std::string_view s, std::string_view suffix) noexcept;

// Number of UTF-8 code points (continuation bytes are not counted).
std::size_t utf8_length(std::string_view s) noexcept;

// Lowercase hex SHA-256 digest.
std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::string& path);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view bytes);

// Deterministic 64-bit generator with a fully specified output sequence, so
// seeded behavior is identical across standard libraries.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

  std::uint64_t next() noexcept {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // Uniform in [0, n); n must be > 0.
  std::size_t below(std::size_t n) noexcept { return static_cast<std::size_t>(next() % n); }

 private:
  std::uint64_t state_;
};

std::uint64_t fnv1a(std::string_view s) noexcept;

// Seeded Fisher-Yates permutation of [0, n).
std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed);

}  // namespace facetpipe
