#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace lmvc {

// Error taxonomy. Everything user-facing flows through these so the CLI can
// map failures to distinct exit codes.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IndexError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct CapacityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Rng = std::mt19937_64;

// splitmix64; used to derive independent seeds/streams from (seed, tags...).
inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t mix_seed(uint64_t a, uint64_t b) { return splitmix64(a ^ splitmix64(b)); }

template <typename... Ts>
uint64_t derive_seed(uint64_t seed, Ts... tags) {
  uint64_t s = splitmix64(seed);
  ((s = mix_seed(s, static_cast<uint64_t>(tags))), ...);
  return s;
}

inline Rng make_rng(uint64_t seed) { return Rng(splitmix64(seed)); }

// FNV-1a over raw bytes; used for provenance ids of files.
inline uint64_t fnv1a(const void* data, size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  uint64_t h = 0xcbf29ce484222325ULL;
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace lmvc
