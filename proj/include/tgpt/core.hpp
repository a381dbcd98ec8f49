#pragma once

// Shared numeric primitives: matrix type, seeded RNG helpers and the two
// fixed hash functions used for compositional lookup tables and manifests.

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string_view>

namespace tgpt {

// Error classes the command-line driver maps to distinct exit codes:
// configuration problems, unusable input data, numeric failures (divergence).
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Row-major everywhere: flatten/reshape semantics in this codebase are
// defined as row concatenation, and Eigen::Map on raw data must agree.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

inline constexpr double kLogEps = 1e-6;  // epsilon inside every log(x + eps)

// -------------------------------------------------------------------------
// RNG
// -------------------------------------------------------------------------

// splitmix64: used to derive independent stream seeds from (seed, stream id)
// pairs so parallel generation order can never change results.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  return std::mt19937_64(splitmix64(seed ^ splitmix64(stream + 1)));
}

// Gaussian init helper for parameter matrices.
inline Mat randn(Eigen::Index r, Eigen::Index c, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, stddev);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = g(rng);
  return m;
}

// -------------------------------------------------------------------------
// Hashes
// -------------------------------------------------------------------------

// MurmurHash3 x86_32 over a 4-byte little-endian key. Constants are part of
// the on-disk contract for hashed embedding lookup tables; do not change.
inline std::uint32_t murmur3_32(std::uint32_t key, std::uint32_t seed) {
  std::uint32_t h = seed;
  std::uint32_t k = key;
  k *= 0xcc9e2d51u;
  k = (k << 15) | (k >> 17);
  k *= 0x1b873593u;
  h ^= k;
  h = (h << 13) | (h >> 19);
  h = h * 5u + 0xe6546b64u;
  h ^= 4u;  // length in bytes
  h ^= h >> 16;
  h *= 0x85ebca6bu;
  h ^= h >> 13;
  h *= 0xc2b2ae35u;
  h ^= h >> 16;
  return h;
}

// FNV-1a 64-bit, used for dataset/manifest content hashes.
inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace tgpt
