#pragma once

// Shared plumbing: error taxonomy, deterministic RNG, hashing, finite checks.

#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace cswm {

// API misuse (bad shapes, violated preconditions). Programmer error.
struct ContractError : std::logic_error {
  explicit ContractError(const std::string& msg) : std::logic_error(msg) {}
};

// Non-finite values or numeric breakdown at runtime.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Corrupt or mismatched on-disk artifacts.
struct FormatError : std::runtime_error {
  explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid user-supplied configuration.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {
template <typename... Args>
inline std::string msg_cat(Args&&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}
}  // namespace detail

#define CSWM_CHECK(cond, ...)                                         \
  do {                                                                \
    if (!(cond))                                                      \
      throw ::cswm::ContractError(::cswm::detail::msg_cat(__VA_ARGS__)); \
  } while (0)

// FNV-1a, used for content hashes of datasets/checkpoints and for deriving
// independent RNG streams from a base seed.
inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

namespace detail {
inline uint64_t mix64(uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}
}  // namespace detail

// The seed is mixed before the tag joins: combining by xor alone lets nearby
// seeds cancel against shifted tags, which showed up as identical episodes
// across collection seeds 1 and 2.
inline uint64_t hash_combine(uint64_t seed, uint64_t tag) {
  uint64_t z = detail::mix64(seed + 0x9e3779b97f4a7c15ull);
  return detail::mix64(z + tag);
}

// Deterministic RNG. mt19937_64 has a standard-pinned sequence, and the
// transforms below avoid std::uniform_*_distribution, whose output is
// implementation-defined. Same seed, same draws, everywhere.
class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed), gen_(seed) {}

  uint64_t seed() const { return seed_; }
  uint64_t next_u64() { return gen_(); }

  // [0,1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  float uniform_float() { return static_cast<float>(next_u64() >> 40) * 0x1.0p-24f; }

  float uniform_range(float lo, float hi) {
    return lo + (hi - lo) * uniform_float();
  }

  // Unbiased integer in [0, n) via rejection.
  uint64_t uniform_int(uint64_t n) {
    CSWM_CHECK(n > 0, "uniform_int: n must be positive");
    uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::vector<int64_t> permutation(int64_t n) {
    std::vector<int64_t> p(n);
    for (int64_t i = 0; i < n; ++i) p[i] = i;
    shuffle(p);
    return p;
  }

  // Independent stream derived from the base seed (not from current state),
  // so derivation order does not matter.
  Rng derive(uint64_t tag) const { return Rng(hash_combine(seed_, tag)); }
  Rng derive(uint64_t tag, uint64_t tag2) const {
    return Rng(hash_combine(hash_combine(seed_, tag), tag2));
  }

 private:
  uint64_t seed_;
  std::mt19937_64 gen_;
};

inline bool is_finite(float x) {
  uint32_t bits;
  std::memcpy(&bits, &x, sizeof bits);
  return (bits & 0x7f800000u) != 0x7f800000u;
}

// Finite checks run after every op by default; CSWM_FINITE_CHECKS=0 disables.
inline bool finite_checks_enabled() {
  static const bool on = [] {
    const char* v = std::getenv("CSWM_FINITE_CHECKS");
    return !(v && v[0] == '0' && v[1] == '\0');
  }();
  return on;
}

inline void check_all_finite(const float* data, size_t n, const char* what) {
  for (size_t i = 0; i < n; ++i) {
    if (!is_finite(data[i]))
      throw NumericError(detail::msg_cat("non-finite value in ", what, " at index ", i));
  }
}

// Worker cap from CSWM_THREADS; defaults to 1 (runs are single-core
// deterministic unless the user opts in).
inline int num_threads() {
  static const int n = [] {
    const char* v = std::getenv("CSWM_THREADS");
    if (!v) return 1;
    int k = std::atoi(v);
    return k > 0 ? k : 1;
  }();
  return n;
}

}  // namespace cswm
