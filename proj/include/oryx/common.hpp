// Shared error types, contract checks and deterministic RNG streams.
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace oryx {

// Violated precondition or shape contract. Programming error, not data error.
class ContractError : public std::logic_error {
 public:
  explicit ContractError(const std::string& msg) : std::logic_error(msg) {}
};

// NaN/Inf escaped a numeric kernel.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

enum class LoadErrorKind { BadMagic, BadVersion, Truncated, BadChecksum, BadPrecision, BadSchema };

class LoadError : public std::runtime_error {
 public:
  LoadError(LoadErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind(kind) {}
  LoadErrorKind kind;
};

namespace detail {
inline std::string format_msg(const char* cond, const char* file, int line, const std::string& extra) {
  std::ostringstream os;
  os << "contract violation: " << cond << " (" << file << ":" << line << ")";
  if (!extra.empty()) os << " -- " << extra;
  return os.str();
}
}  // namespace detail

#define ORYX_REQUIRE(cond)                                                                   \
  do {                                                                                       \
    if (!(cond)) throw ::oryx::ContractError(::oryx::detail::format_msg(#cond, __FILE__, __LINE__, "")); \
  } while (0)

#define ORYX_REQUIRE_MSG(cond, msg)                                                          \
  do {                                                                                       \
    if (!(cond)) {                                                                           \
      std::ostringstream oryx_os_;                                                           \
      oryx_os_ << msg;                                                                       \
      throw ::oryx::ContractError(::oryx::detail::format_msg(#cond, __FILE__, __LINE__, oryx_os_.str())); \
    }                                                                                        \
  } while (0)

// Deterministic RNG. mt19937_64 is fully specified by the standard; the
// distributions below are hand-rolled because std:: distribution output is
// implementation-defined and we promise bit-identical runs per seed.
class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed), engine_(seed) {}

  uint64_t seed() const { return seed_; }
  uint64_t next_u64() { return engine_(); }

  // uniform in [0, 1)
  double uniform() {
    return static_cast<double>(engine_() >> 11) * (1.0 / 9007199254740992.0);  // 2^53
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  uint64_t below(uint64_t n) {
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;  // rejection avoids modulo bias
    uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  // standard normal via Box-Muller (one value per call, deterministic)
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

  // Independent child stream derived from (seed, id) via splitmix64.
  Rng stream(uint64_t id) const {
    uint64_t z = seed_ + (id + 1) * 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return Rng(z ^ (z >> 31));
  }

 private:
  uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace oryx
