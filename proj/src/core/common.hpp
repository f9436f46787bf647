#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace dgpic {

// Error taxonomy maps 1:1 onto process exit codes.
enum class ErrorCode : int {
  usage = 2,    // bad arguments, contract violations, invalid inputs
  data = 3,     // missing/corrupt artifacts, parse failures, staleness
  numeric = 4,  // non-finite values, failed numeric invariants
};

class DgpicError : public std::runtime_error {
 public:
  DgpicError(ErrorCode code, const std::string& msg)
      : std::runtime_error(msg), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void throw_invalid_input(const std::string& msg);
[[noreturn]] void throw_contract(const std::string& msg);
[[noreturn]] void throw_data(const std::string& msg);
[[noreturn]] void throw_numeric(const std::string& msg);

// Deterministic RNG used everywhere. The draw functions are spelled out
// here (instead of <random> distributions) so that streams depend only on
// the engine state, not on the standard library implementation.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  // [0, 1)
  double uniform() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // standard normal, Box-Muller with cached spare
  double normal();

  // uniform integer in [0, n), rejection sampled
  uint64_t uniform_below(uint64_t n);

  // uniform direction on the unit sphere
  Eigen::Vector3d unit_vector();

 private:
  std::mt19937_64 eng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Seed derivation: splitmix64-style mixing so per-sample streams are
// independent of iteration order.
uint64_t mix_seed(uint64_t a, uint64_t b);
uint64_t hash_string(const std::string& s);  // FNV-1a 64

inline uint64_t derive_seed(uint64_t base, std::initializer_list<uint64_t> parts) {
  uint64_t s = base;
  for (uint64_t p : parts) s = mix_seed(s, p);
  return s;
}

// Worker count: DGPIC_THREADS caps it, 0/unset means auto. Read per call so
// tests can toggle the environment.
int worker_count(int n_items);

// Runs fn(begin, end) over contiguous chunks of [0, n). Caller is
// responsible for making the reduction order deterministic.
void parallel_for(int n, const std::function<void(int, int)>& fn);

// SHA-256 of a whole file (checkpoint/prototype staleness checks).
std::array<uint8_t, 32> sha256_file(const std::filesystem::path& path);
std::string hex_digest(const std::array<uint8_t, 32>& d);

// Exact-round-trip decimal formatting for doubles.
std::string format_double(double v);

}  // namespace dgpic
