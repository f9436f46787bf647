#include "core/common.hpp"

#include <openssl/sha.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <thread>
#include <vector>

namespace dgpic {

void throw_invalid_input(const std::string& msg) {
  throw DgpicError(ErrorCode::usage, "invalid input: " + msg);
}
void throw_contract(const std::string& msg) {
  throw DgpicError(ErrorCode::usage, "contract violation: " + msg);
}
void throw_data(const std::string& msg) {
  throw DgpicError(ErrorCode::data, msg);
}
void throw_numeric(const std::string& msg) {
  throw DgpicError(ErrorCode::numeric, msg);
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  double u2 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double a = 2.0 * M_PI * u2;
  spare_ = r * std::sin(a);
  has_spare_ = true;
  return r * std::cos(a);
}

uint64_t Rng::uniform_below(uint64_t n) {
  if (n == 0) throw_contract("uniform_below(0)");
  uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  uint64_t x = eng_();
  while (x >= limit) x = eng_();
  return x % n;
}

Eigen::Vector3d Rng::unit_vector() {
  double z = uniform(-1.0, 1.0);
  double phi = uniform(0.0, 2.0 * M_PI);
  double r = std::sqrt(std::max(0.0, 1.0 - z * z));
  return {r * std::cos(phi), r * std::sin(phi), z};
}

uint64_t mix_seed(uint64_t a, uint64_t b) {
  uint64_t z = a + 0x9e3779b97f4a7c15ULL + b;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

uint64_t hash_string(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

int worker_count(int n_items) {
  if (n_items <= 1) return 1;
  int cap = 0;
  if (const char* env = std::getenv("DGPIC_THREADS")) {
    cap = std::atoi(env);
    if (cap < 0) cap = 0;
  }
  int hw = static_cast<int>(std::thread::hardware_concurrency());
  if (hw <= 0) hw = 1;
  int n = (cap > 0) ? std::min(cap, hw) : hw;
  return std::max(1, std::min(n, n_items));
}

void parallel_for(int n, const std::function<void(int, int)>& fn) {
  if (n <= 0) return;
  int workers = worker_count(n);
  if (workers == 1) {
    fn(0, n);
    return;
  }
  std::vector<std::thread> threads;
  threads.reserve(workers);
  int chunk = (n + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    int begin = w * chunk;
    int end = std::min(n, begin + chunk);
    if (begin >= end) break;
    threads.emplace_back([&fn, begin, end] { fn(begin, end); });
  }
  for (auto& t : threads) t.join();
}

std::array<uint8_t, 32> sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_data("cannot open file for hashing: " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  std::array<uint8_t, 32> out{};
  SHA256(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(),
         out.data());
  return out;
}

std::string hex_digest(const std::array<uint8_t, 32>& d) {
  static const char* hexc = "0123456789abcdef";
  std::string s;
  s.reserve(64);
  for (uint8_t b : d) {
    s.push_back(hexc[b >> 4]);
    s.push_back(hexc[b & 0xf]);
  }
  return s;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace dgpic
