#pragma once

// Shared plumbing: error types, a portable seeded RNG, a small thread-pool
// helper and little-endian binary I/O used by the file formats.

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <mutex>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

static_assert(std::endian::native == std::endian::little,
              "lexstress file formats assume a little-endian host");

namespace lexstress {

// Bad user-supplied data: files, formats, out-of-vocabulary words, config.
// The CLI maps this to exit code 2.
struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Internal failures: shape mismatches, non-finite values, contract breaks.
// The CLI maps this to exit code 3.
struct ComputeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

template <class... Args>
std::string cat(Args&&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}

inline uint64_t mix64(uint64_t x) {
  // splitmix64 finalizer
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline uint64_t mix64(uint64_t a, uint64_t b) { return mix64(a ^ mix64(b)); }
inline uint64_t mix64(uint64_t a, uint64_t b, uint64_t c) {
  return mix64(mix64(a, b), c);
}

// Seeded RNG with explicit float construction so streams are identical
// across standard libraries. mt19937_64 core, 53-bit uniforms, Box-Muller
// normals with a cached spare.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(mix64(seed)) {}

  uint64_t next_u64() { return engine_(); }

  double uniform() {  // [0, 1)
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // inclusive bounds
  int uniform_int(int lo, int hi) {
    const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(next_u64() % span);
  }

  double normal(double mu = 0.0, double sigma = 1.0) {
    if (has_spare_) {
      has_spare_ = false;
      return mu + spare_ * sigma;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 == 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    constexpr double two_pi = 6.283185307179586476925286766559;
    spare_ = r * std::sin(two_pi * u2);
    has_spare_ = true;
    return mu + r * std::cos(two_pi * u2) * sigma;
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Runs fn(i) for i in [0, n) on up to n_threads workers. Results must not
// depend on scheduling; callers keep per-index output slots.
template <class Fn>
void parallel_for(int n, int n_threads, Fn&& fn) {
  if (n <= 0) return;
  if (n_threads <= 0) {
    n_threads = static_cast<int>(std::thread::hardware_concurrency());
    if (n_threads <= 0) n_threads = 1;
  }
  n_threads = std::min(n_threads, n);
  if (n_threads == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> workers;
  workers.reserve(n_threads);
  std::exception_ptr first_error;
  std::mutex error_mu;
  for (int t = 0; t < n_threads; ++t) {
    workers.emplace_back([&, t] {
      for (int i = t; i < n; i += n_threads) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!first_error) first_error = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& w : workers) w.join();
  if (first_error) std::rethrow_exception(first_error);
}

namespace io {

inline void write_bytes(std::ostream& os, const void* p, size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

inline void write_u32(std::ostream& os, uint32_t v) { write_bytes(os, &v, 4); }

inline void write_f32(std::ostream& os, const float* p, size_t n) {
  write_bytes(os, p, n * sizeof(float));
}

inline void read_bytes(std::istream& is, void* p, size_t n,
                       std::string_view what) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<size_t>(is.gcount()) != n)
    throw InputError(cat("truncated file while reading ", what));
}

inline uint32_t read_u32(std::istream& is, std::string_view what) {
  uint32_t v = 0;
  read_bytes(is, &v, 4, what);
  return v;
}

inline void read_f32(std::istream& is, float* p, size_t n,
                     std::string_view what) {
  read_bytes(is, p, n * sizeof(float), what);
}

}  // namespace io

inline std::string read_text_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InputError(cat("cannot open ", path));
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace lexstress
