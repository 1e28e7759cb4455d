#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace tailrisk {

inline constexpr const char* kVersion = "1.0.0";

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad inputs or configuration (CLI exit code 2).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Failed or degenerate numerics (CLI exit code 3).
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// A parameter vector produced an invalid filtered path.
class InfeasibleError : public NumericalError {
 public:
  InfeasibleError(const std::string& what, std::size_t index)
      : NumericalError(what + " (first offending index " + std::to_string(index) + ")"),
        index_(index) {}
  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

// Neumaier-compensated accumulator.
class CompensatedSum {
 public:
  void add(double x) noexcept {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x)) {
      comp_ += (sum_ - t) + x;
    } else {
      comp_ += (x - t) + sum_;
    }
    sum_ = t;
  }
  double value() const noexcept { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

inline double compensated_mean(std::span<const double> xs) {
  if (xs.empty()) throw ValidationError("mean of an empty range");
  CompensatedSum s;
  for (double x : xs) s.add(x);
  return s.value() / static_cast<double>(xs.size());
}

inline double sample_variance(std::span<const double> xs) {
  if (xs.size() < 2) throw ValidationError("sample variance needs at least two values");
  const double m = compensated_mean(xs);
  CompensatedSum s;
  for (double x : xs) s.add((x - m) * (x - m));
  return s.value() / static_cast<double>(xs.size() - 1);
}

/// Inverse-ECDF (type 1) empirical quantile: the ceil(n*alpha)-th order statistic.
inline double empirical_quantile(std::span<const double> xs, double alpha) {
  if (xs.empty()) throw ValidationError("quantile of an empty range");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("quantile level must lie in (0,1)");
  std::vector<double> sorted(xs.begin(), xs.end());
  const auto n = sorted.size();
  auto k = static_cast<std::size_t>(std::ceil(alpha * static_cast<double>(n)));
  k = std::clamp<std::size_t>(k, 1, n);
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k - 1), sorted.end());
  return sorted[k - 1];
}

// SplitMix64 finalizer; the basis of all counter-based seeding.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Seed for stream `stream` derived from a master seed; independent of evaluation order.
constexpr std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream) noexcept {
  return splitmix64(splitmix64(seed) ^ splitmix64(stream + 0x632BE59BD9B4E019ULL));
}

/// Uniform double in (0,1) from (seed, counter).
constexpr double counter_uniform(std::uint64_t seed, std::uint64_t counter) noexcept {
  const std::uint64_t bits = stream_seed(seed, counter) >> 11;
  return (static_cast<double>(bits) + 0.5) * (1.0 / 9007199254740992.0);
}

namespace detail {
inline std::size_t& thread_override() {
  static std::size_t n = 0;
  return n;
}
}  // namespace detail

/// Set the worker count used by parallel_for (0 restores the environment default).
inline void set_thread_count(std::size_t n) { detail::thread_override() = n; }

/// Worker count: explicit override, else TAILRISK_THREADS, else 1.
inline std::size_t thread_count() {
  if (detail::thread_override() > 0) return detail::thread_override();
  if (const char* env = std::getenv("TAILRISK_THREADS")) {
    const long n = std::strtol(env, nullptr, 10);
    if (n > 0) return static_cast<std::size_t>(n);
  }
  return 1;
}

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index must write
/// only its own output slot; results are then independent of scheduling.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn, std::size_t threads = thread_count()) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  pool.reserve(threads);
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += threads) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

inline bool is_finite(double x) noexcept { return std::isfinite(x); }

}  // namespace tailrisk
