// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace coretune {

/// Raised for malformed input files (LIBSVM text, caches, checkpoints).
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised for invalid experiment configuration (maps to CLI exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class LogLevel { error = 0, info = 1, debug = 2 };

/// Level parsed once from CORETUNE_LOG={error|info|debug}; defaults to info.
LogLevel log_level();

namespace detail {
void log_line(LogLevel level, const std::string& msg);
}

template <typename... Args>
void log_error(Args&&... args) {
  std::ostringstream os;
  (os << ... << args);
  detail::log_line(LogLevel::error, os.str());
}

template <typename... Args>
void log_info(Args&&... args) {
  if (log_level() < LogLevel::info) return;
  std::ostringstream os;
  (os << ... << args);
  detail::log_line(LogLevel::info, os.str());
}

template <typename... Args>
void log_debug(Args&&... args) {
  if (log_level() < LogLevel::debug) return;
  std::ostringstream os;
  (os << ... << args);
  detail::log_line(LogLevel::debug, os.str());
}

// Counter-based generator (splitmix64). All randomness in the project flows
// through this so results are reproducible across platforms and standard
// library versions; std::<distribution> output is implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1).
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  /// Uniform integer in [lo, hi], inclusive. Rejection sampling, no modulo bias.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const std::uint64_t range = static_cast<std::uint64_t>(hi - lo) + 1;
    if (range == 0) return static_cast<std::int64_t>(next_u64());  // full 64-bit span
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % range;
    std::uint64_t v;
    do {
      v = next_u64();
    } while (v >= limit);
    return lo + static_cast<std::int64_t>(v % range);
  }

  /// Standard normal via Box-Muller (two uniforms per call, no cached state).
  double normal() {
    const double u1 = std::max(next_double(), 1e-300);
    const double u2 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t state_;
};

/// Derives an independent seed stream from (master, stream name, index).
/// Used to fan one experiment seed out into split/init/batch/selection/
/// searcher/scheduler streams so strategies stay paired.
std::uint64_t derive_seed(std::uint64_t master, std::string_view stream, std::uint64_t index = 0);

}  // namespace coretune
