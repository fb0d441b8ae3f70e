// SPDX-License-Identifier: Apache-2.0
#include "coretune/common.hpp"

#include <cmath>
#include <cstdlib>

namespace coretune {

LogLevel log_level() {
  static const LogLevel level = [] {
    const char* v = std::getenv("CORETUNE_LOG");
    if (v == nullptr) return LogLevel::info;
    const std::string_view s{v};
    if (s == "error") return LogLevel::error;
    if (s == "debug") return LogLevel::debug;
    return LogLevel::info;
  }();
  return level;
}

namespace detail {
void log_line(LogLevel level, const std::string& msg) {
  const char* tag = level == LogLevel::error ? "error" : level == LogLevel::debug ? "debug" : "info";
  std::cerr << "[coretune:" << tag << "] " << msg << "\n";
}
}  // namespace detail

std::uint64_t derive_seed(std::uint64_t master, std::string_view stream, std::uint64_t index) {
  // FNV-1a over (master || stream || index), then a splitmix finalizer.
  std::uint64_t h = 1469598103934665603ull;
  const auto mix_u64 = [&h](std::uint64_t x) {
    for (int i = 0; i < 8; ++i) {
      h ^= (x >> (8 * i)) & 0xffull;
      h *= 1099511628211ull;
    }
  };
  mix_u64(master);
  for (const char c : stream) {
    h ^= static_cast<std::uint8_t>(c);
    h *= 1099511628211ull;
  }
  mix_u64(index);
  std::uint64_t z = h;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace coretune
