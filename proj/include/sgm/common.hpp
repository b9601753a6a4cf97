#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace sgm {

using VertexId = std::uint32_t;
using Label = std::int32_t;

inline constexpr Label kNoLabel = -1;
inline constexpr VertexId kInvalidVertex = static_cast<VertexId>(-1);

// Raised on malformed inputs (text parsing, bad files, bad ids).
struct ParseError : std::runtime_error {
  explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

// Raised on inconsistent configuration (flag combinations, plan/config mismatch).
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Raised when a distributed run fails mid-flight (closed channel, bad prefix).
struct ExecError : std::runtime_error {
  explicit ExecError(const std::string& what) : std::runtime_error(what) {}
};

// Raised when a run exceeds its wall-clock or memory cap.
struct ResourceCapExceeded : std::runtime_error {
  enum class Kind { Time, Memory };
  Kind kind;
  ResourceCapExceeded(Kind k, const std::string& what)
      : std::runtime_error(what), kind(k) {}
};

// 64-bit mix (splitmix64 finalizer); used wherever a seedable vertex hash is wanted.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_combine(std::uint64_t seed, std::uint64_t v) {
  return mix64(seed ^ (v + 0x9e3779b97f4a7c15ULL + (seed << 6) + (seed >> 2)));
}

}  // namespace sgm
