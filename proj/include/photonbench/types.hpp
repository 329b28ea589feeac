#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace photonbench {

/// Integer picoseconds, the time base of every tag stream.
using Picoseconds = std::int64_t;

/// Random engine used by every stochastic operation. One engine per consumer.
using Rng = std::mt19937_64;

inline constexpr double kPsPerNs = 1e3;
inline constexpr double kPsPerSecond = 1e12;
inline constexpr double kNsPerSecond = 1e9;

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
};

inline bool operator==(const Vec2 &a, const Vec2 &b) { return a.x == b.x && a.y == b.y; }
inline bool operator==(const Vec3 &a, const Vec3 &b) {
  return a.x == b.x && a.y == b.y && a.z == b.z;
}

/// Bad input: malformed data, violated precondition, unordered stream.
class ValidationError : public std::invalid_argument {
public:
  explicit ValidationError(const std::string &message, std::string field = {})
      : std::invalid_argument(message), field_(std::move(field)) {}
  const std::string &field() const noexcept { return field_; }

private:
  std::string field_;
};

/// A value outside a device's reachable range (voltages, positions).
class RangeError : public std::out_of_range {
public:
  explicit RangeError(const std::string &message, std::string field = {})
      : std::out_of_range(message), field_(std::move(field)) {}
  const std::string &field() const noexcept { return field_; }

private:
  std::string field_;
};

/// The requested sample layout cannot be realized within the retry budget.
class InfeasibleError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Fit could not be attempted (too few points, degenerate data).
class FitError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// SplitMix64 step; used to derive independent child seeds from one master seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

} // namespace photonbench
