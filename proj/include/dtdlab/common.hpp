#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>

namespace dtdlab {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Raised when a theorem-level identity is violated numerically.  Seeing one
/// means there is a bug somewhere, not bad input.
class InvariantError : public Error {
public:
  using Error::Error;
};

/// Outcome of a validator: either ok, or the first failed property together
/// with the offending row / state / agent index when one exists.
struct Validation {
  bool ok = true;
  std::string defect;
  std::optional<std::size_t> index;

  static Validation pass() { return {}; }
  static Validation fail(std::string what, std::optional<std::size_t> at = std::nullopt) {
    return {false, std::move(what), at};
  }

  explicit operator bool() const { return ok; }
  std::string describe() const;
};

/// Thin pseudo-random source with a portable uniform draw.  The 64-bit engine is
/// fully specified by the standard, so sequences are reproducible across
/// toolchains as long as only `uniform()` and `engine()` raw output are used.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform double in [0, 1) built from the top 53 bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Standard normal via Box-Muller on `uniform()`.
  double normal();

  std::uint64_t next() { return engine_(); }

private:
  std::mt19937_64 engine_;
  std::optional<double> spare_;
};

/// SplitMix64 finalizer, used to derive independent sub-seeds.
std::uint64_t mix64(std::uint64_t x);

/// Seed for trajectory `seed_index` of sweep entry `lambda_index`.
std::uint64_t derive_seed(std::uint64_t base_seed, std::uint64_t lambda_index,
                          std::uint64_t seed_index);

}  // namespace dtdlab
