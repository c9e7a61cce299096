#include "dtdlab/common.hpp"

#include <cmath>
#include <numbers>

namespace dtdlab {

std::string Validation::describe() const {
  if (ok) return "ok";
  std::string out = defect;
  if (index) out += " (index " + std::to_string(*index) + ")";
  return out;
}

double Rng::normal() {
  if (spare_) {
    double v = *spare_;
    spare_.reset();
    return v;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  return radius * std::cos(angle);
}

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t base_seed, std::uint64_t lambda_index,
                          std::uint64_t seed_index) {
  return mix64(mix64(mix64(base_seed) ^ lambda_index) ^ seed_index);
}

}  // namespace dtdlab
