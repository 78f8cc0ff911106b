// SPDX-License-Identifier: Apache-2.0
#include "silab/rng.hpp"

#include <cmath>
#include <cstring>

#include "silab/errors.hpp"

namespace silab {

namespace {

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;
constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

std::uint64_t splitmix_finalize(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

std::uint64_t stable_hash(std::string_view bytes) {
  return stable_hash(kFnvOffset, bytes);
}

std::uint64_t stable_hash(std::uint64_t h, std::string_view bytes) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= kFnvPrime;
  }
  return h;
}

Rng::Rng(std::uint64_t seed) : key_(splitmix_finalize(seed + kGolden)) {}

Rng::Rng(std::uint64_t key, int) : key_(key) {}

Rng Rng::child(std::string_view tag) const {
  std::uint64_t h = kFnvOffset;
  char buf[8];
  std::memcpy(buf, &key_, 8);
  h = stable_hash(h, std::string_view(buf, 8));
  h = stable_hash(h, tag);
  return Rng(splitmix_finalize(h), 0);
}

Rng Rng::child(std::uint64_t index) const {
  std::uint64_t h = kFnvOffset;
  char buf[16];
  std::memcpy(buf, &key_, 8);
  std::memcpy(buf + 8, &index, 8);
  h = stable_hash(h, std::string_view(buf, 16));
  return Rng(splitmix_finalize(h), 0);
}

std::uint64_t Rng::next_u64() {
  counter_ += kGolden;
  return splitmix_finalize(key_ + counter_);
}

double Rng::uniform() {
  // 53-bit mantissa shifted to the midpoint of its cell: never 0 or 1.
  return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
  if (!(lo < hi)) throw ArgumentError("uniform: lo must be < hi");
  return lo + (hi - lo) * uniform();
}

double Rng::normal() {
  const double u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  return r * std::cos(6.283185307179586476925286766559 * u2);
}

Eigen::VectorXd Rng::normal_vector(int d) {
  if (d < 1) throw ArgumentError("normal_vector: dimension must be positive");
  Eigen::VectorXd v(d);
  for (int i = 0; i < d; ++i) v[i] = normal();
  return v;
}

Eigen::VectorXd Rng::sphere_vector(int d) {
  for (;;) {
    Eigen::VectorXd v = normal_vector(d);
    const double n = v.norm();
    if (n > 1e-12) return v / n;
  }
}

}  // namespace silab
