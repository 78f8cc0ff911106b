// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string_view>

#include <Eigen/Core>

namespace silab {

/// FNV-1a hash of a byte string. Used to derive reproducible sub-seeds
/// from parameter descriptions, so results never depend on evaluation
/// order or worker count.
std::uint64_t stable_hash(std::string_view bytes);

/// Combine an existing hash with more bytes (FNV-1a continuation).
std::uint64_t stable_hash(std::uint64_t h, std::string_view bytes);

/// Counter-based splittable random generator.
///
/// Every draw is a pure function of (stream key, counter), with a
/// splitmix64 finalizer, so sequences are byte-identical across
/// platforms and compilers. Child streams are derived by hashing a tag
/// into the key; children never collide with the parent sequence.
/// Normal deviates use Box-Muller on two fresh uniforms (no cached
/// spare, keeping the state a plain pair of integers).
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  /// Independent child stream identified by a string tag.
  [[nodiscard]] Rng child(std::string_view tag) const;
  /// Independent child stream identified by an index.
  [[nodiscard]] Rng child(std::uint64_t index) const;

  std::uint64_t next_u64();
  /// Uniform on the open interval (0, 1).
  double uniform();
  /// Uniform on (lo, hi).
  double uniform(double lo, double hi);
  /// Standard normal deviate.
  double normal();

  Eigen::VectorXd normal_vector(int d);
  /// Uniform draw from the unit sphere in R^d.
  Eigen::VectorXd sphere_vector(int d);

 private:
  Rng(std::uint64_t key, int);
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace silab
