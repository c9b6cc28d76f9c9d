#pragma once

#include <cstdint>
#include <string_view>

namespace epmvg::numcore {

// Counter-based generator keyed by (seed, stream name, index). Streams are
// independent, so the draw sequence of one consumer never shifts another's,
// no matter in which order modules initialize. Same key -> same sequence.
class Rng {
 public:
  Rng(std::uint64_t seed, std::string_view stream, std::uint64_t index = 0);

  std::uint64_t next_u64();

  // Uniform in [0, 1).
  double uniform();
  // Uniform in [lo, hi).
  double uniform(double lo, double hi);
  // Uniform integer in [lo, hi] inclusive.
  std::uint64_t uniform_int(std::uint64_t lo, std::uint64_t hi);

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

// Stateless 64-bit mix, also used for dataset split hashing.
std::uint64_t mix64(std::uint64_t x);

}  // namespace epmvg::numcore
