#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

#include "matamp/common.hpp"

namespace matamp {

/// Deterministically derives an independent substream seed from a master
/// seed and a path of tags/indices (SplitMix64 chaining).
std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path);

/// Stream tags used by derive_seed; fixed so seeds stay stable across releases.
enum class Stream : std::uint64_t {
  design = 1,
  signal = 2,
  auxiliary = 3,
  noise = 4,
  init = 5,
  se = 6,
  channel_mc = 7,
  posterior_mc = 8,
  grid = 9,
  repeat = 10,
};

inline std::uint64_t tag(Stream s) { return static_cast<std::uint64_t>(s); }

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  bool bernoulli(double p) { return uniform() < p; }

  /// Fills a vector with i.i.d. standard normals.
  Vector normal_vector(Eigen::Index n);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace matamp
