#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace wsiseg {

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t hash_combine(std::uint64_t seed, std::uint64_t value);
std::uint64_t hash_string(std::string_view s);

// mt19937_64 with distribution transforms written out by hand, so a seed
// produces the same stream under any standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(splitmix64(seed)) {}

  std::uint64_t next() { return engine_(); }
  // [0, 1)
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // [0, n)
  std::uint64_t below(std::uint64_t n);
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace wsiseg
