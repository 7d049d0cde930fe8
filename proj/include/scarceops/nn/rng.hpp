#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace scarceops::nn {

// PCG32 (Melissa O'Neill, pcg-random.org, "minimal" variant). Chosen over
// std::mt19937 because the raw engine plus the float mappings below are
// bit-portable across platforms and standard libraries.
//
// state update: state = state * 6364136223846793005 + inc  (inc odd)
// output: 32-bit xorshift-high + random rotate of the old state.
class Pcg32 {
public:
  explicit Pcg32(uint64_t seed, uint64_t stream = 0) { reseed(seed, stream); }

  void reseed(uint64_t seed, uint64_t stream = 0) {
    state_ = 0;
    inc_ = (stream << 1u) | 1u;
    next_u32();
    state_ += seed;
    next_u32();
  }

  uint32_t next_u32() {
    uint64_t old = state_;
    state_ = old * 6364136223846793005ULL + inc_;
    uint32_t xorshifted = static_cast<uint32_t>(((old >> 18u) ^ old) >> 27u);
    uint32_t rot = static_cast<uint32_t>(old >> 59u);
    return (xorshifted >> rot) | (xorshifted << ((-rot) & 31u));
  }

  uint64_t next_u64() {
    return (static_cast<uint64_t>(next_u32()) << 32) | next_u32();
  }

  // Uniform in [0, 1) with 24 bits of mantissa; exact on every platform.
  float next_float() { return (next_u32() >> 8) * 0x1.0p-24f; }

  double next_double() { return (next_u64() >> 11) * 0x1.0p-53; }

  float uniform(float lo, float hi) { return lo + (hi - lo) * next_float(); }

  double log_uniform(double lo, double hi) {
    return std::exp(std::log(lo) + (std::log(hi) - std::log(lo)) * next_double());
  }

  // Bounded draw; the modulo bias is irrelevant at the sizes used here.
  uint64_t below(uint64_t n) { return n ? next_u64() % n : 0; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

private:
  uint64_t state_ = 0;
  uint64_t inc_ = 1;
};

// Distinct stream ids so one seed drives independent substreams.
enum RngStream : uint64_t {
  kStreamInit = 1,
  kStreamShuffle = 2,
  kStreamSearch = 3,
  kStreamData = 4,
};

}  // namespace scarceops::nn
