#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace icil::num {

// Deterministic random streams. One generator algorithm, fixed forever so
// that runs (and ports to other languages) reproduce bit-for-bit:
//
//   seeding   splitmix64 over  seed ^ C1*(stream_id+1) ^ C2*(substream+1)
//   generator xoshiro256++ (256-bit state)
//   uniform   (x >> 11) * 2^-53            -> [0, 1)
//   normal    Box-Muller on two uniforms, second value cached
//
// Streams are cheap value types; fork substreams instead of sharing one
// generator across workers.

enum class StreamId : uint64_t {
  DataGen = 1,
  Init = 2,
  Rollout = 3,
  Augment = 4,
};

namespace detail {
inline uint64_t splitmix64(uint64_t& s) {
  s += 0x9E3779B97F4A7C15ULL;
  uint64_t z = s;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}
inline uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
}  // namespace detail

class RngStream {
 public:
  RngStream() : RngStream(0, StreamId::DataGen) {}

  RngStream(uint64_t global_seed, StreamId id, uint64_t substream = 0)
      : seed_(global_seed), id_(id) {
    uint64_t s = global_seed ^ (0xD1B54A32D192ED03ULL * (uint64_t(id) + 1)) ^
                 (0x8CB92BA72F3D8DD7ULL * (substream + 1));
    for (auto& w : state_) w = detail::splitmix64(s);
    if ((state_[0] | state_[1] | state_[2] | state_[3]) == 0) state_[0] = 1;
  }

  // Independent substream for worker/episode k; does not advance this stream.
  RngStream fork(uint64_t k) const { return RngStream(seed_, id_, k + 1); }

  uint64_t next_u64() {
    const uint64_t result = detail::rotl(state_[0] + state_[3], 23) + state_[0];
    const uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = detail::rotl(state_[3], 45);
    return result;
  }

  // [0, 1)
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform_in(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // {0, 1, ..., n-1}; uniform() < 1 strictly so no clamp is needed
  int uniform_int(int n) { return int(uniform() * double(n)); }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 1.0 - uniform();  // (0, 1], keeps log finite
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  uint64_t global_seed() const { return seed_; }
  StreamId id() const { return id_; }

 private:
  uint64_t seed_;
  StreamId id_;
  std::array<uint64_t, 4> state_{};
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace icil::num
