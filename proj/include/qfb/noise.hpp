#pragma once

#include <cmath>
#include <cstdint>

#include "qfb/common.hpp"

namespace qfb {

// Philox-4x32-10 counter-based generator. Draw n of stream s under seed k is
// a pure function of (k, s, n), so ensembles parallelize deterministically
// and identical (seed, stream_id) reproduce identical sequences bit-exactly
// regardless of worker assignment.
namespace philox {

struct Block {
  uint32_t v[4];
};

inline void round_once(uint32_t* ctr, const uint32_t* key) {
  constexpr uint64_t kMul0 = 0xD2511F53, kMul1 = 0xCD9E8D57;
  const uint64_t p0 = kMul0 * ctr[0];
  const uint64_t p1 = kMul1 * ctr[2];
  uint32_t out[4];
  out[0] = static_cast<uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0];
  out[1] = static_cast<uint32_t>(p1);
  out[2] = static_cast<uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1];
  out[3] = static_cast<uint32_t>(p0);
  for (int i = 0; i < 4; ++i) ctr[i] = out[i];
}

inline Block generate(uint64_t seed, uint64_t stream, uint64_t counter) {
  uint32_t ctr[4] = {static_cast<uint32_t>(counter),
                     static_cast<uint32_t>(counter >> 32),
                     static_cast<uint32_t>(stream),
                     static_cast<uint32_t>(stream >> 32)};
  uint32_t key[2] = {static_cast<uint32_t>(seed),
                     static_cast<uint32_t>(seed >> 32)};
  constexpr uint32_t kWeyl0 = 0x9E3779B9, kWeyl1 = 0xBB67AE85;
  for (int r = 0; r < 10; ++r) {
    round_once(ctr, key);
    key[0] += kWeyl0;
    key[1] += kWeyl1;
  }
  return Block{{ctr[0], ctr[1], ctr[2], ctr[3]}};
}

}  // namespace philox

class NoiseSource {
 public:
  NoiseSource(uint64_t seed, uint64_t stream_id)
      : seed_(seed), stream_(stream_id) {}

  uint64_t seed() const { return seed_; }
  uint64_t stream_id() const { return stream_; }
  uint64_t draws() const { return counter_; }

  // Uniform in (0, 1], from 53 random bits.
  double uniform() {
    philox::Block b = philox::generate(seed_, stream_, counter_++);
    uint64_t bits = (static_cast<uint64_t>(b.v[0]) << 32) | b.v[1];
    return (static_cast<double>(bits >> 11) + 1.0) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller; one block per draw keeps the mapping
  // (seed, stream, counter) -> value independent of call history.
  double gaussian() {
    philox::Block b = philox::generate(seed_, stream_, counter_++);
    uint64_t u1_bits = (static_cast<uint64_t>(b.v[0]) << 32) | b.v[1];
    uint64_t u2_bits = (static_cast<uint64_t>(b.v[2]) << 32) | b.v[3];
    double u1 = (static_cast<double>(u1_bits >> 11) + 1.0) * 0x1.0p-53;
    double u2 = static_cast<double>(u2_bits >> 11) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
  }

  // Wiener increment over dt.
  double wiener(double dt) { return gaussian() * std::sqrt(dt); }

 private:
  uint64_t seed_;
  uint64_t stream_;
  uint64_t counter_ = 0;
};

}  // namespace qfb
