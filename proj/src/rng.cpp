#include "tonel/rng.hpp"

#include <cmath>

namespace tonel {
namespace {

constexpr uint32_t kMul0 = 0xD2511F53u;
constexpr uint32_t kMul1 = 0xCD9E8D57u;
constexpr uint32_t kWeyl0 = 0x9E3779B9u;
constexpr uint32_t kWeyl1 = 0xBB67AE85u;

inline void mulhilo(uint32_t a, uint32_t b, uint32_t& hi, uint32_t& lo) {
  const uint64_t p = static_cast<uint64_t>(a) * b;
  hi = static_cast<uint32_t>(p >> 32);
  lo = static_cast<uint32_t>(p);
}

}  // namespace

std::array<uint32_t, 4> Philox4x32::block(const std::array<uint32_t, 4>& counter,
                                          const std::array<uint32_t, 2>& key) {
  std::array<uint32_t, 4> c = counter;
  uint32_t k0 = key[0];
  uint32_t k1 = key[1];
  for (int round = 0; round < 10; ++round) {
    uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kMul0, c[0], hi0, lo0);
    mulhilo(kMul1, c[2], hi1, lo1);
    c = {hi1 ^ c[1] ^ k0, lo1, hi0 ^ c[3] ^ k1, lo0};
    k0 += kWeyl0;
    k1 += kWeyl1;
  }
  return c;
}

RngStream::RngStream(uint64_t seed, RngContext ctx, uint32_t a, uint32_t b)
    : key_{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32)},
      stream_{a, b, static_cast<uint32_t>(ctx)} {}

void RngStream::refill() {
  buf_ = Philox4x32::block({block_, stream_[0], stream_[1], stream_[2]}, key_);
  ++block_;
  pos_ = 0;
}

uint32_t RngStream::next_u32() {
  if (pos_ >= 4) refill();
  return buf_[pos_++];
}

uint64_t RngStream::next_u64() {
  const uint64_t lo = next_u32();
  const uint64_t hi = next_u32();
  return (hi << 32) | lo;
}

double RngStream::next_double() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

uint32_t RngStream::next_below(uint32_t n) {
  // Reject the tail that does not divide evenly so the result is exact.
  const uint32_t rem = (0u - n) % n;  // 2^32 mod n
  for (;;) {
    const uint32_t r = next_u32();
    if (r >= rem) return (r - rem) % n;
  }
}

double RngStream::next_gaussian() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = next_double();  // [0,1)
  const double u2 = next_double();
  const double r = std::sqrt(-2.0 * std::log1p(-u1));  // log(1-u1), u1<1
  const double theta = 2.0 * M_PI * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

}  // namespace tonel
