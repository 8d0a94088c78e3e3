#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace tonel {

enum class Rounding {
  kHalfAwayFromZero,  // round-to-nearest, ties away from zero (hardware RTN)
  kHalfToEven,
};

struct QuantConfig {
  int bits = 8;  // 2..8
  Rounding rounding = Rounding::kHalfAwayFromZero;
};

// Signed b-bit code vector with one uniform positive scale; the reconstruction
// is scale * codes. An all-zero input maps to zero codes with sentinel scale 1.
struct CimVector {
  std::vector<int8_t> codes;
  float scale = 1.0f;
};

// scale = max_j |v_j| / (2^(b-1) - 1); codes = clamp(round(v_j / scale), ...).
// With the derived scale the magnitude-maximal component always lands exactly
// on +/-(2^(b-1)-1), so requantizing a reconstruction reproduces the codes.
CimVector quantize(std::span<const float> v, const QuantConfig& cfg = {});

// Explicit-scale variant; the clamp is live here (the derived scale above can
// never produce an out-of-range code).
CimVector quantize(std::span<const float> v, const QuantConfig& cfg, float scale);

std::vector<float> dequantize(const CimVector& q);

struct FakeQuantResult {
  std::vector<float> values;  // dequantize(quantize(v))
  std::vector<uint8_t> pass;  // 1 where the straight-through gradient passes
  CimVector quantized;
};

FakeQuantResult fake_quantize(std::span<const float> v, const QuantConfig& cfg = {});
FakeQuantResult fake_quantize(std::span<const float> v, const QuantConfig& cfg,
                              float scale);

// Clipped straight-through estimator: forward equals dequantize(quantize(v)),
// the input gradient equals upstream_grad where |v_j/s| <= 2^(b-1)-1 and is
// zero where the clamp saturates. Returns (forward, input_grad).
std::pair<std::vector<float>, std::vector<float>> fake_quantize_with_grad(
    std::span<const float> v, std::span<const float> upstream_grad,
    const QuantConfig& cfg = {});

std::pair<std::vector<float>, std::vector<float>> fake_quantize_with_grad(
    std::span<const float> v, std::span<const float> upstream_grad,
    const QuantConfig& cfg, float scale);

}  // namespace tonel
