#include "tonel/quantizer.hpp"

#include <cmath>
#include <string>

#include "tonel/error.hpp"

namespace tonel {
namespace {

void check_config(const QuantConfig& cfg) {
  if (cfg.bits < 2 || cfg.bits > 8)
    fail(ErrorCode::kBadConfig,
         "quantizer bits must be in [2, 8], got " + std::to_string(cfg.bits));
}

void check_input(std::span<const float> v) {
  if (v.empty()) fail(ErrorCode::kEmptyVector, "cannot quantize an empty vector");
  for (std::size_t j = 0; j < v.size(); ++j) {
    if (!std::isfinite(v[j]))
      fail(ErrorCode::kNonFiniteInput,
           "non-finite input at component " + std::to_string(j));
  }
}

inline double apply_rounding(double x, Rounding mode) {
  switch (mode) {
    case Rounding::kHalfAwayFromZero:
      return std::round(x);
    case Rounding::kHalfToEven:
      return std::nearbyint(x);  // assumes FE_TONEAREST, the process default
  }
  return std::round(x);
}

float derive_scale(std::span<const float> v, int bits) {
  float amax = 0.0f;
  for (const float x : v) amax = std::max(amax, std::fabs(x));
  if (amax == 0.0f) return 1.0f;  // sentinel: zero vector reconstructs exactly
  const float qmax = static_cast<float>((1 << (bits - 1)) - 1);
  return amax / qmax;
}

// pass (when non-null) records where the clamp did NOT saturate: that is the
// straight-through mask
CimVector quantize_impl(std::span<const float> v, const QuantConfig& cfg,
                        float scale, std::vector<uint8_t>* pass = nullptr) {
  const int qmax = (1 << (cfg.bits - 1)) - 1;
  const int qmin = -(1 << (cfg.bits - 1));
  CimVector out;
  out.scale = scale;
  out.codes.resize(v.size());
  if (pass) pass->resize(v.size());
  const double s = static_cast<double>(scale);
  for (std::size_t j = 0; j < v.size(); ++j) {
    double q = apply_rounding(static_cast<double>(v[j]) / s, cfg.rounding);
    const bool in_range = q >= qmin && q <= qmax;
    if (pass) (*pass)[j] = in_range ? 1 : 0;
    if (q < qmin) q = qmin;
    if (q > qmax) q = qmax;
    out.codes[j] = static_cast<int8_t>(q);
  }
  return out;
}

}  // namespace

CimVector quantize(std::span<const float> v, const QuantConfig& cfg) {
  check_config(cfg);
  check_input(v);
  return quantize_impl(v, cfg, derive_scale(v, cfg.bits));
}

CimVector quantize(std::span<const float> v, const QuantConfig& cfg, float scale) {
  check_config(cfg);
  check_input(v);
  if (!(scale > 0.0f) || !std::isfinite(scale))
    fail(ErrorCode::kNonFiniteInput, "quantizer scale must be finite and > 0");
  return quantize_impl(v, cfg, scale);
}

std::vector<float> dequantize(const CimVector& q) {
  std::vector<float> out(q.codes.size());
  for (std::size_t j = 0; j < out.size(); ++j)
    out[j] = q.scale * static_cast<float>(q.codes[j]);
  return out;
}

namespace {

FakeQuantResult fake_quantize_impl(std::span<const float> v,
                                   const QuantConfig& cfg, float scale) {
  FakeQuantResult r;
  r.quantized = quantize_impl(v, cfg, scale, &r.pass);
  r.values = dequantize(r.quantized);
  return r;
}

}  // namespace

FakeQuantResult fake_quantize(std::span<const float> v, const QuantConfig& cfg) {
  check_config(cfg);
  check_input(v);
  return fake_quantize_impl(v, cfg, derive_scale(v, cfg.bits));
}

FakeQuantResult fake_quantize(std::span<const float> v, const QuantConfig& cfg,
                              float scale) {
  check_config(cfg);
  check_input(v);
  if (!(scale > 0.0f) || !std::isfinite(scale))
    fail(ErrorCode::kNonFiniteInput, "quantizer scale must be finite and > 0");
  return fake_quantize_impl(v, cfg, scale);
}

namespace {

std::pair<std::vector<float>, std::vector<float>> with_grad(
    const FakeQuantResult& fq, std::span<const float> upstream_grad) {
  std::vector<float> grad(upstream_grad.size());
  for (std::size_t j = 0; j < grad.size(); ++j)
    grad[j] = fq.pass[j] ? upstream_grad[j] : 0.0f;
  return {fq.values, std::move(grad)};
}

}  // namespace

std::pair<std::vector<float>, std::vector<float>> fake_quantize_with_grad(
    std::span<const float> v, std::span<const float> upstream_grad,
    const QuantConfig& cfg) {
  if (v.size() != upstream_grad.size())
    fail(ErrorCode::kShapeMismatch, "input and upstream gradient length differ");
  return with_grad(fake_quantize(v, cfg), upstream_grad);
}

std::pair<std::vector<float>, std::vector<float>> fake_quantize_with_grad(
    std::span<const float> v, std::span<const float> upstream_grad,
    const QuantConfig& cfg, float scale) {
  if (v.size() != upstream_grad.size())
    fail(ErrorCode::kShapeMismatch, "input and upstream gradient length differ");
  return with_grad(fake_quantize(v, cfg, scale), upstream_grad);
}

}  // namespace tonel
