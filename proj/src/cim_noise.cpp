#include "tonel/cim_noise.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "json.hpp"

#include "tonel/error.hpp"
#include "tonel/parallel.hpp"

namespace tonel {

const std::vector<DeviceProfile>& builtin_profiles() {
  static const std::vector<DeviceProfile> profiles = {
      {"Device-1", {0.0100f, 0.0100f, 0.0100f, 0.0100f}},  // RRAM1
      {"Device-2", {0.0067f, 0.0135f, 0.0135f, 0.0067f}},  // FeFET2
      {"Device-3", {0.0049f, 0.0146f, 0.0146f, 0.0049f}},  // FeFET3
      {"Device-4", {0.0038f, 0.0151f, 0.0151f, 0.0038f}},  // RRAM4
  };
  return profiles;
}

const DeviceProfile& profile_by_name(const std::string& name) {
  static const std::vector<std::string> aliases = {"RRAM1", "FeFET2", "FeFET3",
                                                   "RRAM4"};
  const auto& profiles = builtin_profiles();
  for (std::size_t i = 0; i < profiles.size(); ++i) {
    if (profiles[i].name == name || aliases[i] == name) return profiles[i];
  }
  std::string valid;
  for (const auto& p : profiles) valid += (valid.empty() ? "" : ", ") + p.name;
  fail(ErrorCode::kBadConfig,
       "unknown device profile '" + name + "' (valid: " + valid + ")");
}

DeviceProfile load_profile(const std::string& json_path) {
  std::ifstream in(json_path);
  if (!in) fail(ErrorCode::kIoFailure, "cannot open profile file " + json_path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kBadConfig, "profile " + json_path + ": " + e.what());
  }
  DeviceProfile p;
  if (!j.contains("name") || !j.contains("sigma_v") || !j["sigma_v"].is_array() ||
      j["sigma_v"].size() != 4)
    fail(ErrorCode::kBadConfig,
         "profile " + json_path + " must contain name and sigma_v[4]");
  p.name = j["name"].get<std::string>();
  for (int k = 0; k < 4; ++k) {
    const float v = j["sigma_v"][k].get<float>();
    if (!std::isfinite(v) || v < 0.0f)
      fail(ErrorCode::kBadConfig,
           "profile " + json_path + ": sigma_v must be finite and >= 0");
    p.sigma_v[k] = v;
  }
  return p;
}

std::array<int, 4> slice_cells(int8_t code) {
  int u = static_cast<int>(code) + 128;  // [0, 255]
  std::array<int, 4> cells{};
  for (int j = 0; j < 4; ++j) {
    cells[j] = u & 3;
    u >>= 2;
  }
  return cells;
}

int8_t unslice_cells(const std::array<int, 4>& cells) {
  int u = 0;
  for (int j = 3; j >= 0; --j) u = (u << 2) | (cells[j] & 3);
  return static_cast<int8_t>(u - 128);
}

float cell_readout_noise(int state, const DeviceProfile& profile,
                         float sigma_scale, RngStream& rng) {
  const double sd = static_cast<double>(sigma_scale) * profile.sigma_v[state];
  return static_cast<float>(sd * rng.next_gaussian());
}

float perturb_code(int8_t code, float scale, const DeviceProfile& profile,
                   float sigma_scale, RngStream& rng) {
  const auto cells = slice_cells(code);
  double readout = 0.0;
  double weight = 1.0;  // 4^j
  for (int j = 0; j < 4; ++j) {
    const double eps = cell_readout_noise(cells[j], profile, sigma_scale, rng);
    readout += (static_cast<double>(cells[j]) + eps) * weight;
    weight *= 4.0;
  }
  return static_cast<float>(static_cast<double>(scale) * (readout - 128.0));
}

std::vector<float> perturb_document(const CimVector& q, const NoiseConfig& cfg,
                                    RngStream& rng) {
  std::vector<float> out(q.codes.size());
  if (cfg.sigma_scale == 0.0f) {
    // Bit-exact with the clean dequantization path.
    for (std::size_t j = 0; j < out.size(); ++j)
      out[j] = q.scale * static_cast<float>(q.codes[j]);
    return out;
  }
  for (std::size_t j = 0; j < out.size(); ++j)
    out[j] = perturb_code(q.codes[j], q.scale, cfg.profile, cfg.sigma_scale, rng);
  return out;
}

namespace {

// round-half-away count of perturbed documents
std::size_t noisy_count(float fraction, std::size_t n) {
  const double target = static_cast<double>(fraction) * static_cast<double>(n);
  const long long c = std::llround(target);
  return static_cast<std::size_t>(std::clamp<long long>(c, 0, static_cast<long long>(n)));
}

}  // namespace

PerturbedMatrix perturb_matrix(std::span<const CimVector> docs,
                               const NoiseConfig& cfg) {
  if (docs.empty()) fail(ErrorCode::kEmptyVector, "perturb_matrix: no documents");
  if (cfg.noisy_fraction < 0.0f || cfg.noisy_fraction > 1.0f)
    fail(ErrorCode::kBadConfig, "noisy_fraction must be in [0, 1]");
  const std::size_t n = docs.size();
  const std::size_t cols = docs[0].codes.size();
  for (const auto& d : docs)
    if (d.codes.size() != cols)
      fail(ErrorCode::kShapeMismatch, "documents have mixed dimensions");

  const std::size_t m = noisy_count(cfg.noisy_fraction, n);

  // Partial Fisher-Yates over the index array; first m entries are the draw.
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  RngStream pick(cfg.seed, RngContext::kNoisySelect);
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t j = i + pick.next_below(static_cast<uint32_t>(n - i));
    std::swap(idx[i], idx[j]);
  }
  std::vector<std::size_t> noisy(idx.begin(), idx.begin() + m);
  std::sort(noisy.begin(), noisy.end());

  std::vector<uint8_t> is_noisy(n, 0);
  for (const std::size_t i : noisy) is_noisy[i] = 1;

  PerturbedMatrix out;
  out.rows = n;
  out.cols = cols;
  out.data.resize(n * cols);
  out.noisy_indices = std::move(noisy);

  parallel_for(n, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      float* row = out.data.data() + i * cols;
      if (is_noisy[i]) {
        RngStream rng(cfg.seed, RngContext::kEvalNoise, static_cast<uint32_t>(i));
        const auto noisyrow = perturb_document(docs[i], cfg, rng);
        std::copy(noisyrow.begin(), noisyrow.end(), row);
      } else {
        const auto& d = docs[i];
        for (std::size_t j = 0; j < cols; ++j)
          row[j] = d.scale * static_cast<float>(d.codes[j]);
      }
    }
  });
  return out;
}

std::vector<float> training_noise(std::span<const float> values,
                                  const CimVector& codes, const NoiseConfig& cfg,
                                  RngStream& rng) {
  if (values.size() != codes.codes.size())
    fail(ErrorCode::kShapeMismatch,
         "training_noise: values and codes length differ");
  std::vector<float> out(values.size());
  if (cfg.sigma_scale == 0.0f) {
    std::copy(values.begin(), values.end(), out.begin());
    return out;
  }
  for (std::size_t j = 0; j < out.size(); ++j) {
    const float clean = codes.scale * static_cast<float>(codes.codes[j]);
    const float noisy =
        perturb_code(codes.codes[j], codes.scale, cfg.profile, cfg.sigma_scale, rng);
    out[j] = values[j] + (noisy - clean);
  }
  return out;
}

}  // namespace tonel
