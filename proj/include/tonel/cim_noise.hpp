#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tonel/quantizer.hpp"
#include "tonel/rng.hpp"

namespace tonel {

// Per-level readout variation of a 2-bit multi-level cell: sigma_v[k] is the
// stddev of the analog readout error of a cell programmed to state k.
struct DeviceProfile {
  std::string name;
  std::array<float, 4> sigma_v{};
};

// The four measured device profiles (RRAM1, FeFET2, FeFET3, RRAM4).
const std::vector<DeviceProfile>& builtin_profiles();

// Lookup by name ("Device-1".."Device-4"); throws kBadConfig listing the
// valid names. Also accepts the device family aliases ("RRAM1", ...).
const DeviceProfile& profile_by_name(const std::string& name);

// Load a custom profile from JSON: {"name": str, "sigma_v": [4 floats]}.
DeviceProfile load_profile(const std::string& json_path);

struct NoiseConfig {
  DeviceProfile profile;
  float sigma_scale = 1.0f;    // global multiplier on every sigma_v
  float noisy_fraction = 0.0f; // fraction of documents perturbed, [0, 1]
  uint64_t seed = 0;
};

// An 8-bit code split across four 2-bit cells, least significant first:
// code + 128 = sum_j cells[j] * 4^j, each cell state in {0,1,2,3}.
std::array<int, 4> slice_cells(int8_t code);
int8_t unslice_cells(const std::array<int, 4>& cells);

// Readout error of one cell: N(0, (sigma_scale * sigma_v[state])^2).
float cell_readout_noise(int state, const DeviceProfile& profile,
                         float sigma_scale, RngStream& rng);

// Analog readout of one stored code: each cell perturbed independently,
// recombined with base-4 weights, recentred and rescaled. Exactly
// scale*code when sigma_scale is zero. Stays in floats: the crossbar
// accumulates analog values, the readout is never re-rounded.
float perturb_code(int8_t code, float scale, const DeviceProfile& profile,
                   float sigma_scale, RngStream& rng);

// Noisy readout of a whole stored vector (one document).
std::vector<float> perturb_document(const CimVector& q, const NoiseConfig& cfg,
                                    RngStream& rng);

struct PerturbedMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> data;                  // row-major noisy readout
  std::vector<std::size_t> noisy_indices;   // sorted ascending
};

// Perturbs round(noisy_fraction * N) documents chosen uniformly without
// replacement (seeded); the rest dequantize exactly. Each document uses its
// own RNG substream, so the result is independent of thread count.
PerturbedMatrix perturb_matrix(std::span<const CimVector> docs,
                               const NoiseConfig& cfg);

// Training-time noise: values + eta, where eta comes from the same cell-level
// mechanism as the test-time readout. Precondition: values = dequantize(codes).
std::vector<float> training_noise(std::span<const float> values,
                                  const CimVector& codes, const NoiseConfig& cfg,
                                  RngStream& rng);

}  // namespace tonel
