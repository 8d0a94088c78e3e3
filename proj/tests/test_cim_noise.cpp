#include <cmath>
#include <fstream>
#include <vector>

#include "doctest.h"
#include "testutil.hpp"
#include "tonel/cim_noise.hpp"
#include "tonel/error.hpp"
#include "tonel/quantizer.hpp"

using namespace tonel;

TEST_CASE("builtin profiles carry the measured per-level stddevs") {
  const auto& profiles = builtin_profiles();
  REQUIRE(profiles.size() == 4);
  CHECK(profiles[0].name == "Device-1");
  CHECK(profiles[0].sigma_v == std::array<float, 4>{0.0100f, 0.0100f, 0.0100f,
                                                    0.0100f});
  CHECK(profiles[1].sigma_v == std::array<float, 4>{0.0067f, 0.0135f, 0.0135f,
                                                    0.0067f});
  CHECK(profiles[2].sigma_v == std::array<float, 4>{0.0049f, 0.0146f, 0.0146f,
                                                    0.0049f});
  CHECK(profiles[3].sigma_v == std::array<float, 4>{0.0038f, 0.0151f, 0.0151f,
                                                    0.0038f});
}

TEST_CASE("profile lookup by name and alias, helpful failure") {
  CHECK(profile_by_name("Device-3").sigma_v[1] == 0.0146f);
  CHECK(profile_by_name("FeFET3").name == "Device-3");
  CHECK_THROWS_WITH_AS(profile_by_name("Device-9"),
                       doctest::Contains("valid: Device-1"), TonelError);
}

TEST_CASE("profile loads from JSON") {
  testutil::TempDir dir("profile");
  const std::string path = dir.file("custom.json");
  std::ofstream(path) << R"({"name":"lab-device","sigma_v":[0.01,0.02,0.03,0.04]})";
  const DeviceProfile p = load_profile(path);
  CHECK(p.name == "lab-device");
  CHECK(p.sigma_v[3] == 0.04f);
  std::ofstream(dir.file("bad.json")) << R"({"name":"x","sigma_v":[1,2]})";
  CHECK_THROWS_AS(load_profile(dir.file("bad.json")), TonelError);
}

TEST_CASE("cell slicing is an exact base-4 bijection") {
  CHECK(slice_cells(-128) == std::array<int, 4>{0, 0, 0, 0});
  CHECK(slice_cells(127) == std::array<int, 4>{3, 3, 3, 3});
  CHECK(slice_cells(-27) == std::array<int, 4>{1, 1, 2, 1});  // 101 base-4
  for (int code = -128; code <= 127; ++code) {
    const auto cells = slice_cells(static_cast<int8_t>(code));
    for (const int c : cells) {
      CHECK(c >= 0);
      CHECK(c <= 3);
    }
    CHECK(unslice_cells(cells) == code);
  }
}

TEST_CASE("uniform-state codes exist for each cell state") {
  CHECK(slice_cells(-128) == std::array<int, 4>{0, 0, 0, 0});
  CHECK(slice_cells(-43) == std::array<int, 4>{1, 1, 1, 1});   // 85 base-4
  CHECK(slice_cells(42) == std::array<int, 4>{2, 2, 2, 2});    // 170 base-4
  CHECK(slice_cells(127) == std::array<int, 4>{3, 3, 3, 3});
}

TEST_CASE("zero sigma readout is bit-exact with dequantization") {
  CimVector q;
  q.codes = {5, -17, 127, -128, 0};
  q.scale = 0.03f;
  NoiseConfig cfg;
  cfg.profile = profile_by_name("Device-2");
  cfg.sigma_scale = 0.0f;
  RngStream rng(1, RngContext::kEvalNoise, 0);
  const auto noisy = perturb_document(q, cfg, rng);
  const auto clean = dequantize(q);
  for (std::size_t j = 0; j < clean.size(); ++j) CHECK(noisy[j] == clean[j]);
}

TEST_CASE("per-cell-state noise stddev matches sigma * sigma_v") {
  // codes whose four cells all sit in one state isolate that state's sigma
  const int8_t uniform_codes[4] = {-128, -43, 42, 127};
  const double weight_norm = std::sqrt(1.0 + 16.0 + 256.0 + 4096.0);
  for (const auto& profile : builtin_profiles()) {
    for (int state = 0; state < 4; ++state) {
      CimVector q;
      q.codes = {uniform_codes[state]};
      q.scale = 1.0f;
      NoiseConfig cfg;
      cfg.profile = profile;
      cfg.sigma_scale = 1.0f;
      const double clean = dequantize(q)[0];
      const int draws = 100000;
      double sum = 0.0, sum2 = 0.0;
      RngStream rng(99, RngContext::kEvalNoise, static_cast<uint32_t>(state),
                    42);
      for (int i = 0; i < draws; ++i) {
        const double eps =
            (perturb_document(q, cfg, rng)[0] - clean) / weight_norm;
        sum += eps;
        sum2 += eps * eps;
      }
      const double mean = sum / draws;
      const double sd = std::sqrt(sum2 / draws - mean * mean);
      CHECK(sd == doctest::Approx(profile.sigma_v[state]).epsilon(0.02));
    }
  }
}

TEST_CASE("noise is zero-mean") {
  CimVector q;
  q.codes = {13, -77, 101, 0};
  q.scale = 0.5f;
  NoiseConfig cfg;
  cfg.profile = profile_by_name("Device-1");
  cfg.sigma_scale = 1.0f;
  const auto clean = dequantize(q);
  const int draws = 10000;
  std::vector<double> sums(q.codes.size(), 0.0);
  RngStream rng(5, RngContext::kEvalNoise, 3);
  for (int i = 0; i < draws; ++i) {
    const auto noisy = perturb_document(q, cfg, rng);
    for (std::size_t j = 0; j < sums.size(); ++j) sums[j] += noisy[j] - clean[j];
  }
  // per-component noise sd = scale * sigma * sqrt(sum 16^j sigma_v^2) ~ 0.33
  const double sd = 0.5 * 0.01 * std::sqrt(1.0 + 16.0 + 256.0 + 4096.0);
  for (const double s : sums)
    CHECK(std::fabs(s / draws) < 3.0 * sd / std::sqrt(double(draws)));
}

TEST_CASE("same stream settings give identical noise") {
  CimVector q;
  q.codes = {1, 2, 3};
  q.scale = 1.0f;
  NoiseConfig cfg;
  cfg.profile = profile_by_name("Device-4");
  cfg.sigma_scale = 2.0f;
  RngStream r1(17, RngContext::kTrainNoise, 5, 9);
  RngStream r2(17, RngContext::kTrainNoise, 5, 9);
  const auto a = training_noise(dequantize(q), q, cfg, r1);
  const auto b = training_noise(dequantize(q), q, cfg, r2);
  CHECK(a == b);
}

TEST_CASE("training noise averages back to the clean values") {
  CimVector q;
  q.codes = {64, -64};
  q.scale = 0.25f;
  NoiseConfig cfg;
  cfg.profile = profile_by_name("Device-2");
  cfg.sigma_scale = 1.0f;
  const auto clean = dequantize(q);
  const int draws = 10000;
  std::vector<double> sums(clean.size(), 0.0);
  for (int i = 0; i < draws; ++i) {
    RngStream rng(3, RngContext::kTrainNoise, static_cast<uint32_t>(i));
    const auto noisy = training_noise(clean, q, cfg, rng);
    for (std::size_t j = 0; j < sums.size(); ++j) sums[j] += noisy[j];
  }
  const double sd = 0.25 * std::sqrt(0.0067 * 0.0067 * (1 + 4096) +
                                     0.0135 * 0.0135 * (16 + 256));
  for (std::size_t j = 0; j < sums.size(); ++j)
    CHECK(std::fabs(sums[j] / draws - clean[j]) <
          3.0 * sd / std::sqrt(double(draws)));
}

TEST_CASE("training noise rejects shape mismatch") {
  CimVector q;
  q.codes = {1, 2};
  q.scale = 1.0f;
  NoiseConfig cfg;
  cfg.profile = profile_by_name("Device-1");
  RngStream rng(0, RngContext::kTrainNoise);
  CHECK_THROWS_AS(training_noise(std::vector<float>{1.0f}, q, cfg, rng),
                  TonelError);
}

namespace {

std::vector<CimVector> make_docs(std::size_t n, std::size_t d, uint64_t seed) {
  std::vector<CimVector> docs(n);
  RngStream rng(seed, RngContext::kSynthetic, 1000);
  for (auto& doc : docs) {
    std::vector<float> v(d);
    for (auto& x : v) x = static_cast<float>(rng.next_gaussian());
    doc = quantize(v);
  }
  return docs;
}

}  // namespace

TEST_CASE("perturb_matrix fraction selection") {
  const auto docs = make_docs(101, 8, 21);
  NoiseConfig cfg;
  cfg.profile = profile_by_name("Device-2");
  cfg.sigma_scale = 1.0f;
  cfg.seed = 77;

  SUBCASE("clean") {
    cfg.noisy_fraction = 0.0f;
    const auto result = perturb_matrix(docs, cfg);
    CHECK(result.noisy_indices.empty());
    for (std::size_t i = 0; i < docs.size(); ++i) {
      const auto clean = dequantize(docs[i]);
      for (std::size_t j = 0; j < clean.size(); ++j)
        CHECK(result.data[i * result.cols + j] == clean[j]);
    }
  }
  SUBCASE("all perturbed") {
    cfg.noisy_fraction = 1.0f;
    const auto result = perturb_matrix(docs, cfg);
    CHECK(result.noisy_indices.size() == docs.size());
  }
  SUBCASE("half of 101 rounds away to 51, reproducibly") {
    cfg.noisy_fraction = 0.5f;
    const auto a = perturb_matrix(docs, cfg);
    const auto b = perturb_matrix(docs, cfg);
    CHECK(a.noisy_indices.size() == 51);
    CHECK(a.noisy_indices == b.noisy_indices);
    CHECK(a.data == b.data);
  }
}

TEST_CASE("noisy index selection is uniform across seeds") {
  const auto docs = make_docs(40, 4, 5);
  NoiseConfig cfg;
  cfg.profile = profile_by_name("Device-1");
  cfg.sigma_scale = 1.0f;
  cfg.noisy_fraction = 0.25f;
  std::vector<int> counts(docs.size(), 0);
  const int runs = 4000;
  for (int s = 0; s < runs; ++s) {
    cfg.seed = static_cast<uint64_t>(s);
    for (const auto i : perturb_matrix(docs, cfg).noisy_indices) counts[i]++;
  }
  const double p = 0.25;
  const double se = std::sqrt(p * (1 - p) / runs);
  for (const int c : counts)
    CHECK(std::fabs(static_cast<double>(c) / runs - p) < 4.0 * se);
}

TEST_CASE("perturbation does not depend on the thread count") {
  // per-document substreams: row i only depends on (seed, i)
  const auto docs = make_docs(64, 16, 9);
  NoiseConfig cfg;
  cfg.profile = profile_by_name("Device-3");
  cfg.sigma_scale = 1.5f;
  cfg.noisy_fraction = 1.0f;
  cfg.seed = 1234;
  const auto full = perturb_matrix(docs, cfg);
  std::vector<CimVector> tail(docs.begin() + 10, docs.end());
  // same rows perturbed standalone match row-for-row when indices align
  RngStream rng(1234, RngContext::kEvalNoise, 12);
  const auto row12 = perturb_document(docs[12], cfg, rng);
  for (std::size_t j = 0; j < row12.size(); ++j)
    CHECK(row12[j] == full.data[12 * full.cols + j]);
}
