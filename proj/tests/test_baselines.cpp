#include <cmath>
#include <vector>

#include "doctest.h"
#include "testutil.hpp"
#include "tonel/baselines.hpp"
#include "tonel/error.hpp"
#include "tonel/rng.hpp"

using namespace tonel;

namespace {

double col_dot(const PcaModel& m, std::size_t a, std::size_t b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < m.d_in; ++i)
    acc += static_cast<double>(m.components[i * m.d_out + a]) *
           m.components[i * m.d_out + b];
  return acc;
}

}  // namespace

TEST_CASE("jacobi eigendecomposition on a known 2x2") {
  // [[2,1],[1,2]] has eigenvalues 3 and 1 with vectors (1,1)/sqrt2, (1,-1)/sqrt2
  std::vector<double> a = {2, 1, 1, 2};
  std::vector<double> vals, vecs;
  jacobi_eigh_desc(a, 2, vals, vecs);
  CHECK(vals[0] == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(vals[1] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::fabs(vecs[0 * 2 + 0]) == doctest::Approx(std::sqrt(0.5)));
  CHECK(std::fabs(vecs[1 * 2 + 0]) == doctest::Approx(std::sqrt(0.5)));
}

TEST_CASE("jacobi reconstructs random symmetric matrices") {
  RngStream rng(3, RngContext::kSynthetic, 70);
  const std::size_t n = 12;
  std::vector<double> a(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) {
      const double v = rng.next_gaussian();
      a[i * n + j] = v;
      a[j * n + i] = v;
    }
  const std::vector<double> orig = a;
  std::vector<double> vals, vecs;
  jacobi_eigh_desc(a, n, vals, vecs);
  // A = V diag(vals) V^T
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < n; ++k)
        acc += vecs[i * n + k] * vals[k] * vecs[j * n + k];
      CHECK(acc == doctest::Approx(orig[i * n + j]).epsilon(1e-9).scale(1.0));
    }
  }
  for (std::size_t k = 0; k + 1 < n; ++k) CHECK(vals[k] >= vals[k + 1]);
}

TEST_CASE("line data y=x gives the diagonal direction") {
  EmbeddingSet set;
  set.count = 50;
  set.dim = 2;
  RngStream rng(5, RngContext::kSynthetic, 71);
  for (std::size_t i = 0; i < set.count; ++i) {
    const float t = static_cast<float>(rng.next_gaussian() * 2.0);
    set.data.push_back(t);
    set.data.push_back(t);
    set.ids.push_back("p" + std::to_string(i));
  }
  const PcaModel m = pca_fit(set, 2);
  const float inv_sqrt2 = 1.0f / std::sqrt(2.0f);
  CHECK(m.components[0 * 2 + 0] == doctest::Approx(inv_sqrt2).epsilon(1e-4));
  CHECK(m.components[1 * 2 + 0] == doctest::Approx(inv_sqrt2).epsilon(1e-4));
  CHECK(m.explained_variance[1] == doctest::Approx(0.0).epsilon(1e-8));
  CHECK(m.rank == 1);
}

TEST_CASE("isotropic gaussian explains sigma^2 per direction") {
  EmbeddingSet set;
  set.count = 4000;
  set.dim = 3;
  const double sigma = 0.7;
  RngStream rng(9, RngContext::kSynthetic, 72);
  for (std::size_t i = 0; i < set.count; ++i) {
    for (int j = 0; j < 3; ++j)
      set.data.push_back(static_cast<float>(rng.next_gaussian() * sigma));
    set.ids.push_back("g" + std::to_string(i));
  }
  const PcaModel m = pca_fit(set, 3);
  for (int j = 0; j < 3; ++j)
    CHECK(m.explained_variance[j] ==
          doctest::Approx(sigma * sigma).epsilon(0.1));
}

TEST_CASE("repeated single point gives all-degenerate components") {
  EmbeddingSet set;
  set.count = 8;
  set.dim = 4;
  for (std::size_t i = 0; i < set.count; ++i) {
    for (int j = 0; j < 4; ++j) set.data.push_back(2.5f);
    set.ids.push_back("same" + std::to_string(i));
  }
  const PcaModel m = pca_fit(set, 4);
  CHECK(m.rank == 0);
  for (const float v : m.explained_variance)
    CHECK(v == doctest::Approx(0.0).epsilon(1e-12));
  // padded components are still orthonormal
  for (std::size_t a = 0; a < 4; ++a)
    CHECK(col_dot(m, a, a) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("components are orthonormal and variances sorted") {
  const auto blobs = testutil::make_blobs(400, 20, 6, 2.0f, 0.5f, 31);
  const PcaModel m = pca_fit(blobs.set, 8);
  for (std::size_t a = 0; a < m.d_out; ++a) {
    for (std::size_t b = a; b < m.d_out; ++b) {
      const double expect = a == b ? 1.0 : 0.0;
      CHECK(col_dot(m, a, b) == doctest::Approx(expect).epsilon(1e-5).scale(1.0));
    }
  }
  for (std::size_t j = 0; j + 1 < m.d_out; ++j)
    CHECK(m.explained_variance[j] >= m.explained_variance[j + 1]);
}

TEST_CASE("projection basics and matrix-arithmetic oracle") {
  const auto blobs = testutil::make_blobs(200, 10, 4, 2.0f, 0.6f, 37);
  const PcaModel m = pca_fit(blobs.set, 5);

  SUBCASE("mean maps to zero") {
    const auto z = pca_project(m, m.mean);
    for (const float v : z) CHECK(v == doctest::Approx(0.0).epsilon(1e-5));
  }
  SUBCASE("mean + first component maps to e_1") {
    std::vector<float> x(m.d_in);
    for (std::size_t i = 0; i < m.d_in; ++i)
      x[i] = m.mean[i] + m.components[i * m.d_out + 0];
    const auto z = pca_project(m, x);
    CHECK(z[0] == doctest::Approx(1.0).epsilon(1e-5));
    for (std::size_t j = 1; j < m.d_out; ++j)
      CHECK(z[j] == doctest::Approx(0.0).epsilon(1e-4).scale(1.0));
  }
  SUBCASE("random vectors match explicit arithmetic") {
    RngStream rng(41, RngContext::kSynthetic, 73);
    for (int t = 0; t < 20; ++t) {
      std::vector<float> x(m.d_in);
      for (auto& v : x) v = static_cast<float>(rng.next_gaussian());
      const auto z = pca_project(m, x);
      for (std::size_t j = 0; j < m.d_out; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < m.d_in; ++i)
          acc += (static_cast<double>(x[i]) - m.mean[i]) *
                 m.components[i * m.d_out + j];
        CHECK(z[j] == doctest::Approx(acc).epsilon(1e-5).scale(1.0));
      }
    }
  }
  SUBCASE("wrong length throws") {
    CHECK_THROWS_AS(pca_project(m, std::vector<float>{1.0f}), TonelError);
  }
}

TEST_CASE("projected variance equals the retained eigenvalues") {
  const auto blobs = testutil::make_blobs(500, 16, 5, 1.5f, 0.4f, 43);
  const PcaModel m = pca_fit(blobs.set, 6);
  const std::size_t n = blobs.set.count;
  std::vector<double> mean(m.d_out, 0.0), var(m.d_out, 0.0);
  std::vector<std::vector<float>> zs(n);
  for (std::size_t i = 0; i < n; ++i) {
    zs[i] = pca_project(m, blobs.set.row(i));
    for (std::size_t j = 0; j < m.d_out; ++j) mean[j] += zs[i][j];
  }
  for (auto& v : mean) v /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m.d_out; ++j) {
      const double d = zs[i][j] - mean[j];
      var[j] += d * d;
    }
  double total_var = 0.0, total_ev = 0.0;
  for (std::size_t j = 0; j < m.d_out; ++j) {
    total_var += var[j] / static_cast<double>(n - 1);
    total_ev += m.explained_variance[j];
  }
  CHECK(total_var == doctest::Approx(total_ev).epsilon(1e-4));
}

TEST_CASE("preconditions") {
  const auto blobs = testutil::make_blobs(10, 4, 2, 1.0f, 0.5f, 47);
  CHECK_THROWS_AS(pca_fit(blobs.set, 5), TonelError);   // d_out > d_in
  CHECK_THROWS_AS(pca_fit(blobs.set, 0), TonelError);
  EmbeddingSet tiny;
  tiny.count = 1;
  tiny.dim = 4;
  tiny.data = {1, 2, 3, 4};
  tiny.ids = {"only"};
  CHECK_THROWS_AS(pca_fit(tiny, 1), TonelError);        // N < 2
}

TEST_CASE("pca model round trip (TPCA)") {
  testutil::TempDir dir("tpca");
  const auto blobs = testutil::make_blobs(100, 8, 3, 2.0f, 0.3f, 53);
  const PcaModel m = pca_fit(blobs.set, 4);
  const std::string path = dir.file("m.tpca");
  save_pca(m, path);
  const PcaModel back = load_pca(path);
  CHECK(back.d_in == m.d_in);
  CHECK(back.d_out == m.d_out);
  CHECK(back.rank == m.rank);
  CHECK(back.mean == m.mean);
  CHECK(back.components == m.components);
  CHECK(back.explained_variance == m.explained_variance);
}

TEST_CASE("fit is deterministic") {
  const auto blobs = testutil::make_blobs(300, 12, 4, 2.0f, 0.5f, 59);
  const PcaModel a = pca_fit(blobs.set, 6);
  const PcaModel b = pca_fit(blobs.set, 6);
  CHECK(a.components == b.components);
  CHECK(a.explained_variance == b.explained_variance);
}
