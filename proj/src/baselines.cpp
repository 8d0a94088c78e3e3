#include "tonel/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "tonel/error.hpp"
#include "tonel/parallel.hpp"

namespace tonel {

void jacobi_eigh_desc(std::vector<double>& a, std::size_t n,
                      std::vector<double>& eigvals, std::vector<double>& eigvecs) {
  eigvecs.assign(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) eigvecs[i * n + i] = 1.0;

  auto off_norm = [&]() {
    double acc = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) acc += a[p * n + q] * a[p * n + q];
    return std::sqrt(acc);
  };
  double diag_scale = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    diag_scale = std::max(diag_scale, std::fabs(a[i * n + i]));
  const double stop = 1e-14 * std::max(1.0, diag_scale) * static_cast<double>(n);

  constexpr int kMaxSweeps = 64;
  for (int sweep = 0; sweep < kMaxSweeps && off_norm() > stop; ++sweep) {
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a[p * n + q];
        if (apq == 0.0) continue;
        const double app = a[p * n + p];
        const double aqq = a[q * n + q];
        const double tau = (aqq - app) / (2.0 * apq);
        const double t =
            (tau >= 0.0 ? 1.0 : -1.0) / (std::fabs(tau) + std::sqrt(1.0 + tau * tau));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = t * c;
        for (std::size_t i = 0; i < n; ++i) {  // column rotation
          const double aip = a[i * n + p];
          const double aiq = a[i * n + q];
          a[i * n + p] = c * aip - s * aiq;
          a[i * n + q] = s * aip + c * aiq;
        }
        for (std::size_t i = 0; i < n; ++i) {  // row rotation
          const double api = a[p * n + i];
          const double aqi = a[q * n + i];
          a[p * n + i] = c * api - s * aqi;
          a[q * n + i] = s * api + c * aqi;
        }
        for (std::size_t i = 0; i < n; ++i) {  // accumulate eigenvectors
          const double vip = eigvecs[i * n + p];
          const double viq = eigvecs[i * n + q];
          eigvecs[i * n + p] = c * vip - s * viq;
          eigvecs[i * n + q] = s * vip + c * viq;
        }
      }
    }
  }

  // sort eigenpairs by eigenvalue descending, index ascending on ties
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    const double lx = a[x * n + x], ly = a[y * n + y];
    if (lx != ly) return lx > ly;
    return x < y;
  });
  eigvals.resize(n);
  std::vector<double> sorted_vecs(n * n);
  for (std::size_t j = 0; j < n; ++j) {
    eigvals[j] = a[order[j] * n + order[j]];
    for (std::size_t i = 0; i < n; ++i)
      sorted_vecs[i * n + j] = eigvecs[i * n + order[j]];
  }
  eigvecs = std::move(sorted_vecs);
}

PcaModel pca_fit(const EmbeddingSet& set, std::size_t d_out) {
  const std::size_t n = set.count;
  const std::size_t d = set.dim;
  if (n < 2) fail(ErrorCode::kBadConfig, "pca_fit needs at least 2 samples");
  if (d_out < 1 || d_out > std::min(n, d))
    fail(ErrorCode::kBadConfig,
         "pca_fit: d_out=" + std::to_string(d_out) + " not in [1, min(N, d)=" +
             std::to_string(std::min(n, d)) + "]");

  std::vector<double> mean(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const float* row = set.data.data() + i * d;
    for (std::size_t j = 0; j < d; ++j) mean[j] += row[j];
  }
  for (auto& m : mean) m /= static_cast<double>(n);

  std::vector<double> centered(n * d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j)
      centered[i * d + j] = static_cast<double>(set.data[i * d + j]) - mean[j];

  // sample covariance, divisor N-1
  std::vector<double> cov(d * d, 0.0);
  const double inv = 1.0 / static_cast<double>(n - 1);
  parallel_for(d, [&](std::size_t j0, std::size_t j1) {
    for (std::size_t i = j0; i < j1; ++i) {
      double* row = cov.data() + i * d;
      for (std::size_t s = 0; s < n; ++s) {
        const double di = centered[s * d + i];
        const double* cs = centered.data() + s * d;
        for (std::size_t j = i; j < d; ++j) row[j] += di * cs[j];
      }
      for (std::size_t j = i; j < d; ++j) row[j] *= inv;
    }
  });
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < i; ++j) cov[i * d + j] = cov[j * d + i];

  std::vector<double> eigvals, eigvecs;
  jacobi_eigh_desc(cov, d, eigvals, eigvecs);

  PcaModel model;
  model.d_in = d;
  model.d_out = d_out;
  model.mean.resize(d);
  for (std::size_t j = 0; j < d; ++j) model.mean[j] = static_cast<float>(mean[j]);
  model.components.resize(d * d_out);
  model.explained_variance.resize(d_out);

  const double lmax = std::max(eigvals.empty() ? 0.0 : eigvals[0], 0.0);
  const double rank_tol = std::max(1e-9 * lmax, 1e-12);
  model.rank = 0;
  for (std::size_t j = 0; j < d_out; ++j) {
    const double lambda = std::max(eigvals[j], 0.0);
    model.explained_variance[j] = static_cast<float>(lambda);
    if (lambda > rank_tol) model.rank = j + 1;

    // fix sign: largest-magnitude entry positive (first such index on ties)
    std::size_t arg = 0;
    double best = std::fabs(eigvecs[0 * d + j]);
    for (std::size_t i = 1; i < d; ++i) {
      const double mag = std::fabs(eigvecs[i * d + j]);
      if (mag > best) {
        best = mag;
        arg = i;
      }
    }
    const double sign = eigvecs[arg * d + j] < 0.0 ? -1.0 : 1.0;
    for (std::size_t i = 0; i < d; ++i)
      model.components[i * d_out + j] = static_cast<float>(sign * eigvecs[i * d + j]);
  }
  return model;
}

std::vector<float> pca_project(const PcaModel& m, std::span<const float> x) {
  if (x.size() != m.d_in)
    fail(ErrorCode::kShapeMismatch,
         "pca_project: input length " + std::to_string(x.size()) +
             " != d_in " + std::to_string(m.d_in));
  std::vector<float> out(m.d_out);
  std::vector<double> acc(m.d_out, 0.0);
  for (std::size_t i = 0; i < m.d_in; ++i) {
    const double di = static_cast<double>(x[i]) - static_cast<double>(m.mean[i]);
    const float* ci = m.components.data() + i * m.d_out;
    for (std::size_t j = 0; j < m.d_out; ++j) acc[j] += di * ci[j];
  }
  for (std::size_t j = 0; j < m.d_out; ++j) out[j] = static_cast<float>(acc[j]);
  return out;
}

namespace {

constexpr uint32_t kPcaVersion = 1;

}  // namespace

void save_pca(const PcaModel& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIoFailure, "pca: cannot create " + path);
  auto u32 = [&](uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v),
                          static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
  };
  out.write("TPCA", 4);
  u32(kPcaVersion);
  u32(static_cast<uint32_t>(m.d_in));
  u32(static_cast<uint32_t>(m.d_out));
  u32(static_cast<uint32_t>(m.rank));
  out.write(reinterpret_cast<const char*>(m.mean.data()),
            static_cast<std::streamsize>(m.mean.size() * 4));
  out.write(reinterpret_cast<const char*>(m.components.data()),
            static_cast<std::streamsize>(m.components.size() * 4));
  out.write(reinterpret_cast<const char*>(m.explained_variance.data()),
            static_cast<std::streamsize>(m.explained_variance.size() * 4));
  out.flush();
  if (!out) fail(ErrorCode::kIoFailure, "pca: write failed for " + path);
}

PcaModel load_pca(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIoFailure, "pca: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "TPCA", 4) != 0)
    fail(ErrorCode::kBadMagic, path + ": bad PCA magic");
  auto u32 = [&]() {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) fail(ErrorCode::kTruncatedPayload, path + ": truncated header");
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) |
           (static_cast<uint32_t>(b[3]) << 24);
  };
  if (u32() != kPcaVersion)
    fail(ErrorCode::kUnsupportedVersion, path + ": unsupported version");
  PcaModel m;
  m.d_in = u32();
  m.d_out = u32();
  m.rank = u32();
  if (m.d_in < 1 || m.d_out < 1 || m.rank > m.d_out)
    fail(ErrorCode::kBadConfig, path + ": invalid PCA header");
  m.mean.resize(m.d_in);
  m.components.resize(m.d_in * m.d_out);
  m.explained_variance.resize(m.d_out);
  auto read_f32 = [&](std::vector<float>& v, const char* field) {
    in.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(v.size() * 4));
    if (!in)
      fail(ErrorCode::kTruncatedPayload,
           path + ": truncated " + std::string(field));
    for (const float x : v)
      if (!std::isfinite(x))
        fail(ErrorCode::kNonFiniteValue,
             path + ": non-finite " + std::string(field));
  };
  read_f32(m.mean, "mean");
  read_f32(m.components, "components");
  read_f32(m.explained_variance, "variances");
  return m;
}

}  // namespace tonel
