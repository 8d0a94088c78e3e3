#include "tonel/pgm_cluster.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <limits>

#include "tonel/error.hpp"
#include "tonel/parallel.hpp"
#include "tonel/rng.hpp"

namespace tonel {
namespace {

double sq_dist(const float* a, const float* b, std::size_t d) {
  double acc = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double diff = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += diff * diff;
  }
  return acc;
}

// nearest centroid, ties to the lowest index
int nearest(const float* x, const float* centroids, int k, std::size_t d,
            double* best_out) {
  int best = 0;
  double best_d = sq_dist(x, centroids, d);
  for (int c = 1; c < k; ++c) {
    const double dist = sq_dist(x, centroids + static_cast<std::size_t>(c) * d, d);
    if (dist < best_d) {
      best_d = dist;
      best = c;
    }
  }
  if (best_out) *best_out = best_d;
  return best;
}

}  // namespace

ClusterModel kmeans_fit(const EmbeddingSet& set, int k, uint64_t seed,
                        int max_iters, double tol, bool normalize) {
  const std::size_t n = set.count;
  const std::size_t d = set.dim;
  if (k < 1 || static_cast<std::size_t>(k) > n)
    fail(ErrorCode::kKTooLarge, "k=" + std::to_string(k) + " not in [1, " +
                                    std::to_string(n) + "]");

  std::vector<float> points;
  const float* data = set.data.data();
  if (normalize) {
    points = set.data;
    for (std::size_t i = 0; i < n; ++i) {
      float* row = points.data() + i * d;
      double norm = 0.0;
      for (std::size_t j = 0; j < d; ++j) norm += double(row[j]) * row[j];
      norm = std::sqrt(norm);
      if (norm > 0.0)
        for (std::size_t j = 0; j < d; ++j)
          row[j] = static_cast<float>(row[j] / norm);
    }
    data = points.data();
  }

  ClusterModel model;
  model.k = k;
  model.dim = d;
  model.centroids.resize(static_cast<std::size_t>(k) * d);
  float* centroids = model.centroids.data();

  // k-means++ seeding; d2 tracks each point's distance to the nearest chosen
  // centroid so far
  RngStream rng(seed, RngContext::kKmeans);
  {
    const std::size_t first = rng.next_below(static_cast<uint32_t>(n));
    std::memcpy(centroids, data + first * d, d * sizeof(float));
    std::vector<double> d2(n);
    for (std::size_t i = 0; i < n; ++i) d2[i] = sq_dist(data + i * d, centroids, d);
    for (int c = 1; c < k; ++c) {
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i) total += d2[i];
      std::size_t chosen;
      if (total > 0.0) {
        const double u = rng.next_double() * total;
        double acc = 0.0;
        chosen = n - 1;
        for (std::size_t i = 0; i < n; ++i) {
          acc += d2[i];
          if (u < acc) {
            chosen = i;
            break;
          }
        }
      } else {
        // all remaining mass at distance zero: duplicate data
        chosen = rng.next_below(static_cast<uint32_t>(n));
        model.degenerate = true;
      }
      float* ctr = centroids + static_cast<std::size_t>(c) * d;
      std::memcpy(ctr, data + chosen * d, d * sizeof(float));
      if (c + 1 < k)
        for (std::size_t i = 0; i < n; ++i)
          d2[i] = std::min(d2[i], sq_dist(data + i * d, ctr, d));
    }
  }

  model.assignments.assign(n, 0);
  std::vector<double> d2min(n, 0.0);

  auto assign_pass = [&]() -> double {
    parallel_for(n, [&](std::size_t i0, std::size_t i1) {
      for (std::size_t i = i0; i < i1; ++i)
        model.assignments[i] = nearest(data + i * d, centroids, k, d, &d2min[i]);
    });
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) inertia += d2min[i];
    return inertia;
  };

  double inertia = assign_pass();
  std::vector<int> prev_assign;
  std::vector<double> sums(static_cast<std::size_t>(k) * d);
  std::vector<std::size_t> counts(k);

  for (int iter = 0; iter < max_iters; ++iter) {
    prev_assign = model.assignments;

    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), std::size_t{0});
    for (std::size_t i = 0; i < n; ++i) {
      const int c = model.assignments[i];
      double* s = sums.data() + static_cast<std::size_t>(c) * d;
      const float* x = data + i * d;
      for (std::size_t j = 0; j < d; ++j) s[j] += x[j];
      ++counts[c];
    }

    double max_shift = 0.0;
    for (int c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      float* ctr = centroids + static_cast<std::size_t>(c) * d;
      const double* s = sums.data() + static_cast<std::size_t>(c) * d;
      double shift = 0.0, norm = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const float updated = static_cast<float>(s[j] / static_cast<double>(counts[c]));
        const double diff = static_cast<double>(updated) - static_cast<double>(ctr[j]);
        shift += diff * diff;
        norm += static_cast<double>(updated) * updated;
        ctr[j] = updated;
      }
      max_shift = std::max(max_shift, std::sqrt(shift) / (std::sqrt(norm) + 1e-30));
    }

    // reseed empty clusters at the point farthest from its centroid
    for (int c = 0; c < k; ++c) {
      if (counts[c] != 0) continue;
      std::size_t far = 0;
      for (std::size_t i = 1; i < n; ++i)
        if (d2min[i] > d2min[far]) far = i;
      std::memcpy(centroids + static_cast<std::size_t>(c) * d, data + far * d,
                  d * sizeof(float));
      d2min[far] = 0.0;  // keep the next empty cluster from picking it again
      model.degenerate = true;
      max_shift = std::numeric_limits<double>::infinity();
    }

    const double new_inertia = assign_pass();
    if (new_inertia > inertia * (1.0 + 1e-9) + 1e-12)
      throw std::logic_error("k-means inertia increased: " +
                             std::to_string(inertia) + " -> " +
                             std::to_string(new_inertia));
    inertia = new_inertia;
    if (model.assignments == prev_assign || max_shift < tol) break;
  }

  model.inertia = inertia;
  return model;
}

int assign(const ClusterModel& m, std::span<const float> x) {
  if (x.size() != m.dim)
    fail(ErrorCode::kShapeMismatch,
         "assign: vector has length " + std::to_string(x.size()) +
             ", centroids have dim " + std::to_string(m.dim));
  return nearest(x.data(), m.centroids.data(), m.k, m.dim, nullptr);
}

Manifest write_pseudo_labels(const ClusterModel& m, const Manifest& manifest) {
  if (manifest.entries.size() != m.assignments.size())
    fail(ErrorCode::kLengthMismatch,
         "manifest has " + std::to_string(manifest.entries.size()) +
             " entries, clustering has " + std::to_string(m.assignments.size()));
  Manifest out = manifest;
  std::size_t overwritten = 0;
  for (std::size_t i = 0; i < out.entries.size(); ++i) {
    if (out.entries[i].pseudo_label) ++overwritten;
    out.entries[i].pseudo_label = m.assignments[i];
  }
  if (overwritten > 0)
    std::cerr << "[tonel] overwrote " << overwritten
              << " existing pseudo labels\n";
  return out;
}

std::vector<std::pair<int, double>> kmeans_sweep(const EmbeddingSet& set,
                                                 std::span<const int> ks,
                                                 uint64_t seed) {
  std::vector<std::pair<int, double>> out;
  out.reserve(ks.size());
  for (const int k : ks)
    out.emplace_back(k, kmeans_fit(set, k, seed).inertia);
  return out;
}

namespace {

constexpr uint32_t kClusterVersion = 1;

}  // namespace

void save_cluster_model(const ClusterModel& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIoFailure, "cluster model: cannot create " + path);
  auto u32 = [&](uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v),
                          static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
  };
  out.write("TKMN", 4);
  u32(kClusterVersion);
  u32(static_cast<uint32_t>(m.k));
  u32(static_cast<uint32_t>(m.dim));
  out.write(reinterpret_cast<const char*>(m.centroids.data()),
            static_cast<std::streamsize>(m.centroids.size() * 4));
  out.flush();
  if (!out) fail(ErrorCode::kIoFailure, "cluster model: write failed for " + path);
}

ClusterModel load_cluster_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIoFailure, "cluster model: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "TKMN", 4) != 0)
    fail(ErrorCode::kBadMagic, path + ": bad cluster model magic");
  auto u32 = [&]() {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) fail(ErrorCode::kTruncatedPayload, path + ": truncated header");
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) |
           (static_cast<uint32_t>(b[3]) << 24);
  };
  if (u32() != kClusterVersion)
    fail(ErrorCode::kUnsupportedVersion, path + ": unsupported version");
  ClusterModel m;
  m.k = static_cast<int>(u32());
  m.dim = u32();
  if (m.k < 1 || m.dim < 1)
    fail(ErrorCode::kBadConfig, path + ": invalid cluster model header");
  m.centroids.resize(static_cast<std::size_t>(m.k) * m.dim);
  in.read(reinterpret_cast<char*>(m.centroids.data()),
          static_cast<std::streamsize>(m.centroids.size() * 4));
  if (!in) fail(ErrorCode::kTruncatedPayload, path + ": truncated centroid data");
  for (const float c : m.centroids)
    if (!std::isfinite(c))
      fail(ErrorCode::kNonFiniteValue, path + ": non-finite centroid");
  return m;
}

}  // namespace tonel
