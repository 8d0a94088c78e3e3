#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tonel/embedding_store.hpp"

namespace tonel {

struct ClusterModel {
  int k = 0;
  std::size_t dim = 0;
  std::vector<float> centroids;  // k x dim row-major
  std::vector<int> assignments;  // nearest-centroid map of the final centroids
  double inertia = 0.0;          // sum of squared distances
  bool degenerate = false;       // an empty/duplicate-centroid repair fired
};

// Seeded k-means++ init followed by Lloyd iterations until the relative
// centroid shift drops below tol, assignments stop changing, or max_iters.
// Inertia is checked non-increasing every iteration; empty clusters are
// reseeded at the point farthest from its assigned centroid. With
// normalize=true rows are l2-normalized before clustering (cosine mode).
ClusterModel kmeans_fit(const EmbeddingSet& set, int k, uint64_t seed,
                        int max_iters = 300, double tol = 1e-6,
                        bool normalize = false);

// Nearest centroid by squared Euclidean distance; ties break to the lowest
// centroid index.
int assign(const ClusterModel& m, std::span<const float> x);

// Returns a copy of the manifest with pseudo_label set from the assignments;
// true labels are untouched. Existing pseudo labels are overwritten (logged
// to stderr).
Manifest write_pseudo_labels(const ClusterModel& m, const Manifest& manifest);

// Inertia per candidate K, for elbow-style reporting. Never auto-applied.
std::vector<std::pair<int, double>> kmeans_sweep(const EmbeddingSet& set,
                                                 std::span<const int> ks,
                                                 uint64_t seed);

// "TKMN" binary: K, dim, centroids float32 LE.
void save_cluster_model(const ClusterModel& m, const std::string& path);
ClusterModel load_cluster_model(const std::string& path);

}  // namespace tonel
