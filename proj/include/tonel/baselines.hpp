#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "tonel/embedding_store.hpp"
#include "tonel/projector.hpp"

namespace tonel {

struct PcaModel {
  std::size_t d_in = 0;
  std::size_t d_out = 0;
  std::vector<float> mean;                // d_in
  std::vector<float> components;          // d_in x d_out, column j = component j
  std::vector<float> explained_variance;  // d_out, non-increasing
  std::size_t rank = 0;  // leading components with nonzero variance; the rest
                         // are zero-variance padding from rank-deficient data
};

// Deterministic cyclic Jacobi eigendecomposition of a symmetric matrix
// (row-major n x n, destroyed). Eigenvalues come back sorted descending,
// eigvecs column j holds the eigenvector of eigvals[j].
void jacobi_eigh_desc(std::vector<double>& a, std::size_t n,
                      std::vector<double>& eigvals, std::vector<double>& eigvecs);

// Centers the documents, eigendecomposes the sample covariance (divisor N-1)
// and keeps the top d_out directions. Component signs are fixed by making each
// column's largest-magnitude entry positive.
PcaModel pca_fit(const EmbeddingSet& set, std::size_t d_out);

// components^T (x - mean)
std::vector<float> pca_project(const PcaModel& m, std::span<const float> x);

// "TPCA" binary: header + mean, components, variances in float32 LE.
void save_pca(const PcaModel& m, const std::string& path);
PcaModel load_pca(const std::string& path);

struct PcaProjector final : Projector {
  explicit PcaProjector(const PcaModel& m) : model(&m) {}
  std::size_t input_dim() const override { return model->d_in; }
  std::size_t output_dim() const override { return model->d_out; }
  std::vector<float> operator()(std::span<const float> x) const override {
    return pca_project(*model, x);
  }
  const PcaModel* model;
};

}  // namespace tonel
