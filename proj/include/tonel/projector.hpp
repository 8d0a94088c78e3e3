#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "tonel/embedding_store.hpp"
#include "tonel/quantizer.hpp"

namespace tonel {

// Dimensionality-reduction front end of the retrieval pipeline. TONEL, PCA
// and the identity (quantize-only) path all run through this interface so
// they share the quantize / perturb / evaluate code byte for byte.
struct Projector {
  virtual ~Projector() = default;
  virtual std::size_t input_dim() const = 0;
  virtual std::size_t output_dim() const = 0;
  virtual std::vector<float> operator()(std::span<const float> x) const = 0;
};

struct IdentityProjector final : Projector {
  explicit IdentityProjector(std::size_t dim) : dim_(dim) {}
  std::size_t input_dim() const override { return dim_; }
  std::size_t output_dim() const override { return dim_; }
  std::vector<float> operator()(std::span<const float> x) const override {
    return {x.begin(), x.end()};
  }

 private:
  std::size_t dim_;
};

// Projects then quantizes every row; output order matches input ids.
std::vector<CimVector> quantize_corpus(const Projector& projector,
                                       const EmbeddingSet& set,
                                       const QuantConfig& cfg = {});

}  // namespace tonel
