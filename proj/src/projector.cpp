#include "tonel/projector.hpp"

#include <string>

#include "tonel/error.hpp"
#include "tonel/parallel.hpp"

namespace tonel {

std::vector<CimVector> quantize_corpus(const Projector& projector,
                                       const EmbeddingSet& set,
                                       const QuantConfig& cfg) {
  if (set.dim != projector.input_dim())
    fail(ErrorCode::kShapeMismatch,
         "quantize_corpus: set dim " + std::to_string(set.dim) +
             " != projector input dim " + std::to_string(projector.input_dim()));
  std::vector<CimVector> out(set.count);
  parallel_for(set.count, [&](std::size_t i0, std::size_t i1) {
    for (std::size_t i = i0; i < i1; ++i) {
      const auto z = projector(set.row(i));
      out[i] = quantize(z, cfg);
    }
  });
  return out;
}

}  // namespace tonel
