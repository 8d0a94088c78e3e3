#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tonel/cim_noise.hpp"
#include "tonel/embedding_store.hpp"
#include "tonel/projector.hpp"

namespace tonel {

struct MatrixView {
  const float* data = nullptr;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::span<const float> row(std::size_t i) const {
    return {data + i * cols, cols};
  }
};

// Top-k documents for one query; scores non-increasing, inner-product ties
// broken by document index ascending.
struct TopK {
  std::vector<std::size_t> indices;
  std::vector<double> scores;
};

// Exact inner products (double accumulation, fixed order), deterministic
// selection.
TopK mips_topk(const MatrixView& docs, std::span<const float> query,
               std::size_t k);

// Full ranking of every document per query on clean full-precision data, the
// reference every retrieval metric compares against.
struct OracleRanking {
  std::size_t num_docs = 0;
  std::vector<std::vector<uint32_t>> order;    // per query, best-first
  std::vector<std::vector<uint32_t>> rank_of;  // per query, doc -> 0-based rank
};

OracleRanking oracle_rankings(const EmbeddingSet& docs, const QuerySet& queries);

// Fraction of queries whose top-1 matches the oracle top-1.
double acc_at_1(std::span<const TopK> results, const OracleRanking& oracle);

// |system top-5 ∩ oracle top-5| / 5, set semantics, mean over queries.
double prec_at_5(std::span<const TopK> results, const OracleRanking& oracle);

// Graded-gain nDCG against the oracle order: a document at oracle rank
// r <= 5 (1-based) carries gain 6-r, others 0; DCG sums (2^gain - 1)/log2(i+1)
// over positions i = 1..5 and is normalized by the oracle's own top-5 DCG.
double ndcg_at_5(std::span<const TopK> results, const OracleRanking& oracle);

struct EvalReport {
  std::string method;
  std::string device;
  double sigma_scale = 0.0;
  double noisy_fraction = 0.0;
  uint64_t seed = 0;
  std::size_t k = 5;
  std::size_t num_docs = 0;
  std::size_t num_queries = 0;
  std::size_t noisy_count = 0;
  double acc1 = 0.0;
  double prec5 = 0.0;
  double ndcg5 = 0.0;
};

struct EvalConfig {
  std::string method_name;
  std::vector<DeviceProfile> devices;
  std::vector<float> noisy_fractions;
  std::vector<float> sigma_scales;
  uint64_t seed = 0;
  std::size_t k = 5;
  QuantConfig quant;
};

// One report per (device, fraction, sigma) grid point. Documents are
// projected + quantized once, perturbed per grid point; queries are projected
// + quantized but never noised. projector == nullptr runs the oracle's own
// full-precision clean embeddings through MIPS (self-check).
std::vector<EvalReport> run_experiment(const Projector* projector,
                                       const EmbeddingSet& docs,
                                       const QuerySet& queries,
                                       const EvalConfig& cfg);

// Document texts in rank order, then the query, separated by blank lines.
std::string assemble_prompt(const std::string& query_text,
                            std::span<const std::string> retrieved_texts);

}  // namespace tonel
