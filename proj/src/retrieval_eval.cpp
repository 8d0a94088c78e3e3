#include "tonel/retrieval_eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tonel/error.hpp"
#include "tonel/parallel.hpp"

namespace tonel {
namespace {

double dot(std::span<const float> a, std::span<const float> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return acc;
}

void check_query_sets(std::span<const TopK> results, const OracleRanking& oracle) {
  if (results.size() != oracle.order.size())
    fail(ErrorCode::kQueryMismatch,
         "metric: " + std::to_string(results.size()) + " result lists vs " +
             std::to_string(oracle.order.size()) + " oracle rankings");
  if (results.empty())
    fail(ErrorCode::kQueryMismatch, "metric: empty query set");
}

void check_top5(std::span<const TopK> results, const OracleRanking& oracle) {
  if (oracle.num_docs < 5)
    fail(ErrorCode::kKTooSmall, "metric@5 needs at least 5 documents");
  for (const auto& r : results)
    if (r.indices.size() < 5)
      fail(ErrorCode::kKTooSmall, "metric@5 needs k >= 5 in every result");
}

}  // namespace

TopK mips_topk(const MatrixView& docs, std::span<const float> query,
               std::size_t k) {
  if (query.size() != docs.cols)
    fail(ErrorCode::kShapeMismatch,
         "mips_topk: query dim " + std::to_string(query.size()) +
             " != doc dim " + std::to_string(docs.cols));
  if (k > docs.rows)
    fail(ErrorCode::kKTooLarge, "mips_topk: k=" + std::to_string(k) + " > N=" +
                                    std::to_string(docs.rows));

  std::vector<double> scores(docs.rows);
  for (std::size_t i = 0; i < docs.rows; ++i) scores[i] = dot(docs.row(i), query);

  std::vector<std::size_t> idx(docs.rows);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (scores[a] != scores[b]) return scores[a] > scores[b];
                      return a < b;
                    });

  TopK out;
  out.indices.assign(idx.begin(), idx.begin() + k);
  out.scores.resize(k);
  for (std::size_t i = 0; i < k; ++i) out.scores[i] = scores[out.indices[i]];
  return out;
}

OracleRanking oracle_rankings(const EmbeddingSet& docs, const QuerySet& queries) {
  if (docs.dim != queries.dim)
    fail(ErrorCode::kShapeMismatch,
         "oracle: doc dim " + std::to_string(docs.dim) + " != query dim " +
             std::to_string(queries.dim));
  OracleRanking oracle;
  oracle.num_docs = docs.count;
  oracle.order.resize(queries.count);
  oracle.rank_of.resize(queries.count);
  parallel_for(queries.count, [&](std::size_t q0, std::size_t q1) {
    std::vector<double> scores(docs.count);
    for (std::size_t q = q0; q < q1; ++q) {
      const auto query = queries.row(q);
      for (std::size_t i = 0; i < docs.count; ++i)
        scores[i] = dot(docs.row(i), query);
      auto& order = oracle.order[q];
      order.resize(docs.count);
      std::iota(order.begin(), order.end(), uint32_t{0});
      std::sort(order.begin(), order.end(), [&](uint32_t a, uint32_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
      });
      auto& rank = oracle.rank_of[q];
      rank.resize(docs.count);
      for (std::size_t pos = 0; pos < order.size(); ++pos)
        rank[order[pos]] = static_cast<uint32_t>(pos);
    }
  });
  return oracle;
}

double acc_at_1(std::span<const TopK> results, const OracleRanking& oracle) {
  check_query_sets(results, oracle);
  std::size_t hits = 0;
  for (std::size_t q = 0; q < results.size(); ++q) {
    if (results[q].indices.empty())
      fail(ErrorCode::kKTooSmall, "acc_at_1 needs k >= 1 in every result");
    hits += results[q].indices[0] == oracle.order[q][0];
  }
  return static_cast<double>(hits) / static_cast<double>(results.size());
}

double prec_at_5(std::span<const TopK> results, const OracleRanking& oracle) {
  check_query_sets(results, oracle);
  check_top5(results, oracle);
  double total = 0.0;
  for (std::size_t q = 0; q < results.size(); ++q) {
    const auto& rank = oracle.rank_of[q];
    int hits = 0;
    for (std::size_t i = 0; i < 5; ++i)
      hits += rank[results[q].indices[i]] < 5;
    total += static_cast<double>(hits) / 5.0;
  }
  return total / static_cast<double>(results.size());
}

double ndcg_at_5(std::span<const TopK> results, const OracleRanking& oracle) {
  check_query_sets(results, oracle);
  check_top5(results, oracle);
  // the oracle's own top-5 always carries gains [5,4,3,2,1]
  double idcg = 0.0;
  for (int i = 0; i < 5; ++i)
    idcg += (std::pow(2.0, 5 - i) - 1.0) / std::log2(static_cast<double>(i + 2));
  double total = 0.0;
  for (std::size_t q = 0; q < results.size(); ++q) {
    const auto& rank = oracle.rank_of[q];
    double dcg = 0.0;
    for (std::size_t i = 0; i < 5; ++i) {
      const uint32_t r1 = rank[results[q].indices[i]] + 1;  // 1-based
      const int gain = r1 <= 5 ? static_cast<int>(6 - r1) : 0;
      dcg += (std::pow(2.0, gain) - 1.0) / std::log2(static_cast<double>(i + 2));
    }
    total += dcg / idcg;
  }
  return total / static_cast<double>(results.size());
}

std::vector<EvalReport> run_experiment(const Projector* projector,
                                       const EmbeddingSet& docs,
                                       const QuerySet& queries,
                                       const EvalConfig& cfg) {
  if (docs.count == 0 || queries.count == 0)
    fail(ErrorCode::kEmptyVector, "run_experiment needs documents and queries");
  if (cfg.devices.empty() || cfg.noisy_fractions.empty() || cfg.sigma_scales.empty())
    fail(ErrorCode::kBadConfig, "run_experiment: empty evaluation grid");
  const std::size_t k = std::max<std::size_t>(cfg.k, 5);
  if (k > docs.count)
    fail(ErrorCode::kKTooLarge, "run_experiment: k exceeds document count");

  const OracleRanking oracle = oracle_rankings(docs, queries);

  std::vector<EvalReport> reports;

  auto score_matrix = [&](const MatrixView& mat, const std::vector<std::vector<float>>& qs) {
    std::vector<TopK> results(qs.size());
    parallel_for(qs.size(), [&](std::size_t q0, std::size_t q1) {
      for (std::size_t q = q0; q < q1; ++q) results[q] = mips_topk(mat, qs[q], k);
    });
    return results;
  };

  auto push_report = [&](const DeviceProfile& dev, float sigma, float fraction,
                         std::size_t noisy, std::span<const TopK> results) {
    EvalReport r;
    r.method = cfg.method_name;
    r.device = dev.name;
    r.sigma_scale = sigma;
    r.noisy_fraction = fraction;
    r.seed = cfg.seed;
    r.k = k;
    r.num_docs = docs.count;
    r.num_queries = queries.count;
    r.noisy_count = noisy;
    r.acc1 = acc_at_1(results, oracle);
    r.prec5 = prec_at_5(results, oracle);
    r.ndcg5 = ndcg_at_5(results, oracle);
    reports.push_back(std::move(r));
  };

  if (projector == nullptr) {
    // oracle self-check: clean full-precision MIPS against itself
    MatrixView mat{docs.data.data(), docs.count, docs.dim};
    std::vector<std::vector<float>> qs(queries.count);
    for (std::size_t q = 0; q < queries.count; ++q) {
      const auto row = queries.row(q);
      qs[q].assign(row.begin(), row.end());
    }
    const auto results = score_matrix(mat, qs);
    for (const auto& dev : cfg.devices)
      for (const float sigma : cfg.sigma_scales)
        for (const float fraction : cfg.noisy_fractions)
          push_report(dev, sigma, fraction, 0, results);
    return reports;
  }

  const std::vector<CimVector> doc_codes =
      quantize_corpus(*projector, docs, cfg.quant);
  const std::vector<CimVector> query_codes =
      quantize_corpus(*projector, queries, cfg.quant);
  std::vector<std::vector<float>> qs(queries.count);
  for (std::size_t q = 0; q < queries.count; ++q)
    qs[q] = dequantize(query_codes[q]);

  for (const auto& dev : cfg.devices) {
    for (const float sigma : cfg.sigma_scales) {
      for (const float fraction : cfg.noisy_fractions) {
        NoiseConfig noise;
        noise.profile = dev;
        noise.sigma_scale = sigma;
        noise.noisy_fraction = fraction;
        noise.seed = cfg.seed;
        const PerturbedMatrix stored = perturb_matrix(doc_codes, noise);
        MatrixView mat{stored.data.data(), stored.rows, stored.cols};
        const auto results = score_matrix(mat, qs);
        push_report(dev, sigma, fraction, stored.noisy_indices.size(), results);
      }
    }
  }
  return reports;
}

std::string assemble_prompt(const std::string& query_text,
                            std::span<const std::string> retrieved_texts) {
  std::string prompt;
  for (const auto& text : retrieved_texts) {
    prompt += text;
    prompt += "\n\n";
  }
  prompt += query_text;
  return prompt;
}

}  // namespace tonel
