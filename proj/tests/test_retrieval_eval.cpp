#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "testutil.hpp"
#include "tonel/baselines.hpp"
#include "tonel/error.hpp"
#include "tonel/retrieval_eval.hpp"
#include "tonel/rng.hpp"

using namespace tonel;

namespace {

// Brute-force reference: full argsort of explicitly computed dot products.
std::vector<std::size_t> brute_force_order(const MatrixView& docs,
                                           std::span<const float> query) {
  std::vector<double> scores(docs.rows);
  for (std::size_t i = 0; i < docs.rows; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < docs.cols; ++j)
      acc += static_cast<double>(docs.data[i * docs.cols + j]) * query[j];
    scores[i] = acc;
  }
  std::vector<std::size_t> order(docs.rows);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });
  return order;
}

// Independently written nDCG@5 (different structure from the library):
// per query, walk the system list, look the document's oracle rank up in a
// map, and normalize by an explicitly sorted ideal gain vector.
double independent_ndcg5(const std::vector<std::vector<std::size_t>>& systems,
                         const std::vector<std::vector<uint32_t>>& oracle_orders) {
  double total = 0.0;
  for (std::size_t q = 0; q < systems.size(); ++q) {
    std::vector<int> gains;
    for (std::size_t pos = 0; pos < 5; ++pos) {
      const std::size_t doc = systems[q][pos];
      int gain = 0;
      for (int r = 0; r < 5; ++r) {
        if (oracle_orders[q][r] == doc) {
          gain = 5 - r;  // oracle rank r+1 carries gain 6-(r+1)
          break;
        }
      }
      gains.push_back(gain);
    }
    auto dcg_of = [](const std::vector<int>& g) {
      double dcg = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i)
        dcg += (std::exp2(static_cast<double>(g[i])) - 1.0) /
               (std::log(static_cast<double>(i + 2)) / std::log(2.0));
      return dcg;
    };
    std::vector<int> ideal{5, 4, 3, 2, 1};
    total += dcg_of(gains) / dcg_of(ideal);
  }
  return total / static_cast<double>(systems.size());
}

EmbeddingSet basis_docs(std::size_t n) {
  EmbeddingSet docs;
  docs.count = n;
  docs.dim = n;
  docs.data.assign(n * n, 0.0f);
  for (std::size_t i = 0; i < n; ++i) {
    docs.data[i * n + i] = 1.0f;
    docs.ids.push_back("e" + std::to_string(i));
  }
  return docs;
}

EmbeddingSet random_docs(std::size_t n, std::size_t d, uint64_t seed) {
  EmbeddingSet docs;
  docs.count = n;
  docs.dim = d;
  docs.data.resize(n * d);
  docs.ids.resize(n);
  RngStream rng(seed, RngContext::kSynthetic, 80);
  for (auto& x : docs.data) x = static_cast<float>(rng.next_gaussian());
  for (std::size_t i = 0; i < n; ++i) docs.ids[i] = "d" + std::to_string(i);
  return docs;
}

}  // namespace

TEST_CASE("mips_topk basics") {
  const EmbeddingSet docs = basis_docs(4);
  const MatrixView mat{docs.data.data(), docs.count, docs.dim};

  SUBCASE("orthonormal rows pick the matching basis vector") {
    const TopK top = mips_topk(mat, std::vector<float>{0, 0, 1, 0}, 1);
    CHECK(top.indices == std::vector<std::size_t>{2});
    CHECK(top.scores[0] == doctest::Approx(1.0));
  }
  SUBCASE("identical docs break ties by index") {
    EmbeddingSet same;
    same.count = 5;
    same.dim = 2;
    for (std::size_t i = 0; i < 5; ++i) {
      same.data.push_back(1.0f);
      same.data.push_back(2.0f);
      same.ids.push_back("s" + std::to_string(i));
    }
    const MatrixView m2{same.data.data(), same.count, same.dim};
    const TopK top = mips_topk(m2, std::vector<float>{1.0f, 1.0f}, 3);
    CHECK(top.indices == std::vector<std::size_t>{0, 1, 2});
  }
  SUBCASE("k > N and wrong dims are rejected") {
    CHECK_THROWS_AS(mips_topk(mat, std::vector<float>{0, 0, 1, 0}, 5), TonelError);
    CHECK_THROWS_AS(mips_topk(mat, std::vector<float>{1, 0}, 1), TonelError);
  }
  SUBCASE("scores are non-increasing") {
    const EmbeddingSet rd = random_docs(60, 8, 5);
    const MatrixView m3{rd.data.data(), rd.count, rd.dim};
    RngStream rng(6, RngContext::kSynthetic, 81);
    std::vector<float> q(8);
    for (auto& v : q) v = static_cast<float>(rng.next_gaussian());
    const TopK top = mips_topk(m3, q, 10);
    for (std::size_t i = 0; i + 1 < top.scores.size(); ++i)
      CHECK(top.scores[i] >= top.scores[i + 1]);
  }
}

TEST_CASE("mips_topk agrees with the brute-force scan, ties included") {
  RngStream rng(7, RngContext::kSynthetic, 82);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.next_below(999);
    const std::size_t d = 1 + rng.next_below(64);
    EmbeddingSet docs = random_docs(n, d, 1000 + trial);
    // force tie groups by duplicating some rows
    if (n > 4) {
      for (int dup = 0; dup < 3; ++dup) {
        const std::size_t src = rng.next_below(static_cast<uint32_t>(n));
        const std::size_t dst = rng.next_below(static_cast<uint32_t>(n));
        std::copy(docs.data.begin() + src * d, docs.data.begin() + (src + 1) * d,
                  docs.data.begin() + dst * d);
      }
    }
    std::vector<float> q(d);
    for (auto& v : q) v = static_cast<float>(rng.next_gaussian());
    const MatrixView mat{docs.data.data(), docs.count, docs.dim};
    const std::size_t k = 1 + rng.next_below(static_cast<uint32_t>(n));
    const TopK top = mips_topk(mat, q, k);
    const auto ref = brute_force_order(mat, q);
    for (std::size_t i = 0; i < k; ++i) CHECK(top.indices[i] == ref[i]);
  }
}

TEST_CASE("oracle rankings") {
  SUBCASE("single doc ranks first for every query") {
    const EmbeddingSet docs = random_docs(1, 4, 1);
    const EmbeddingSet queries = random_docs(6, 4, 2);
    const OracleRanking oracle = oracle_rankings(docs, queries);
    for (const auto& order : oracle.order) CHECK(order[0] == 0);
  }
  SUBCASE("a query equal to a controlled-norm doc ranks it first") {
    EmbeddingSet docs = random_docs(20, 6, 3);
    // make doc 7 dominate: large norm aligned with itself
    for (std::size_t j = 0; j < 6; ++j) docs.data[7 * 6 + j] *= 50.0f;
    EmbeddingSet queries;
    queries.count = 1;
    queries.dim = 6;
    queries.data.assign(docs.data.begin() + 7 * 6, docs.data.begin() + 8 * 6);
    queries.ids = {"q0"};
    const OracleRanking oracle = oracle_rankings(docs, queries);
    CHECK(oracle.order[0][0] == 7);
    CHECK(oracle.rank_of[0][7] == 0);
  }
  SUBCASE("rank_of inverts order") {
    const EmbeddingSet docs = random_docs(30, 5, 4);
    const EmbeddingSet queries = random_docs(3, 5, 5);
    const OracleRanking oracle = oracle_rankings(docs, queries);
    for (std::size_t q = 0; q < 3; ++q)
      for (std::size_t pos = 0; pos < 30; ++pos)
        CHECK(oracle.rank_of[q][oracle.order[q][pos]] == pos);
  }
  SUBCASE("dim mismatch throws") {
    const EmbeddingSet docs = random_docs(5, 4, 6);
    const EmbeddingSet queries = random_docs(2, 3, 7);
    CHECK_THROWS_AS(oracle_rankings(docs, queries), TonelError);
  }
}

namespace {

// system = oracle's own top-k (metrics must be exactly 1)
std::vector<TopK> oracle_as_system(const OracleRanking& oracle, std::size_t k) {
  std::vector<TopK> out(oracle.order.size());
  for (std::size_t q = 0; q < out.size(); ++q) {
    for (std::size_t i = 0; i < k; ++i) {
      out[q].indices.push_back(oracle.order[q][i]);
      out[q].scores.push_back(static_cast<double>(k - i));
    }
  }
  return out;
}

}  // namespace

TEST_CASE("metrics against the oracle") {
  const EmbeddingSet docs = random_docs(40, 8, 8);
  const EmbeddingSet queries = random_docs(12, 8, 9);
  const OracleRanking oracle = oracle_rankings(docs, queries);
  const auto system = oracle_as_system(oracle, 5);

  SUBCASE("oracle vs itself is exactly 1") {
    CHECK(acc_at_1(system, oracle) == 1.0);
    CHECK(prec_at_5(system, oracle) == 1.0);
    CHECK(ndcg_at_5(system, oracle) == 1.0);
  }
  SUBCASE("reversed full ranking scores 0 on acc") {
    std::vector<TopK> reversed(queries.count);
    for (std::size_t q = 0; q < queries.count; ++q) {
      for (std::size_t i = 0; i < 5; ++i) {
        reversed[q].indices.push_back(oracle.order[q][docs.count - 1 - i]);
        reversed[q].scores.push_back(static_cast<double>(5 - i));
      }
    }
    CHECK(acc_at_1(reversed, oracle) == 0.0);
    CHECK(prec_at_5(reversed, oracle) == 0.0);   // disjoint sets
    CHECK(ndcg_at_5(reversed, oracle) == 0.0);
  }
  SUBCASE("top-5 set permutation keeps prec at 1") {
    auto shuffled = system;
    for (auto& r : shuffled) {
      std::swap(r.indices[0], r.indices[4]);
      std::swap(r.indices[1], r.indices[3]);
    }
    CHECK(prec_at_5(shuffled, oracle) == 1.0);
    CHECK(acc_at_1(shuffled, oracle) < 1.0);
  }
  SUBCASE("3-of-5 overlap gives 0.6") {
    auto partial = system;
    // replace positions 3,4 with docs outside the oracle top-5
    for (std::size_t q = 0; q < partial.size(); ++q) {
      partial[q].indices[3] = oracle.order[q][10];
      partial[q].indices[4] = oracle.order[q][11];
    }
    CHECK(prec_at_5(partial, oracle) == doctest::Approx(0.6));
  }
  SUBCASE("query count mismatch throws") {
    auto fewer = system;
    fewer.pop_back();
    CHECK_THROWS_AS(acc_at_1(fewer, oracle), TonelError);
  }
  SUBCASE("k < 5 throws for the @5 metrics") {
    auto shallow = oracle_as_system(oracle, 3);
    CHECK_THROWS_AS(prec_at_5(shallow, oracle), TonelError);
    CHECK_THROWS_AS(ndcg_at_5(shallow, oracle), TonelError);
  }
}

TEST_CASE("nDCG hand case: reversed oracle top-5") {
  const EmbeddingSet docs = random_docs(25, 6, 10);
  const EmbeddingSet queries = random_docs(8, 6, 11);
  const OracleRanking oracle = oracle_rankings(docs, queries);
  std::vector<TopK> reversed(queries.count);
  std::vector<std::vector<std::size_t>> plain(queries.count);
  for (std::size_t q = 0; q < queries.count; ++q) {
    for (int i = 4; i >= 0; --i) {
      reversed[q].indices.push_back(oracle.order[q][i]);
      reversed[q].scores.push_back(static_cast<double>(i));
    }
    plain[q] = {reversed[q].indices.begin(), reversed[q].indices.end()};
  }
  const double got = ndcg_at_5(reversed, oracle);
  // hand evaluation of the stated formula: gains [1,2,3,4,5] down the list
  double dcg = 0.0, idcg = 0.0;
  for (int i = 0; i < 5; ++i) {
    dcg += (std::pow(2.0, i + 1) - 1.0) / std::log2(i + 2.0);
    idcg += (std::pow(2.0, 5 - i) - 1.0) / std::log2(i + 2.0);
  }
  const double hand = dcg / idcg;
  CHECK(hand == doctest::Approx(0.5443434449).epsilon(1e-9));
  CHECK(got == doctest::Approx(hand).epsilon(1e-12));
  // cross-check with the independently written implementation
  CHECK(independent_ndcg5(plain, oracle.order) ==
        doctest::Approx(got).epsilon(1e-12));
}

TEST_CASE("nDCG agrees with the independent implementation on random systems") {
  const EmbeddingSet docs = random_docs(50, 8, 12);
  const EmbeddingSet queries = random_docs(10, 8, 13);
  const OracleRanking oracle = oracle_rankings(docs, queries);
  RngStream rng(14, RngContext::kSynthetic, 83);
  std::vector<TopK> system(queries.count);
  std::vector<std::vector<std::size_t>> plain(queries.count);
  for (std::size_t q = 0; q < queries.count; ++q) {
    std::vector<std::size_t> pool(docs.count);
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    for (int i = 0; i < 5; ++i) {
      const std::size_t j =
          i + rng.next_below(static_cast<uint32_t>(pool.size() - i));
      std::swap(pool[i], pool[j]);
      system[q].indices.push_back(pool[i]);
      system[q].scores.push_back(5.0 - i);
    }
    plain[q] = {system[q].indices.begin(), system[q].indices.end()};
  }
  CHECK(ndcg_at_5(system, oracle) ==
        doctest::Approx(independent_ndcg5(plain, oracle.order)).epsilon(1e-12));
}

TEST_CASE("metrics are invariant to query order permutation") {
  const EmbeddingSet docs = random_docs(30, 6, 15);
  EmbeddingSet queries = random_docs(9, 6, 16);
  const OracleRanking oracle = oracle_rankings(docs, queries);
  auto system = oracle_as_system(oracle, 5);
  // corrupt a few entries so the metric is not trivially 1
  system[2].indices[0] = oracle.order[2][20];
  system[5].indices[0] = oracle.order[5][25];
  const double acc = acc_at_1(system, oracle);

  // permute queries and rebuild both sides in the permuted order
  std::vector<std::size_t> perm(queries.count);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::reverse(perm.begin(), perm.end());
  EmbeddingSet q2;
  q2.count = queries.count;
  q2.dim = queries.dim;
  q2.data.resize(queries.data.size());
  q2.ids.resize(queries.count);
  std::vector<TopK> sys2(queries.count);
  for (std::size_t q = 0; q < queries.count; ++q) {
    std::copy(queries.row(perm[q]).begin(), queries.row(perm[q]).end(),
              q2.data.begin() + q * q2.dim);
    q2.ids[q] = queries.ids[perm[q]];
    sys2[q] = system[perm[q]];
  }
  const OracleRanking oracle2 = oracle_rankings(docs, q2);
  CHECK(acc_at_1(sys2, oracle2) == doctest::Approx(acc));
}

TEST_CASE("random ranker Acc@1 converges to 1/N") {
  const std::size_t n = 200;
  const EmbeddingSet docs = random_docs(n, 4, 17);
  const EmbeddingSet queries = random_docs(2000, 4, 18);
  const OracleRanking oracle = oracle_rankings(docs, queries);
  RngStream rng(19, RngContext::kRandomRanker);
  std::vector<TopK> random_system(queries.count);
  for (auto& r : random_system) {
    for (int i = 0; i < 5; ++i) {
      r.indices.push_back(rng.next_below(n));
      r.scores.push_back(5.0 - i);
    }
  }
  const double acc = acc_at_1(random_system, oracle);
  const double p = 1.0 / static_cast<double>(n);
  const double se = std::sqrt(p * (1 - p) / static_cast<double>(queries.count));
  CHECK(std::fabs(acc - p) <= 3.0 * se);
}

TEST_CASE("run_experiment") {
  const auto blobs = testutil::make_blobs(80, 12, 4, 2.0f, 0.3f, 21);
  const auto qblobs = testutil::make_blobs(20, 12, 4, 2.0f, 0.3f, 21, 1);

  EvalConfig cfg;
  cfg.method_name = "oracle";
  cfg.devices = {profile_by_name("Device-2")};
  cfg.noisy_fractions = {0.0f};
  cfg.sigma_scales = {1.0f};
  cfg.seed = 7;
  cfg.k = 5;

  SUBCASE("oracle as the method scores exactly 1") {
    const auto reports = run_experiment(nullptr, blobs.set, qblobs.set, cfg);
    REQUIRE(reports.size() == 1);
    CHECK(reports[0].acc1 == 1.0);
    CHECK(reports[0].prec5 == 1.0);
    CHECK(reports[0].ndcg5 == 1.0);
  }
  SUBCASE("device grid emits one report per point") {
    cfg.method_name = "identity";
    cfg.devices = {profile_by_name("Device-1"), profile_by_name("Device-2"),
                   profile_by_name("Device-3"), profile_by_name("Device-4")};
    cfg.noisy_fractions = {0.0f, 0.5f, 1.0f};
    IdentityProjector identity(blobs.set.dim);
    const auto reports = run_experiment(&identity, blobs.set, qblobs.set, cfg);
    CHECK(reports.size() == 12);
    // metrics live in [0, 1]
    for (const auto& r : reports) {
      CHECK(r.acc1 >= 0.0);
      CHECK(r.acc1 <= 1.0);
      CHECK(r.prec5 >= 0.0);
      CHECK(r.prec5 <= 1.0);
      CHECK(r.ndcg5 >= 0.0);
      CHECK(r.ndcg5 <= 1.0);
    }
  }
  SUBCASE("reruns are identical") {
    cfg.method_name = "identity";
    cfg.noisy_fractions = {1.0f};
    IdentityProjector identity(blobs.set.dim);
    const auto a = run_experiment(&identity, blobs.set, qblobs.set, cfg);
    const auto b = run_experiment(&identity, blobs.set, qblobs.set, cfg);
    REQUIRE(a.size() == b.size());
    CHECK(a[0].acc1 == b[0].acc1);
    CHECK(a[0].prec5 == b[0].prec5);
    CHECK(a[0].ndcg5 == b[0].ndcg5);
    CHECK(a[0].noisy_count == b[0].noisy_count);
  }
}

TEST_CASE("PCA with identity components reuses the identity pipeline exactly") {
  const auto blobs = testutil::make_blobs(60, 10, 3, 2.0f, 0.4f, 23);
  const auto qblobs = testutil::make_blobs(15, 10, 3, 2.0f, 0.4f, 23, 1);

  PcaModel identity_pca;
  identity_pca.d_in = 10;
  identity_pca.d_out = 10;
  identity_pca.mean.assign(10, 0.0f);
  identity_pca.components.assign(100, 0.0f);
  for (int i = 0; i < 10; ++i) identity_pca.components[i * 10 + i] = 1.0f;
  identity_pca.explained_variance.assign(10, 1.0f);
  identity_pca.rank = 10;

  EvalConfig cfg;
  cfg.method_name = "shared-path";
  cfg.devices = {profile_by_name("Device-3")};
  cfg.noisy_fractions = {0.5f};
  cfg.sigma_scales = {2.0f};
  cfg.seed = 99;

  PcaProjector pca_projector(identity_pca);
  IdentityProjector identity(10);
  const auto via_pca = run_experiment(&pca_projector, blobs.set, qblobs.set, cfg);
  const auto via_identity =
      run_experiment(&identity, blobs.set, qblobs.set, cfg);
  CHECK(via_pca[0].acc1 == via_identity[0].acc1);
  CHECK(via_pca[0].prec5 == via_identity[0].prec5);
  CHECK(via_pca[0].ndcg5 == via_identity[0].ndcg5);
}

TEST_CASE("assemble_prompt") {
  CHECK(assemble_prompt("q", std::vector<std::string>{"a", "b"}) ==
        "a\n\nb\n\nq");
  CHECK(assemble_prompt("q", std::vector<std::string>{}) == "q");
  const std::vector<std::string> five{"1", "2", "3", "4", "5"};
  const std::string p = assemble_prompt("query", five);
  // six segments in rank order
  CHECK(p == "1\n\n2\n\n3\n\n4\n\n5\n\nquery");
}
