#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "coldgraph/error.hpp"
#include "coldgraph/eval.hpp"
#include "test_support.hpp"

using namespace coldgraph;
using coldgraph::testing::random_tensor;

namespace {

Tensor rows_of(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t d = rows.begin()->size();
  Tensor t(rows.size(), d);
  std::size_t r = 0;
  for (const auto& row : rows) {
    std::size_t c = 0;
    for (double v : row) t(r, c++) = v;
    ++r;
  }
  return t;
}

// Full sort of (score desc, index asc) with exclusions dropped.
std::vector<int> sort_oracle(std::span<const double> q, const Tensor& items, int k, const std::set<int>& exclude) {
  std::vector<std::pair<double, int>> scored;
  for (std::size_t i = 0; i < items.rows; ++i) {
    if (exclude.count(static_cast<int>(i))) continue;
    double s = 0.0;
    for (std::size_t c = 0; c < items.cols; ++c) s += q[c] * items(i, c);
    scored.emplace_back(-s, static_cast<int>(i));
  }
  std::sort(scored.begin(), scored.end());
  std::vector<int> out;
  for (std::size_t i = 0; i < scored.size() && static_cast<int>(i) < k; ++i) out.push_back(scored[i].second);
  return out;
}

double dcg(const std::vector<int>& ranked, const std::set<int>& rel, int k) {
  double s = 0.0;
  for (int p = 0; p < std::min<int>(k, static_cast<int>(ranked.size())); ++p)
    if (rel.count(ranked[static_cast<std::size_t>(p)])) s += 1.0 / std::log2(p + 2.0);
  return s;
}

// IDCG as the best DCG over every ordering of ranked ∪ relevant.
double ndcg_oracle(const std::vector<int>& ranked, const std::set<int>& rel, int k) {
  std::set<int> u(ranked.begin(), ranked.end());
  u.insert(rel.begin(), rel.end());
  std::vector<int> perm(u.begin(), u.end());
  double best = 0.0;
  do {
    best = std::max(best, dcg(perm, rel, k));
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best > 0.0 ? dcg(ranked, rel, k) / best : 0.0;
}

}  // namespace

TEST_CASE("recommend_topk orders by score with index tie-break") {
  const Tensor items = rows_of({{3.0}, {5.0}, {5.0}, {1.0}});
  const std::vector<double> q = {1.0};
  CHECK(recommend_topk(q, items, 2) == std::vector<int>{1, 2});
  CHECK(recommend_topk(q, items, 10) == std::vector<int>{1, 2, 0, 3});
  const std::vector<int> ex = {1, 1};
  CHECK(recommend_topk(q, items, 10, ex) == std::vector<int>{2, 0, 3});
  CHECK(recommend_topk(q, items, 0).empty());
  CHECK_THROWS_AS(recommend_topk(std::vector<double>{1.0, 2.0}, items, 2), ShapeError);
}

TEST_CASE("recommend_topk matches a full-sort oracle") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng() % 20, d = 1 + rng() % 4;
    Tensor items = random_tensor(rng, n, d);
    // Force ties on some trials.
    if (trial % 3 == 0)
      for (double& v : items.data) v = std::round(v * 2.0);
    const Tensor q = random_tensor(rng, 1, d);
    std::set<int> ex;
    std::vector<int> exv;
    for (std::size_t i = 0; i < n; ++i)
      if (rng() % 4 == 0) ex.insert(static_cast<int>(i)), exv.push_back(static_cast<int>(i));
    const int k = static_cast<int>(rng() % 25);
    const auto got = recommend_topk(q.data, items, k, exv);
    CHECK(got == sort_oracle(q.data, items, k, ex));
    CHECK(got.size() == std::min<std::size_t>(static_cast<std::size_t>(k), n - ex.size()));
  }
}

TEST_CASE("recall and ndcg examples") {
  const std::vector<int> ranked = {4, 7, 1};
  CHECK(recall_at_k(ranked, std::vector<int>{4, 7}, 3) == 1.0);
  CHECK(recall_at_k(ranked, std::vector<int>{9}, 3) == 0.0);
  CHECK(recall_at_k(ranked, std::vector<int>{7, 9}, 3) == 0.5);
  CHECK(ndcg_at_k(ranked, std::vector<int>{4, 7}, 3) == doctest::Approx(1.0));
  CHECK(ndcg_at_k(std::vector<int>{1, 5}, std::vector<int>{5}, 2) == doctest::Approx(1.0 / std::log2(3.0)));
  CHECK(ndcg_at_k(std::vector<int>{1, 5}, std::vector<int>{5}, 2) == doctest::Approx(0.6309).epsilon(1e-4));
  CHECK_THROWS_AS(recall_at_k(ranked, std::vector<int>{}, 3), Error);
  CHECK_THROWS_AS(ndcg_at_k(ranked, std::vector<int>{}, 3), Error);
}

TEST_CASE("recall and ndcg match brute-force oracles") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 7);
    std::vector<int> ranked(static_cast<std::size_t>(n));
    std::iota(ranked.begin(), ranked.end(), 0);
    std::shuffle(ranked.begin(), ranked.end(), rng);
    std::set<int> rel;
    while (rel.empty())
      for (int i = 0; i < n + 2; ++i)
        if (rng() % 3 == 0) rel.insert(i);
    const std::vector<int> relv(rel.begin(), rel.end());
    const int k = 1 + static_cast<int>(rng() % 8);
    std::size_t hits = 0;
    for (int p = 0; p < std::min(k, n); ++p) hits += rel.count(ranked[static_cast<std::size_t>(p)]);
    const double r = recall_at_k(ranked, relv, k), g = ndcg_at_k(ranked, relv, k);
    CHECK(std::abs(r - static_cast<double>(hits) / static_cast<double>(rel.size())) <= 1e-10);
    CHECK(std::abs(g - ndcg_oracle(ranked, rel, k)) <= 1e-10);
    CHECK(r >= 0.0);
    CHECK(r <= 1.0);
    CHECK(g <= 1.0 + 1e-12);
    if (r > 0.0) CHECK(g > 0.0);
  }
}

TEST_CASE("random embeddings give chance-level recall") {
  // Chance level for 20 of 100 items is 0.2; the Monte-Carlo reference below
  // ranks by uniformly random permutations instead of embeddings.
  std::mt19937_64 rng(17);
  const int n_items = 100, queries = 400, k = 20;
  const Tensor items = random_tensor(rng, n_items, 8);
  const Tensor users = random_tensor(rng, queries, 8);
  std::vector<int> nodes(queries);
  std::iota(nodes.begin(), nodes.end(), 0);
  std::vector<std::vector<int>> relevant(queries), exclude(queries);
  double mc = 0.0;
  for (int q = 0; q < queries; ++q) {
    std::vector<int> perm(n_items);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    relevant[static_cast<std::size_t>(q)].assign(perm.begin(), perm.begin() + 5);
    std::shuffle(perm.begin(), perm.end(), rng);
    mc += recall_at_k(perm, relevant[static_cast<std::size_t>(q)], k);
  }
  mc /= queries;
  const Metrics m = evaluate_queries(Kind::kGroup, users, items, nodes, relevant, exclude, k);
  // Binomial-ish 4 sigma band: per-query recall has sd ~0.18, so the mean's sd is ~0.009.
  CHECK(std::abs(m.recall - mc) < 0.05);
  CHECK(std::abs(m.recall - 0.2) < 0.05);
}

TEST_CASE("evaluate_queries per-query rows are consistent with the mean") {
  std::mt19937_64 rng(23);
  const Tensor items = random_tensor(rng, 30, 4), qs = random_tensor(rng, 6, 4);
  std::vector<int> nodes = {5, 0, 3};
  std::vector<std::vector<int>> rel = {{1, 2}, {7}, {0, 29, 13}}, ex = {{3}, {}, {1, 2}};
  const Metrics m = evaluate_queries(Kind::kGroup, qs, items, nodes, rel, ex, 10);
  REQUIRE(m.queries.size() == 3);
  double r = 0.0, g = 0.0;
  for (const QueryMetrics& q : m.queries) r += q.recall, g += q.ndcg;
  CHECK(m.recall == doctest::Approx(r / 3.0));
  CHECK(m.ndcg == doctest::Approx(g / 3.0));
  CHECK(m.queries[0].node == 5);
  CHECK(m.queries[2].relevant == 3);
}

TEST_CASE("scores that put test items first give perfect metrics") {
  // Item 0..4; the query prefers items 3 and 4, item 4 is a training positive.
  const Tensor items = rows_of({{0.0}, {0.1}, {0.2}, {0.9}, {1.0}});
  const Tensor q = rows_of({{1.0}});
  const Metrics m = evaluate_queries(Kind::kGroup, q, items, {0}, {{3}}, {{4}}, 1);
  CHECK(m.recall == 1.0);
  CHECK(m.ndcg == doctest::Approx(1.0));
}

TEST_CASE("metrics are invariant to positive scaling of item embeddings") {
  std::mt19937_64 rng(29);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor items = random_tensor(rng, 40, 5), qs = random_tensor(rng, 4, 5);
    Tensor scaled = items;
    const double c = std::uniform_real_distribution<double>(0.01, 100.0)(rng);
    for (double& v : scaled.data) v *= c;
    std::vector<std::vector<int>> rel = {{1, 2, 3}, {4}, {5, 6}, {7, 8, 9, 10}}, ex = {{}, {1}, {}, {2}};
    const Metrics a = evaluate_queries(Kind::kGroup, qs, items, {0, 1, 2, 3}, rel, ex, 10);
    const Metrics b = evaluate_queries(Kind::kGroup, qs, scaled, {0, 1, 2, 3}, rel, ex, 10);
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(recommend_topk(qs.row_span(i), items, 10, ex[i]) == recommend_topk(qs.row_span(i), scaled, 10, ex[i]));
    }
    CHECK(a.recall == b.recall);
    CHECK(a.ndcg == b.ndcg);
  }
}

TEST_CASE("evaluate_tables needs test edges") {
  std::array<Tensor, 3> emb = {Tensor(2, 2), Tensor(3, 2), Tensor(2, 2)};
  EvalSplit split;
  CHECK_THROWS_AS(evaluate_tables(emb, split, 20, false, "x"), Error);
  split.test_gi = {Edge{1, 2, 0, false}};
  split.train_gi = {Edge{1, 0, 0, false}};
  const EvalReport r = evaluate_tables(emb, split, 20, false, "x");
  CHECK(r.groups.queries.size() == 1);
  CHECK(r.groups.queries[0].node == 1);
  CHECK_FALSE(r.users.has_value());
}

TEST_CASE("metrics csv is stable") {
  EvalReport r;
  r.variant = "joint";
  r.groups.kind = Kind::kGroup;
  r.groups.k = 20;
  r.groups.recall = 0.25;
  r.groups.ndcg = 1.0 / 3.0;
  r.groups.queries.resize(4);
  const std::vector<EvalReport> reps = {r};
  CHECK(metrics_csv(reps) == "variant,kind,k,queries,recall,ndcg\njoint,group,20,4,0.250000,0.333333\n");
  CHECK(metrics_table(reps).find("joint") != std::string::npos);
}

TEST_CASE("convergence epoch") {
  // Epochs 3..5 (1-based) each improve by about 0.05%.
  const std::vector<double> a = {2.0, 1.0, 0.9995, 0.999, 0.9985};
  CHECK(convergence_epoch(a) == 3);
  CHECK_FALSE(convergence_epoch(std::vector<double>{3.0, 2.0, 1.0, 0.5}).has_value());
  CHECK_FALSE(convergence_epoch(std::vector<double>{}).has_value());
  // A rising loss counts as "improved by less than 0.1%".
  CHECK(convergence_epoch(std::vector<double>{1.0, 1.1, 1.2, 1.3}) == 2);
  // Interrupted runs restart.
  CHECK(convergence_epoch(std::vector<double>{1.0, 1.0, 1.0, 0.5, 0.5, 0.5, 0.5}) == 5);
}

TEST_CASE("complexity report") {
  TrainHistory base, ssl;
  base.variant = "base";
  ssl.variant = "joint";
  base.graph_edges = ssl.graph_edges = 1000;
  for (int e = 1; e <= 4; ++e) {
    EpochRecord b;
    b.epoch = e;
    b.seconds = 1.0;
    b.total = 1.0 / e;
    base.epochs.push_back(b);
    EpochRecord s = b;
    s.seconds = 2.5;
    s.ssl_edges_max = 90 + static_cast<std::size_t>(e);
    s.ssl_edges_sum = 100;
    s.ssl_batches = 2;
    ssl.epochs.push_back(s);
  }
  const std::vector<TrainHistory> hs = {base, ssl};
  const auto rows = complexity_report(hs);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].time_ratio == doctest::Approx(1.0));
  CHECK(rows[1].time_ratio == doctest::Approx(2.5));
  CHECK(rows[1].batch_edges == doctest::Approx(50.0));
  CHECK(rows[1].batch_edges_max == 94);
  CHECK(rows[0].batch_edges == 0.0);
  CHECK(complexity_table(rows).find("joint") != std::string::npos);
  CHECK(complexity_csv(rows).rfind("variant,graph_edges", 0) == 0);

  const auto comps = complexity_components(rows[0], rows[1], 3, 16, 10, 100);
  REQUIRE(comps.size() == 4);
  CHECK(comps[0].base == 2000.0);
  CHECK(comps[0].ssl == doctest::Approx(10 * 50.0 * 10 + 2000.0));
  CHECK(comps[2].base == comps[2].ssl);
  CHECK(comps[3].base == 0.0);
  CHECK(comps[3].ssl == doctest::Approx(20 * 50.0 * 3 * 16 * 10));
  CHECK(complexity_components_table(comps).find("reconstruction") != std::string::npos);
}
