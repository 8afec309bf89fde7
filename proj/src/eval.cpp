#include "coldgraph/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <fmt/format.h>

#include "coldgraph/error.hpp"
#include "coldgraph/kernels.hpp"

namespace coldgraph {

std::vector<int> recommend_topk(std::span<const double> query, const Tensor& items, int k,
                                std::span<const int> exclude) {
  if (query.size() != items.cols) throw ShapeError("recommend_topk: query/item dimension mismatch");
  if (k < 0) throw Error("recommend_topk: k must be >= 0");
  std::vector<int> ex(exclude.begin(), exclude.end());
  std::sort(ex.begin(), ex.end());
  ex.erase(std::unique(ex.begin(), ex.end()), ex.end());
  const auto out = kernels::parallel::batch_topk(query, items.data, items.cols, {ex}, static_cast<std::size_t>(k));
  return out.front();
}

double recall_at_k(std::span<const int> ranked, std::span<const int> relevant, int k) {
  if (relevant.empty()) throw Error("recall_at_k: empty relevant set");
  std::vector<int> rel(relevant.begin(), relevant.end());
  std::sort(rel.begin(), rel.end());
  rel.erase(std::unique(rel.begin(), rel.end()), rel.end());
  const std::size_t n = std::min(ranked.size(), static_cast<std::size_t>(std::max(k, 0)));
  std::size_t hits = 0;
  for (std::size_t p = 0; p < n; ++p) hits += std::binary_search(rel.begin(), rel.end(), ranked[p]) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(rel.size());
}

double ndcg_at_k(std::span<const int> ranked, std::span<const int> relevant, int k) {
  if (relevant.empty()) throw Error("ndcg_at_k: empty relevant set");
  std::vector<int> rel(relevant.begin(), relevant.end());
  std::sort(rel.begin(), rel.end());
  rel.erase(std::unique(rel.begin(), rel.end()), rel.end());
  const std::size_t kk = static_cast<std::size_t>(std::max(k, 0));
  const std::size_t n = std::min(ranked.size(), kk);
  double dcg = 0.0, idcg = 0.0;
  for (std::size_t p = 0; p < n; ++p)
    if (std::binary_search(rel.begin(), rel.end(), ranked[p])) dcg += 1.0 / std::log2(static_cast<double>(p) + 2.0);
  for (std::size_t p = 0; p < std::min(rel.size(), kk); ++p) idcg += 1.0 / std::log2(static_cast<double>(p) + 2.0);
  return idcg > 0.0 ? dcg / idcg : 0.0;
}

Metrics evaluate_queries(Kind kind, const Tensor& query_table, const Tensor& item_table, const std::vector<int>& nodes,
                         const std::vector<std::vector<int>>& relevant, const std::vector<std::vector<int>>& exclude,
                         int k) {
  if (relevant.size() != nodes.size() || exclude.size() != nodes.size()) {
    throw ShapeError("evaluate_queries: nodes/relevant/exclude size mismatch");
  }
  if (query_table.cols != item_table.cols) throw ShapeError("evaluate_queries: dimension mismatch");
  Metrics m;
  m.kind = kind;
  m.k = k;
  const std::size_t d = query_table.cols;
  Tensor q(nodes.size(), d);
  std::vector<std::vector<int>> ex(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const auto row = query_table.row_span(static_cast<std::size_t>(nodes[i]));
    std::copy(row.begin(), row.end(), q.row_span(i).begin());
    ex[i] = exclude[i];
    std::sort(ex[i].begin(), ex[i].end());
    ex[i].erase(std::unique(ex[i].begin(), ex[i].end()), ex[i].end());
  }
  const auto ranked = kernels::parallel::batch_topk(q.data, item_table.data, d, ex, static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    QueryMetrics qm;
    qm.node = nodes[i];
    qm.relevant = relevant[i].size();
    qm.recall = recall_at_k(ranked[i], relevant[i], k);
    qm.ndcg = ndcg_at_k(ranked[i], relevant[i], k);
    m.recall += qm.recall;
    m.ndcg += qm.ndcg;
    m.queries.push_back(qm);
  }
  if (!m.queries.empty()) {
    m.recall /= static_cast<double>(m.queries.size());
    m.ndcg /= static_cast<double>(m.queries.size());
  }
  return m;
}

namespace {

Metrics cold_metrics(Kind kind, const std::array<Tensor, 3>& emb, const std::vector<Edge>& train,
                     const std::vector<Edge>& test, int k) {
  std::map<int, std::vector<int>> rel, ex;
  for (const Edge& e : test) rel[e.a].push_back(e.b);
  for (const Edge& e : train) ex[e.a].push_back(e.b);
  std::vector<int> nodes;
  std::vector<std::vector<int>> relevant, exclude;
  for (auto& [node, items] : rel) {
    nodes.push_back(node);
    relevant.push_back(std::move(items));
    exclude.push_back(ex.count(node) ? ex[node] : std::vector<int>{});
  }
  return evaluate_queries(kind, emb[kind_slot(kind)], emb[kind_slot(Kind::kItem)], nodes, relevant, exclude, k);
}

}  // namespace

EvalReport evaluate_tables(const std::array<Tensor, 3>& emb, const EvalSplit& split, int k, bool include_users,
                           std::string variant) {
  EvalReport r;
  r.variant = std::move(variant);
  if (split.test_gi.empty()) throw Error("evaluate: empty Test_N (no cold group has test items)");
  r.groups = cold_metrics(Kind::kGroup, emb, split.train_gi, split.test_gi, k);
  if (include_users) r.users = cold_metrics(Kind::kUser, emb, split.train_ui, split.test_ui, k);
  return r;
}

EvalReport evaluate(const ModelParams& model, const EnhancerParams* enhancer, const InteractionGraph& train_graph,
                    const EvalSplit& split, int k, bool include_users, std::string variant, MetaSampling meta) {
  return evaluate_tables(infer_full(model, train_graph, enhancer, meta), split, k, include_users, std::move(variant));
}

std::string metrics_csv(std::span<const EvalReport> reports) {
  std::string out = "variant,kind,k,queries,recall,ndcg\n";
  for (const EvalReport& r : reports) {
    auto row = [&](const Metrics& m) {
      out += fmt::format("{},{},{},{},{:.6f},{:.6f}\n", r.variant, kind_name(m.kind), m.k, m.queries.size(), m.recall,
                         m.ndcg);
    };
    row(r.groups);
    if (r.users) row(*r.users);
  }
  return out;
}

std::string metrics_table(std::span<const EvalReport> reports) {
  std::size_t w = 7;
  for (const EvalReport& r : reports) w = std::max(w, r.variant.size());
  std::string out = fmt::format("{:<{}}  {:<5}  {:>7}  {:>10}  {:>10}\n", "variant", w, "kind", "queries", "Recall@k",
                                "NDCG@k");
  for (const EvalReport& r : reports) {
    auto row = [&](const Metrics& m) {
      out += fmt::format("{:<{}}  {:<5}  {:>7}  {:>10.4f}  {:>10.4f}\n", r.variant, w, kind_name(m.kind),
                         m.queries.size(), m.recall, m.ndcg);
    };
    row(r.groups);
    if (r.users) row(*r.users);
  }
  return out;
}

std::optional<int> convergence_epoch(std::span<const double> losses) {
  int run = 0;
  for (std::size_t e = 1; e < losses.size(); ++e) {
    const double prev = losses[e - 1];
    const double rel = prev != 0.0 ? (prev - losses[e]) / std::abs(prev) : 0.0;
    run = rel < 1e-3 ? run + 1 : 0;
    // Epoch e (0-based) is the run's third member; its first is e - 2.
    if (run == 3) return static_cast<int>(e - 2) + 1;
  }
  return std::nullopt;
}

std::vector<ComplexityRow> complexity_report(std::span<const TrainHistory> histories) {
  std::vector<ComplexityRow> rows;
  double base_seconds = 0.0;
  for (std::size_t i = 0; i < histories.size(); ++i) {
    const TrainHistory& h = histories[i];
    ComplexityRow row;
    row.variant = h.variant;
    row.graph_edges = h.graph_edges;
    std::size_t sum = 0, batches = 0;
    std::vector<double> totals;
    for (const EpochRecord& e : h.epochs) {
      sum += e.ssl_edges_sum;
      batches += e.ssl_batches;
      row.batch_edges_max = std::max(row.batch_edges_max, e.ssl_edges_max);
      totals.push_back(e.total);
    }
    row.batch_edges = batches > 0 ? static_cast<double>(sum) / static_cast<double>(batches) : 0.0;
    row.seconds_per_epoch = h.mean_epoch_seconds();
    if (i == 0) base_seconds = row.seconds_per_epoch;
    row.time_ratio = base_seconds > 0.0 ? row.seconds_per_epoch / base_seconds : 0.0;
    row.convergence = convergence_epoch(totals);
    rows.push_back(row);
  }
  return rows;
}

std::string complexity_table(std::span<const ComplexityRow> rows) {
  std::size_t w = 7;
  for (const ComplexityRow& r : rows) w = std::max(w, r.variant.size());
  std::string out = fmt::format("{:<{}}  {:>8}  {:>10}  {:>8}  {:>9}  {:>10}  {:>11}\n", "variant", w, "|E|",
                                "mean |E^|", "|E^|/|E|", "s/epoch", "time ratio", "convergence");
  for (const ComplexityRow& r : rows) {
    const double ratio = r.graph_edges > 0 ? r.batch_edges / static_cast<double>(r.graph_edges) : 0.0;
    out += fmt::format("{:<{}}  {:>8}  {:>10.1f}  {:>8.3f}  {:>9.4f}  {:>10.2f}  {:>11}\n", r.variant, w, r.graph_edges,
                       r.batch_edges, ratio, r.seconds_per_epoch, r.time_ratio,
                       r.convergence ? std::to_string(*r.convergence) : std::string("-"));
  }
  return out;
}

std::string complexity_csv(std::span<const ComplexityRow> rows) {
  std::string out = "variant,graph_edges,batch_edges_mean,batch_edges_max,seconds_per_epoch,time_ratio,convergence_epoch\n";
  for (const ComplexityRow& r : rows) {
    out += fmt::format("{},{},{},{},{},{},{}\n", r.variant, r.graph_edges, r.batch_edges, r.batch_edges_max,
                       r.seconds_per_epoch, r.time_ratio, r.convergence ? std::to_string(*r.convergence) : "");
  }
  return out;
}

std::vector<ComplexityComponent> complexity_components(const ComplexityRow& base, const ComplexityRow& ssl, int L, int d,
                                                       int epochs, int batch_size) {
  const double E = static_cast<double>(base.graph_edges), Eh = ssl.batch_edges;
  const double Ld = static_cast<double>(L) * d, s = epochs, steps = batch_size > 0 ? E / batch_size : 0.0;
  return {
      {"adjacency", 2 * E, 10 * Eh * s + 2 * E},
      {"convolution", 2 * E * Ld * s * steps, 2 * (E + 5 * Eh) * Ld * s * steps},
      {"bpr", 2 * E * d * s, 2 * E * d * s},
      {"reconstruction", 0.0, 20 * Eh * Ld * s},
  };
}

std::string complexity_components_table(std::span<const ComplexityComponent> comps) {
  std::string out = fmt::format("{:<15}  {:>12}  {:>12}  {:>7}\n", "component", "base ops", "ssl ops", "ratio");
  for (const ComplexityComponent& c : comps) {
    out += fmt::format("{:<15}  {:>12.4g}  {:>12.4g}  {:>7}\n", c.name, c.base, c.ssl,
                       c.base > 0.0 ? fmt::format("{:.2f}", c.ssl / c.base) : std::string("-"));
  }
  return out;
}

}  // namespace coldgraph
