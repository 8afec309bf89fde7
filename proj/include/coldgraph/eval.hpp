#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "coldgraph/enhancer.hpp"
#include "coldgraph/graph.hpp"
#include "coldgraph/model.hpp"
#include "coldgraph/tensor.hpp"
#include "coldgraph/train.hpp"

namespace coldgraph {

// Item indices by descending inner product with `query`, skipping `exclude`
// (any order). Ties go to the lower index; fewer than k candidates returns all.
std::vector<int> recommend_topk(std::span<const double> query, const Tensor& items, int k,
                                std::span<const int> exclude = {});

// Fraction of `relevant` found in the first k of `ranked`. Throws on an empty relevant set.
double recall_at_k(std::span<const int> ranked, std::span<const int> relevant, int k);
// DCG with 1/log2(p + 1) at 1-based position p, over the ideal DCG of min(|relevant|, k) hits.
double ndcg_at_k(std::span<const int> ranked, std::span<const int> relevant, int k);

struct QueryMetrics {
  int node = 0;
  std::size_t relevant = 0;
  double recall = 0.0;
  double ndcg = 0.0;
};

struct Metrics {
  Kind kind = Kind::kGroup;
  int k = 20;
  double recall = 0.0;  // mean over queries
  double ndcg = 0.0;
  std::vector<QueryMetrics> queries;
};

// Ranks all items for every query row; relevant/exclude are indexed like `nodes`.
Metrics evaluate_queries(Kind kind, const Tensor& query_table, const Tensor& item_table, const std::vector<int>& nodes,
                         const std::vector<std::vector<int>>& relevant, const std::vector<std::vector<int>>& exclude,
                         int k);

struct EvalReport {
  std::string variant;
  Metrics groups;
  std::optional<Metrics> users;
};

// Cold groups (and optionally cold users) with at least one test item; their
// Train_N items are excluded from the candidates. Embeddings come from full
// propagation over the training graph.
EvalReport evaluate(const ModelParams& model, const EnhancerParams* enhancer, const InteractionGraph& train_graph,
                    const EvalSplit& split, int k, bool include_users = false, std::string variant = {},
                    MetaSampling meta = {});
// Same with precomputed per-kind embedding tables.
EvalReport evaluate_tables(const std::array<Tensor, 3>& emb, const EvalSplit& split, int k, bool include_users,
                           std::string variant);

// variant,kind,k,queries,recall,ndcg with fixed six-digit decimals.
std::string metrics_csv(std::span<const EvalReport> reports);
std::string metrics_table(std::span<const EvalReport> reports);

// First 1-based epoch that opens a run of three consecutive epochs each
// improving total loss by less than 0.1% (relative); nullopt if none.
std::optional<int> convergence_epoch(std::span<const double> losses);

struct ComplexityRow {
  std::string variant;
  std::size_t graph_edges = 0;        // |E|
  double batch_edges = 0.0;           // mean |E^| per episode batch (0 without SSL)
  std::size_t batch_edges_max = 0;
  double seconds_per_epoch = 0.0;
  double time_ratio = 0.0;            // vs the base row
  std::optional<int> convergence;
};

// The first history is the reference (base) row.
std::vector<ComplexityRow> complexity_report(std::span<const TrainHistory> histories);
std::string complexity_table(std::span<const ComplexityRow> rows);
std::string complexity_csv(std::span<const ComplexityRow> rows);

// Per-component operation counts for base vs SSL training, evaluated with the
// measured |E| and mean |E^|: adjacency normalization, graph convolution, BPR
// and the reconstruction objective, each over `epochs` epochs.
struct ComplexityComponent {
  std::string name;
  double base = 0.0;
  double ssl = 0.0;
};
std::vector<ComplexityComponent> complexity_components(const ComplexityRow& base, const ComplexityRow& ssl, int L, int d,
                                                       int epochs, int batch_size);
std::string complexity_components_table(std::span<const ComplexityComponent> comps);

}  // namespace coldgraph
