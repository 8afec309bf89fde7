#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "coldgraph/autodiff.hpp"
#include "coldgraph/ground_truth.hpp"
#include "coldgraph/model.hpp"

namespace coldgraph {

// Single-head self-attention over first-order neighbour sets, plus the
// enhancer's own channel fusion.
struct EnhancerParams {
  int d = 0;
  Tensor Wq, Wk, Wv;                     // d x d
  std::array<Tensor, kChannelCount> W;   // fusion weights
  Tensor agg;                            // d x 1

  std::vector<std::pair<std::string, Tensor*>> named();
  std::vector<std::pair<std::string, const Tensor*>> named() const;
};

EnhancerParams init_enhancer(int d, std::uint64_t seed);

struct EnhancerVars {
  const EnhancerParams* params = nullptr;
  ad::Var Wq, Wk, Wv;
  std::array<ad::Var, kChannelCount> W;
  ad::Var agg;

  std::vector<ad::Var> all() const;
};

EnhancerVars bind(ad::Tape& tape, const EnhancerParams& p, bool requires_grad);

// Scaled dot-product self-attention within each segment of rows [m,d].
ad::Var smooth_rows(const EnhancerVars& ev, ad::Var rows, std::vector<std::size_t> offsets);
// Average of the smoothed rows per segment -> [s,d]; empty segments give zeros.
ad::Var meta_rows(const EnhancerVars& ev, ad::Var rows, std::vector<std::size_t> offsets);

// Per-kind tables projected once: E*Wq, E*Wk, E*Wv. Gathering rows of these
// equals projecting gathered rows, at table rather than edge cost.
struct ProjectedTables {
  std::array<ad::Var, 3> q, k, v;
};
ProjectedTables project_tables(const EnhancerVars& ev, const std::array<ad::Var, 3>& E);
// Meta embeddings per segment of neighbour ids (all of kind `kind`).
ad::Var meta_from_ids(const EnhancerVars& ev, const ProjectedTables& pt, Kind kind, const std::vector<int>& ids,
                      std::vector<std::size_t> offsets);

// Scalar forms. self_attention throws on an empty set.
std::vector<Tensor> self_attention(const std::vector<Tensor>& neighbors, const EnhancerParams& p);

struct MetaEmbedding {
  std::vector<std::pair<Relation, Tensor>> per_relation;  // present relations only
  Tensor fused;
  std::vector<double> weights;  // fusion weights over channels_for(kind); empty for items
};
// first_order: neighbour layer-0 embeddings per relation of the target's kind.
// Throws when every relation is empty.
MetaEmbedding meta_embed(Kind kind, const std::vector<std::pair<Relation, std::vector<Tensor>>>& first_order,
                         const EnhancerParams& p, MemberAgg f_agg);

// Fused enhancer predictions [n,d] for episode targets of one kind, using
// only the first sampled layer. Targets with no neighbours get their E row.
ad::Var predict_enhancer(const EnhancerVars& ev, const std::array<ad::Var, 3>& E, MemberAgg f_agg,
                         std::span<const Episode* const> episodes);

struct EnhancerTrainConfig {
  int epochs = 50;
  double lr = 0.001;
  int batch = 256;
  int K = 5;
  MemberAgg f_agg = MemberAgg::kAttention;
  std::uint64_t seed = 1;
};

struct EnhancerHistory {
  std::vector<double> loss;  // mean (1 - cos) per epoch
  double mean_cosine = 0.0;  // over all targets after training
};

// Trains only the enhancer against fixed embedding tables E. Episodes are
// first-order samples of `targets`, redrawn every epoch.
EnhancerHistory train_enhancer(EnhancerParams& p, const std::array<Tensor, 3>& E, const InteractionGraph& g,
                               const std::vector<NodeId>& targets, const GroundTruthTable& gt,
                               const EnhancerTrainConfig& cfg);

// Mean cosine between enhancer predictions and ground truth over targets.
double enhancer_mean_cosine(const EnhancerParams& p, const std::array<Tensor, 3>& E, const InteractionGraph& g,
                            const std::vector<NodeId>& targets, const GroundTruthTable& gt, int K,
                            MemberAgg f_agg, std::uint64_t seed);

}  // namespace coldgraph
