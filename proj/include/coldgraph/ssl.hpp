#pragma once

#include <span>
#include <vector>

#include "coldgraph/autodiff.hpp"
#include "coldgraph/enhancer.hpp"
#include "coldgraph/ground_truth.hpp"
#include "coldgraph/model.hpp"
#include "coldgraph/train.hpp"

namespace coldgraph {

struct TeacherResult {
  ModelParams model;
  GroundTruthTable table;
  TrainHistory history;
};

// Trains the base GNN (full neighbourhoods, no enhancer) on the warm-only
// subgraph with L_main; ground truth per warm node is the layer sum
// E + fused(H^1) + ... + fused(H^L).
TeacherResult train_teacher(const InteractionGraph& g, const EvalSplit& split, const TrainConfig& cfg);

// Ground truth from an already trained model on graph g, covering `covered`.
GroundTruthTable ground_truth_from(const ModelParams& p, const InteractionGraph& g,
                                   const std::array<std::vector<bool>, 3>& covered, const std::string& provenance);

// 1 - cos(predicted, target); throws "degenerate norm" on a zero vector.
double reconstruction_loss(const Tensor& predicted, const Tensor& target);
// Batch mean of 1 - cos over rows [n,d]; target rows are constants.
ad::Var reconstruction_loss(ad::Var predicted, const Tensor& target);

struct SslLoss {
  ad::Var total;                 // L_Rg + L_Ru + L_Ri
  std::array<double, 3> parts{};  // per kind (user, item, group)
  std::size_t edge_count = 0;    // sampled edges read (|E^| of the batch)
  std::vector<Kind> empty_kinds;  // kinds whose batch was empty (term = 0)
};

// Episodic L_R: predictions from masked-episode propagation of each batch.
SslLoss ssl_loss(std::span<const Episode* const> group_batch, std::span<const Episode* const> user_batch,
                 std::span<const Episode* const> item_batch, const ModelVars& mv, const EnhancerVars* enhancer,
                 const GroundTruthTable& gt);

// Full-neighbourhood L_R: predictions are rows of full-graph embeddings.
SslLoss ssl_loss_full(const std::array<ad::Var, 3>& embeddings, std::span<const NodeId> targets,
                      const GroundTruthTable& gt);

}  // namespace coldgraph
