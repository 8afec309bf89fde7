#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "coldgraph/autodiff.hpp"
#include "coldgraph/graph.hpp"
#include "coldgraph/tensor.hpp"

namespace coldgraph {

struct EnhancerParams;  // enhancer.hpp
struct EnhancerVars;

enum class Backbone : std::uint8_t { kLight, kGcn };
enum class MemberAgg : std::uint8_t { kAttention, kAverage, kSum, kMaxPool };

const char* backbone_name(Backbone b);
Backbone parse_backbone(const std::string& s);
const char* member_agg_name(MemberAgg a);
MemberAgg parse_member_agg(const std::string& s);

// Fusion channels. Groups fuse {GI, GU, GU', GG}, users {UI, UU}; items use
// their UI propagation directly.
enum class Channel : std::uint8_t { kGI = 0, kGU = 1, kGUPrime = 2, kGG = 3, kUI = 4, kUU = 5 };
inline constexpr std::size_t kChannelCount = 6;
const char* channel_name(Channel c);
std::span<const Channel> channels_for(Kind k);
// Relation a channel is propagated over (GU' aggregates GU members).
Relation channel_relation(Channel c);

struct ModelConfig {
  int d = 64;
  int L = 3;
  Backbone backbone = Backbone::kLight;
  MemberAgg f_agg = MemberAgg::kAttention;
  bool meta_projection = false;  // allocate P_r for meta injection
};

struct ModelParams {
  ModelConfig config;
  std::array<Tensor, 3> E;                 // per kind, count x d
  std::array<Tensor, kChannelCount> W;     // d x d fusion weights
  std::vector<Tensor> conv;                // gcn: L tensors of 2d x d
  std::array<Tensor, 5> P;                 // per relation, 2d x d (empty unless meta_projection)
  Tensor agg;                              // d x 1 member-attention score vector

  // Stable names for checkpoints, in a fixed order.
  std::vector<std::pair<std::string, Tensor*>> named();
  std::vector<std::pair<std::string, const Tensor*>> named() const;
};

// Xavier-uniform tables and weights; P_r starts at [I; 0].
ModelParams init_model(const ModelConfig& cfg, std::array<int, 3> counts, std::uint64_t seed);

// ModelParams bound to a tape.
struct ModelVars {
  const ModelParams* params = nullptr;
  std::array<ad::Var, 3> E;
  std::array<ad::Var, kChannelCount> W;
  std::vector<ad::Var> conv;
  std::array<ad::Var, 5> P;
  ad::Var agg;

  int d() const { return params->config.d; }
  int L() const { return params->config.L; }
  std::vector<ad::Var> all() const;
};

ModelVars bind(ad::Tape& tape, const ModelParams& p, bool requires_grad);

// One CONV step over n rows. self, nbar: [n,d]; meta: [n,d] or null. Rows
// whose has_child entry is 0 pass self through unchanged. step is 1-based.
ad::Var conv_rows(const ModelVars& mv, Relation r, int step, ad::Var self, ad::Var nbar,
                  std::optional<ad::Var> meta, std::span<const double> has_child = {});

// Scalar form: neighbours may be empty (mean = 0).
Tensor conv_step(const ModelParams& p, Relation r, int step, const Tensor& self,
                 const std::vector<Tensor>& neighbors, const std::optional<Tensor>& meta = std::nullopt);

// Member aggregation over segments of per-edge rows [m,d] -> [s,d].
ad::Var aggregate_rows(MemberAgg f, ad::Var score_vec, ad::Var rows, std::vector<std::size_t> offsets);
// Scalar form; throws "group without members" on an empty list.
Tensor aggregate_members(const std::vector<Tensor>& members, MemberAgg f, const Tensor& score_vec);

// Soft-attention fusion over channels [n,d] each, masked by presence [n,C].
// Rows with no present channel take `fallback`. Weights [n,C] are written to
// *weights when given.
ad::Var fuse_rows(std::span<const ad::Var> channels, std::span<const ad::Var> W, const Tensor& presence,
                  ad::Var fallback, Tensor* weights = nullptr);

struct ChannelEmbeddings {
  std::vector<std::optional<Tensor>> h;  // per channel, absent when nullopt
  std::vector<double> a;                 // filled by fuse_channels
};
// Scalar form; throws when every channel is absent.
Tensor fuse_channels(ChannelEmbeddings& ch, const std::vector<Tensor>& W);

double score(std::span<const double> left, std::span<const double> right);

// Layered computation plan for one relation: nodes[0] are the roots,
// children[j][offsets[j][p]..] index into nodes[j+1].
struct Plan {
  Relation relation = Relation::kGI;
  std::vector<Kind> kinds;
  std::vector<std::vector<int>> nodes;
  std::vector<std::vector<std::size_t>> offsets;
  std::vector<std::vector<int>> children;

  std::size_t depth() const { return children.size(); }
  std::size_t edge_count() const;
  // 1.0 where a root has at least one child.
  std::vector<double> root_presence() const;
};

// Stacks the samples of `relation` from several episodes (no cross-episode sharing).
Plan plan_from_episodes(std::span<const Episode* const> episodes, Relation relation);

// Bottom-up evaluation; returns per-layer values (index 0 = roots). When
// `enhancer` is set, every step receives the meta embedding of its children.
std::vector<ad::Var> propagate_plan(const ModelVars& mv, const EnhancerVars* enhancer, const Plan& plan);

// Scalar form for one episode target in one relation.
Tensor propagate(const ModelParams& p, const Episode& ep, Relation r);

// Final (fused) embeddings of a batch of episode targets, all of one kind.
struct EpisodeOutput {
  ad::Var fused;                 // [n,d]
  std::size_t edge_count = 0;    // sampled edges read
};
EpisodeOutput forward_episodes(const ModelVars& mv, const EnhancerVars* enhancer,
                               std::span<const Episode* const> episodes);

// Full-graph propagation over every node. fused[k] holds depth-L embeddings
// per kind; with keep_depths, depth_fused[t][k] holds the fused depth-t
// embeddings for t = 1..L (index 0 is the layer-0 table).
struct FullOutput {
  std::array<ad::Var, 3> fused;
  std::vector<std::array<ad::Var, 3>> depth_fused;
  std::size_t edge_count = 0;
};
// Neighbour sets fed to the enhancer during full propagation: up to K
// first-order neighbours per node and relation, drawn from `seed`. K <= 0
// uses the complete adjacency.
struct MetaSampling {
  int K = 0;
  std::uint64_t seed = 0;
};
FullOutput forward_full(const ModelVars& mv, const EnhancerVars* enhancer, const InteractionGraph& g,
                        bool keep_depths = false, MetaSampling meta = {});

// Constant-tape convenience: depth-L embeddings per kind.
std::array<Tensor, 3> infer_full(const ModelParams& p, const InteractionGraph& g,
                                 const EnhancerParams* enhancer = nullptr, MetaSampling meta = {});

}  // namespace coldgraph
