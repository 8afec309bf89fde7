#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace coldgraph {

enum class Kind : std::uint8_t { kUser = 0, kItem = 1, kGroup = 2 };
inline constexpr std::array<Kind, 3> kAllKinds = {Kind::kUser, Kind::kItem, Kind::kGroup};

struct NodeId {
  Kind kind = Kind::kUser;
  int index = 0;
  friend bool operator==(const NodeId&, const NodeId&) = default;
};

// The five subgraphs. Endpoint kinds are (first, second): GI = (group, item),
// GU = (group, user), UI = (user, item), UU = (user, user), GG = (group, group).
enum class Relation : std::uint8_t { kGI = 0, kGU = 1, kUI = 2, kUU = 3, kGG = 4 };
inline constexpr std::array<Relation, 5> kAllRelations = {Relation::kGI, Relation::kGU, Relation::kUI,
                                                          Relation::kUU, Relation::kGG};

const char* kind_name(Kind k);
const char* relation_name(Relation r);
std::pair<Kind, Kind> relation_kinds(Relation r);
bool relation_touches(Relation r, Kind k);
// Kind on the far side of an edge of `r` from a node of kind `k`.
Kind other_kind(Relation r, Kind k);
// Relations a target of kind k is reconstructed from: group {GI, GU, GG}, user {UI, UU}, item {UI}.
std::span<const Relation> relations_for(Kind k);

inline std::size_t kind_slot(Kind k) { return static_cast<std::size_t>(k); }
inline std::size_t relation_slot(Relation r) { return static_cast<std::size_t>(r); }

struct Edge {
  int a = 0;  // index of the relation's first kind
  int b = 0;  // index of the relation's second kind
  std::int64_t ts = 0;
  bool has_ts = false;
  friend bool operator==(const Edge&, const Edge&) = default;
};

// Immutable heterogeneous graph. Edge lists keep insertion (file) order, which
// doubles as chronology when timestamps are absent. Duplicate edges keep the
// first occurrence; for UU and GG an edge is stored with a < b.
class InteractionGraph {
 public:
  InteractionGraph() : InteractionGraph({0, 0, 0}, {}) {}
  // Throws coldgraph::Error on out-of-range endpoints or UU/GG self-loops.
  InteractionGraph(std::array<int, 3> counts, std::array<std::vector<Edge>, 5> relations);

  int count(Kind k) const { return counts_[kind_slot(k)]; }
  std::array<int, 3> counts() const { return counts_; }
  std::span<const Edge> edges(Relation r) const { return relations_[relation_slot(r)]; }
  std::size_t total_edges() const;

  // Sorted neighbour indices (of other_kind(r, n.kind)).
  std::span<const int> neighbors(Relation r, NodeId n) const;
  std::size_t degree(Relation r, NodeId n) const { return neighbors(r, n).size(); }

  // CSR over nodes of kind k in relation r.
  std::span<const std::size_t> csr_offsets(Relation r, Kind k) const;
  std::span<const int> csr_indices(Relation r, Kind k) const;

  InteractionGraph with_relation(Relation r, std::vector<Edge> edges) const;

 private:
  struct Csr {
    std::vector<std::size_t> offsets;
    std::vector<int> indices;
  };
  const Csr& csr(Relation r, Kind k) const;

  std::array<int, 3> counts_{};
  std::array<std::vector<Edge>, 5> relations_;
  // [relation][0] indexes by the first kind, [relation][1] by the second
  // (homogeneous relations use [0] only).
  std::array<std::array<Csr, 2>, 5> adj_;
};

// UU gets (u, v) iff u and v share more than c_u items in UI; GG likewise with
// c_g over GI. Existing UU/GG edges are replaced.
InteractionGraph build_implicit(const InteractionGraph& g, int c_u, int c_g);

// Warm/cold partition and the cold nodes' chronological edge split.
struct EvalSplit {
  int n_g = 0, n_u = 0, n_i = 0;
  double c_percent = 0.1;
  std::array<std::vector<bool>, 3> warm;  // per kind, indexed by node

  // Edges of cold groups (GI) and cold users (UI).
  std::vector<Edge> train_gi, test_gi, train_ui, test_ui;
  // GI/UI edges removed by the cold truncation rules (first 10 items per cold
  // group/user, first 5 groups/users per cold item).
  std::vector<Edge> truncated_gi, truncated_ui;
  // Cold groups/users with fewer than two retained interactions: all their
  // edges went to Train_N and they are skipped during evaluation.
  std::vector<int> excluded_groups, excluded_users;

  bool is_warm(NodeId n) const { return warm[kind_slot(n.kind)][static_cast<std::size_t>(n.index)]; }
  std::vector<int> members(Kind k, bool warm_side) const;
};

inline constexpr int kColdKeepItems = 10;
inline constexpr int kColdKeepInteractions = 5;

EvalSplit segment(const InteractionGraph& g, int n_g, int n_u, int n_i, double c_percent);

// Graph the recommender trains on: GI/UI without Test_N and truncated edges,
// GU unchanged, implicit UU/GG rebuilt from what remains.
InteractionGraph training_graph(const InteractionGraph& g, const EvalSplit& s, int c_u, int c_g);
// Subgraph induced by warm nodes only (teacher training), implicit relations rebuilt.
InteractionGraph warm_graph(const InteractionGraph& g, const EvalSplit& s, int c_u, int c_g);

// Sampled multi-hop neighbourhood of one target in one relation. layers[0]
// holds the target; layers[l] the distinct nodes reached at hop l (kinds
// alternate for bipartite relations). children[l][offsets..] are positions
// into layers[l + 1] of the sampled neighbours of layers[l][p].
struct HopSample {
  Relation relation = Relation::kGI;
  std::vector<std::vector<int>> layers;
  std::vector<std::vector<std::size_t>> child_offsets;
  std::vector<std::vector<int>> children;

  Kind layer_kind(Kind target_kind, std::size_t l) const;
  std::size_t edge_count() const;
  bool empty() const { return layers.size() < 2 || layers[1].empty(); }
};

struct Episode {
  NodeId target;
  int ground_truth_ref = 0;  // row of the target in the ground-truth table of its kind
  std::vector<HopSample> relations;  // one per relations_for(target.kind), same order

  const HopSample& sample(Relation r) const;
  std::size_t edge_count() const;
};

// Uniform sampling without replacement of min(K, degree) neighbours per
// frontier node, L hops, deduplicated per layer. Deterministic in (seed, target).
Episode sample_episode(const InteractionGraph& g, NodeId target, int K, int L, std::uint64_t seed);
// Same layout with every neighbour taken (no masking).
Episode expand_full(const InteractionGraph& g, NodeId target, int L);

struct SyntheticSpec {
  int users = 200;
  int items = 300;
  int groups = 80;
  int clusters = 4;
  double p_intra = 0.15;  // user-item and group-item probability within a cluster
  double p_inter = 0.01;  // across clusters
  double member_affinity = 0.9;  // chance a group member is drawn from the group's cluster
  int group_size_min = 2;
  int group_size_max = 6;
  // Per-node activity multiplier drawn log-uniformly from [1/spread, spread].
  double activity_spread = 1.0;
  std::int64_t ts_min = 1'000'000;
  std::int64_t ts_max = 2'000'000;
  std::uint64_t seed = 1;
};

struct SyntheticGraph {
  InteractionGraph graph;  // GI, GU, UI populated; UU/GG empty
  std::vector<int> user_cluster, item_cluster, group_cluster;
};

SyntheticGraph generate_synthetic(const SyntheticSpec& spec);

// Deterministic 64-bit mixing used to derive per-target sampling streams.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

}  // namespace coldgraph
