#include "coldgraph/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <tuple>
#include <unordered_map>
#include <unordered_set>

#include "coldgraph/error.hpp"
#include "coldgraph/kernels.hpp"

namespace coldgraph {
namespace {

constexpr std::array<Relation, 3> kGroupRelations = {Relation::kGI, Relation::kGU, Relation::kGG};
constexpr std::array<Relation, 2> kUserRelations = {Relation::kUI, Relation::kUU};
constexpr std::array<Relation, 1> kItemRelations = {Relation::kUI};

bool homogeneous(Relation r) { return r == Relation::kUU || r == Relation::kGG; }

std::uint64_t edge_key(int a, int b) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) | static_cast<std::uint32_t>(b);
}

}  // namespace

const char* kind_name(Kind k) {
  switch (k) {
    case Kind::kUser: return "user";
    case Kind::kItem: return "item";
    case Kind::kGroup: return "group";
  }
  return "?";
}

const char* relation_name(Relation r) {
  switch (r) {
    case Relation::kGI: return "GI";
    case Relation::kGU: return "GU";
    case Relation::kUI: return "UI";
    case Relation::kUU: return "UU";
    case Relation::kGG: return "GG";
  }
  return "?";
}

std::pair<Kind, Kind> relation_kinds(Relation r) {
  switch (r) {
    case Relation::kGI: return {Kind::kGroup, Kind::kItem};
    case Relation::kGU: return {Kind::kGroup, Kind::kUser};
    case Relation::kUI: return {Kind::kUser, Kind::kItem};
    case Relation::kUU: return {Kind::kUser, Kind::kUser};
    case Relation::kGG: return {Kind::kGroup, Kind::kGroup};
  }
  return {Kind::kUser, Kind::kUser};
}

bool relation_touches(Relation r, Kind k) {
  const auto [a, b] = relation_kinds(r);
  return a == k || b == k;
}

Kind other_kind(Relation r, Kind k) {
  const auto [a, b] = relation_kinds(r);
  if (a == k) return b;
  if (b == k) return a;
  throw Error(std::string("relation ") + relation_name(r) + " has no " + kind_name(k) + " side");
}

std::span<const Relation> relations_for(Kind k) {
  switch (k) {
    case Kind::kGroup: return kGroupRelations;
    case Kind::kUser: return kUserRelations;
    case Kind::kItem: return kItemRelations;
  }
  return {};
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  // splitmix64 finaliser over a simple combination.
  std::uint64_t z = seed ^ (a * 0x9E3779B97F4A7C15ull) ^ (b * 0xC2B2AE3D27D4EB4Full);
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

InteractionGraph::InteractionGraph(std::array<int, 3> counts, std::array<std::vector<Edge>, 5> relations)
    : counts_(counts) {
  for (Relation r : kAllRelations) {
    const auto [ka, kb] = relation_kinds(r);
    std::unordered_set<std::uint64_t> seen;
    std::vector<Edge>& out = relations_[relation_slot(r)];
    for (Edge e : relations[relation_slot(r)]) {
      if (e.a < 0 || e.a >= count(ka) || e.b < 0 || e.b >= count(kb)) {
        throw Error(std::string("edge endpoint out of range in ") + relation_name(r));
      }
      if (homogeneous(r)) {
        if (e.a == e.b) throw Error(std::string("self-loop in ") + relation_name(r));
        if (e.a > e.b) std::swap(e.a, e.b);
      }
      if (seen.insert(edge_key(e.a, e.b)).second) out.push_back(e);
    }

    for (int side = 0; side < (homogeneous(r) ? 1 : 2); ++side) {
      const Kind k = side == 0 ? ka : kb;
      Csr& c = adj_[relation_slot(r)][static_cast<std::size_t>(side)];
      c.offsets.assign(static_cast<std::size_t>(count(k)) + 1, 0);
      auto each_end = [&](auto&& fn) {
        for (const Edge& e : out) {
          if (homogeneous(r)) {
            fn(e.a, e.b);
            fn(e.b, e.a);
          } else if (side == 0) {
            fn(e.a, e.b);
          } else {
            fn(e.b, e.a);
          }
        }
      };
      each_end([&](int from, int) { ++c.offsets[static_cast<std::size_t>(from) + 1]; });
      std::partial_sum(c.offsets.begin(), c.offsets.end(), c.offsets.begin());
      c.indices.resize(c.offsets.back());
      std::vector<std::size_t> fill(c.offsets.begin(), c.offsets.end() - 1);
      each_end([&](int from, int to) { c.indices[fill[static_cast<std::size_t>(from)]++] = to; });
      for (std::size_t v = 0; v + 1 < c.offsets.size(); ++v) {
        std::sort(c.indices.begin() + static_cast<std::ptrdiff_t>(c.offsets[v]),
                  c.indices.begin() + static_cast<std::ptrdiff_t>(c.offsets[v + 1]));
      }
    }
  }
}

std::size_t InteractionGraph::total_edges() const {
  std::size_t n = 0;
  for (const auto& r : relations_) n += r.size();
  return n;
}

const InteractionGraph::Csr& InteractionGraph::csr(Relation r, Kind k) const {
  const auto [ka, kb] = relation_kinds(r);
  if (k == ka) return adj_[relation_slot(r)][0];
  if (k == kb) return adj_[relation_slot(r)][1];
  throw Error(std::string("relation ") + relation_name(r) + " has no " + kind_name(k) + " side");
}

std::span<const int> InteractionGraph::neighbors(Relation r, NodeId n) const {
  const Csr& c = csr(r, n.kind);
  if (n.index < 0 || n.index >= count(n.kind)) throw Error("node index out of range");
  const auto v = static_cast<std::size_t>(n.index);
  return std::span<const int>(c.indices).subspan(c.offsets[v], c.offsets[v + 1] - c.offsets[v]);
}

std::span<const std::size_t> InteractionGraph::csr_offsets(Relation r, Kind k) const { return csr(r, k).offsets; }
std::span<const int> InteractionGraph::csr_indices(Relation r, Kind k) const { return csr(r, k).indices; }

InteractionGraph InteractionGraph::with_relation(Relation r, std::vector<Edge> edges) const {
  std::array<std::vector<Edge>, 5> rel = relations_;
  rel[relation_slot(r)] = std::move(edges);
  return InteractionGraph(counts_, std::move(rel));
}

InteractionGraph build_implicit(const InteractionGraph& g, int c_u, int c_g) {
  auto implicit = [&](Relation source, Kind k, int threshold) {
    const kernels::CsrView view{g.csr_offsets(source, k), g.csr_indices(source, k)};
    std::vector<Edge> out;
    for (auto [a, b] : kernels::parallel::shared_neighbor_pairs(view, threshold)) out.push_back(Edge{a, b, 0, false});
    return out;
  };
  return g.with_relation(Relation::kUU, implicit(Relation::kUI, Kind::kUser, c_u))
      .with_relation(Relation::kGG, implicit(Relation::kGI, Kind::kGroup, c_g));
}

std::vector<int> EvalSplit::members(Kind k, bool warm_side) const {
  std::vector<int> out;
  const auto& w = warm[kind_slot(k)];
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i] == warm_side) out.push_back(static_cast<int>(i));
  }
  return out;
}

namespace {

// Chronological key of an edge at position `pos` of its relation list.
struct Chrono {
  bool use_ts;
  std::int64_t key(const Edge& e, std::size_t pos) const {
    return use_ts ? e.ts : static_cast<std::int64_t>(pos);
  }
};

Chrono chrono_for(std::span<const Edge> edges) {
  const bool all_ts = !edges.empty() && std::all_of(edges.begin(), edges.end(), [](const Edge& e) { return e.has_ts; });
  return Chrono{all_ts};
}

}  // namespace

EvalSplit segment(const InteractionGraph& g, int n_g, int n_u, int n_i, double c_percent) {
  if (n_g < 0 || n_u < 0 || n_i < 0) throw Error("segment: thresholds must be non-negative");
  if (!(c_percent > 0.0 && c_percent < 1.0)) throw Error("segment: c_percent must lie in (0, 1)");
  EvalSplit s;
  s.n_g = n_g;
  s.n_u = n_u;
  s.n_i = n_i;
  s.c_percent = c_percent;
  for (Kind k : kAllKinds) s.warm[kind_slot(k)].assign(static_cast<std::size_t>(g.count(k)), false);

  const auto gi = g.edges(Relation::kGI);
  const auto ui = g.edges(Relation::kUI);
  auto& warm_g = s.warm[kind_slot(Kind::kGroup)];
  auto& warm_u = s.warm[kind_slot(Kind::kUser)];
  auto& warm_i = s.warm[kind_slot(Kind::kItem)];
  for (int v = 0; v < g.count(Kind::kGroup); ++v)
    warm_g[static_cast<std::size_t>(v)] = static_cast<int>(g.degree(Relation::kGI, {Kind::kGroup, v})) > n_g;
  for (int v = 0; v < g.count(Kind::kUser); ++v)
    warm_u[static_cast<std::size_t>(v)] = static_cast<int>(g.degree(Relation::kUI, {Kind::kUser, v})) > n_u;

  // Items only count interactions whose other endpoint is warm.
  std::vector<int> item_count(static_cast<std::size_t>(g.count(Kind::kItem)), 0);
  for (const Edge& e : gi)
    if (warm_g[static_cast<std::size_t>(e.a)]) ++item_count[static_cast<std::size_t>(e.b)];
  for (const Edge& e : ui)
    if (warm_u[static_cast<std::size_t>(e.a)]) ++item_count[static_cast<std::size_t>(e.b)];
  for (std::size_t i = 0; i < item_count.size(); ++i) warm_i[i] = item_count[i] > n_i;

  const Chrono cgi = chrono_for(gi);
  const Chrono cui = chrono_for(ui);
  std::vector<bool> drop_gi(gi.size(), false), drop_ui(ui.size(), false);

  // Cold items keep their first kColdKeepInteractions interactions across GI and UI.
  {
    struct Ref {
      std::int64_t t;
      int rel;  // 0 = GI, 1 = UI
      int other;
      std::size_t pos;
    };
    std::vector<std::vector<Ref>> per_item(item_count.size());
    for (std::size_t p = 0; p < gi.size(); ++p)
      if (!warm_i[static_cast<std::size_t>(gi[p].b)]) per_item[static_cast<std::size_t>(gi[p].b)].push_back({cgi.key(gi[p], p), 0, gi[p].a, p});
    for (std::size_t p = 0; p < ui.size(); ++p)
      if (!warm_i[static_cast<std::size_t>(ui[p].b)]) per_item[static_cast<std::size_t>(ui[p].b)].push_back({cui.key(ui[p], p), 1, ui[p].a, p});
    for (auto& refs : per_item) {
      std::sort(refs.begin(), refs.end(), [](const Ref& x, const Ref& y) {
        return std::tie(x.t, x.rel, x.other, x.pos) < std::tie(y.t, y.rel, y.other, y.pos);
      });
      for (std::size_t j = kColdKeepInteractions; j < refs.size(); ++j) {
        (refs[j].rel == 0 ? drop_gi : drop_ui)[refs[j].pos] = true;
      }
    }
  }

  // Cold groups/users: keep the first kColdKeepItems items, then split chronologically.
  auto split_owner = [&](std::span<const Edge> edges, const Chrono& ch, const std::vector<bool>& warm_owner,
                         std::vector<bool>& drop, std::vector<Edge>& train, std::vector<Edge>& test,
                         std::vector<Edge>& truncated, std::vector<int>& excluded) {
    std::vector<std::vector<std::size_t>> per_owner(warm_owner.size());
    for (std::size_t p = 0; p < edges.size(); ++p) {
      if (drop[p]) continue;
      if (!warm_owner[static_cast<std::size_t>(edges[p].a)]) per_owner[static_cast<std::size_t>(edges[p].a)].push_back(p);
    }
    for (std::size_t owner = 0; owner < per_owner.size(); ++owner) {
      if (warm_owner[owner]) continue;
      auto& list = per_owner[owner];
      std::sort(list.begin(), list.end(), [&](std::size_t x, std::size_t y) {
        const auto kx = ch.key(edges[x], x), ky = ch.key(edges[y], y);
        if (kx != ky) return kx < ky;
        return edges[x].b < edges[y].b;
      });
      for (std::size_t j = kColdKeepItems; j < list.size(); ++j) drop[list[j]] = true;
      const std::size_t kept = std::min<std::size_t>(list.size(), kColdKeepItems);
      if (kept == 0) continue;
      std::size_t n_train = kept;
      if (kept < 2) {
        excluded.push_back(static_cast<int>(owner));
      } else {
        // Tolerance keeps e.g. 0.3 * 10 from rounding up to 4.
        n_train = static_cast<std::size_t>(std::ceil(c_percent * static_cast<double>(kept) - 1e-9));
        n_train = std::clamp<std::size_t>(n_train, 1, kept);
      }
      for (std::size_t j = 0; j < kept; ++j) (j < n_train ? train : test).push_back(edges[list[j]]);
    }
    for (std::size_t p = 0; p < edges.size(); ++p)
      if (drop[p]) truncated.push_back(edges[p]);
  };
  split_owner(gi, cgi, warm_g, drop_gi, s.train_gi, s.test_gi, s.truncated_gi, s.excluded_groups);
  split_owner(ui, cui, warm_u, drop_ui, s.train_ui, s.test_ui, s.truncated_ui, s.excluded_users);
  return s;
}

namespace {

std::vector<Edge> without(std::span<const Edge> edges, const std::vector<Edge>& a, const std::vector<Edge>& b) {
  std::unordered_set<std::uint64_t> removed;
  for (const Edge& e : a) removed.insert(edge_key(e.a, e.b));
  for (const Edge& e : b) removed.insert(edge_key(e.a, e.b));
  std::vector<Edge> out;
  for (const Edge& e : edges)
    if (!removed.contains(edge_key(e.a, e.b))) out.push_back(e);
  return out;
}

}  // namespace

InteractionGraph training_graph(const InteractionGraph& g, const EvalSplit& s, int c_u, int c_g) {
  std::array<std::vector<Edge>, 5> rel;
  rel[relation_slot(Relation::kGI)] = without(g.edges(Relation::kGI), s.test_gi, s.truncated_gi);
  rel[relation_slot(Relation::kUI)] = without(g.edges(Relation::kUI), s.test_ui, s.truncated_ui);
  const auto gu = g.edges(Relation::kGU);
  rel[relation_slot(Relation::kGU)] = std::vector<Edge>(gu.begin(), gu.end());
  return build_implicit(InteractionGraph(g.counts(), std::move(rel)), c_u, c_g);
}

InteractionGraph warm_graph(const InteractionGraph& g, const EvalSplit& s, int c_u, int c_g) {
  std::array<std::vector<Edge>, 5> rel;
  for (Relation r : {Relation::kGI, Relation::kGU, Relation::kUI}) {
    const auto [ka, kb] = relation_kinds(r);
    for (const Edge& e : g.edges(r)) {
      if (s.is_warm({ka, e.a}) && s.is_warm({kb, e.b})) rel[relation_slot(r)].push_back(e);
    }
  }
  return build_implicit(InteractionGraph(g.counts(), std::move(rel)), c_u, c_g);
}

Kind HopSample::layer_kind(Kind target_kind, std::size_t l) const {
  return l % 2 == 0 ? target_kind : other_kind(relation, target_kind);
}

std::size_t HopSample::edge_count() const {
  std::size_t n = 0;
  for (const auto& c : children) n += c.size();
  return n;
}

const HopSample& Episode::sample(Relation r) const {
  for (const HopSample& h : relations)
    if (h.relation == r) return h;
  throw Error(std::string("episode has no ") + relation_name(r) + " sample");
}

std::size_t Episode::edge_count() const {
  std::size_t n = 0;
  for (const HopSample& h : relations) n += h.edge_count();
  return n;
}

namespace {

Episode build_episode(const InteractionGraph& g, NodeId target, int K, int L, std::mt19937_64* rng) {
  if (target.index < 0 || target.index >= g.count(target.kind)) throw Error("episode target out of range");
  if (K < 1 || L < 1) throw Error("episode needs K >= 1 and L >= 1");
  Episode ep;
  ep.target = target;
  ep.ground_truth_ref = target.index;
  std::vector<int> scratch;
  for (Relation r : relations_for(target.kind)) {
    HopSample h;
    h.relation = r;
    h.layers.push_back({target.index});
    for (int l = 0; l < L; ++l) {
      const Kind here = h.layer_kind(target.kind, static_cast<std::size_t>(l));
      std::vector<int> next;
      std::unordered_map<int, int> position;
      std::vector<std::size_t> offsets{0};
      std::vector<int> kids;
      for (int node : h.layers.back()) {
        const auto nb = g.neighbors(r, {here, node});
        scratch.assign(nb.begin(), nb.end());
        const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(K), scratch.size());
        if (rng != nullptr) {
          for (std::size_t j = 0; j < take; ++j) {
            std::uniform_int_distribution<std::size_t> pick(j, scratch.size() - 1);
            std::swap(scratch[j], scratch[pick(*rng)]);
          }
        }
        for (std::size_t j = 0; j < take; ++j) {
          auto [it, fresh] = position.try_emplace(scratch[j], static_cast<int>(next.size()));
          if (fresh) next.push_back(scratch[j]);
          kids.push_back(it->second);
        }
        offsets.push_back(kids.size());
      }
      h.layers.push_back(std::move(next));
      h.child_offsets.push_back(std::move(offsets));
      h.children.push_back(std::move(kids));
    }
    ep.relations.push_back(std::move(h));
  }
  return ep;
}

}  // namespace

Episode sample_episode(const InteractionGraph& g, NodeId target, int K, int L, std::uint64_t seed) {
  std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(target.kind) + 1, static_cast<std::uint64_t>(target.index)));
  return build_episode(g, target, K, L, &rng);
}

Episode expand_full(const InteractionGraph& g, NodeId target, int L) {
  int max_deg = 1;
  for (Relation r : relations_for(target.kind)) {
    for (Kind k : {relation_kinds(r).first, relation_kinds(r).second}) {
      const auto off = g.csr_offsets(r, k);
      for (std::size_t v = 0; v + 1 < off.size(); ++v) max_deg = std::max(max_deg, static_cast<int>(off[v + 1] - off[v]));
    }
  }
  return build_episode(g, target, max_deg, L, nullptr);
}

SyntheticGraph generate_synthetic(const SyntheticSpec& spec) {
  if (spec.users <= 0 || spec.items <= 0 || spec.groups <= 0 || spec.clusters <= 0) {
    throw Error("synthetic spec: counts must be positive");
  }
  for (double p : {spec.p_intra, spec.p_inter, spec.member_affinity}) {
    if (!(p >= 0.0 && p <= 1.0)) throw Error("synthetic spec: probabilities must lie in [0, 1]");
  }
  if (spec.group_size_min < 1 || spec.group_size_min > spec.group_size_max) {
    throw Error("synthetic spec: invalid group size range");
  }
  if (spec.group_size_max > spec.users) throw Error("synthetic spec: group size exceeds user count");
  if (spec.activity_spread < 1.0) throw Error("synthetic spec: activity_spread must be >= 1");
  if (spec.ts_min > spec.ts_max) throw Error("synthetic spec: empty timestamp range");

  std::mt19937_64 rng(spec.seed);
  std::uniform_int_distribution<int> cluster(0, spec.clusters - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::int64_t> stamp(spec.ts_min, spec.ts_max);
  const double log_spread = std::log(spec.activity_spread);
  auto activity = [&] {
    return log_spread == 0.0 ? 1.0 : std::exp(std::uniform_real_distribution<double>(-log_spread, log_spread)(rng));
  };

  SyntheticGraph out;
  out.user_cluster.resize(static_cast<std::size_t>(spec.users));
  out.item_cluster.resize(static_cast<std::size_t>(spec.items));
  out.group_cluster.resize(static_cast<std::size_t>(spec.groups));
  for (int& c : out.user_cluster) c = cluster(rng);
  for (int& c : out.item_cluster) c = cluster(rng);
  for (int& c : out.group_cluster) c = cluster(rng);

  std::vector<std::vector<int>> users_in(static_cast<std::size_t>(spec.clusters));
  for (int u = 0; u < spec.users; ++u) users_in[static_cast<std::size_t>(out.user_cluster[static_cast<std::size_t>(u)])].push_back(u);

  std::array<std::vector<Edge>, 5> rel;
  auto interactions = [&](int owner, int owner_cluster, std::vector<Edge>& edges) {
    const double act = activity();
    for (int i = 0; i < spec.items; ++i) {
      const double p = out.item_cluster[static_cast<std::size_t>(i)] == owner_cluster ? spec.p_intra : spec.p_inter;
      if (unit(rng) < std::min(1.0, p * act)) edges.push_back(Edge{owner, i, stamp(rng), true});
    }
  };
  for (int u = 0; u < spec.users; ++u) interactions(u, out.user_cluster[static_cast<std::size_t>(u)], rel[relation_slot(Relation::kUI)]);

  std::uniform_int_distribution<int> size(spec.group_size_min, spec.group_size_max);
  std::uniform_int_distribution<int> any_user(0, spec.users - 1);
  for (int gidx = 0; gidx < spec.groups; ++gidx) {
    const int gc = out.group_cluster[static_cast<std::size_t>(gidx)];
    const auto& pool = users_in[static_cast<std::size_t>(gc)];
    const int want = size(rng);
    std::set<int> members;
    std::size_t from_pool = 0;
    while (static_cast<int>(members.size()) < want) {
      if (from_pool < pool.size() && unit(rng) < spec.member_affinity) {
        const int u = pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
        if (members.insert(u).second) ++from_pool;
      } else {
        members.insert(any_user(rng));
      }
    }
    for (int u : members) rel[relation_slot(Relation::kGU)].push_back(Edge{gidx, u, 0, false});
    interactions(gidx, gc, rel[relation_slot(Relation::kGI)]);
  }

  out.graph = InteractionGraph({spec.users, spec.items, spec.groups}, std::move(rel));
  return out;
}

}  // namespace coldgraph
