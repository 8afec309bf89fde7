#include "coldgraph/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "coldgraph/enhancer.hpp"
#include "coldgraph/error.hpp"

namespace coldgraph {

using ad::Var;

namespace {

constexpr std::array<Channel, 4> kGroupChannels = {Channel::kGI, Channel::kGU, Channel::kGUPrime, Channel::kGG};
constexpr std::array<Channel, 2> kUserChannels = {Channel::kUI, Channel::kUU};

std::size_t ch_slot(Channel c) { return static_cast<std::size_t>(c); }

}  // namespace

Relation channel_relation(Channel c) {
  switch (c) {
    case Channel::kGI: return Relation::kGI;
    case Channel::kGU:
    case Channel::kGUPrime: return Relation::kGU;
    case Channel::kGG: return Relation::kGG;
    case Channel::kUI: return Relation::kUI;
    case Channel::kUU: return Relation::kUU;
  }
  return Relation::kGI;
}

namespace {

void xavier(Tensor& t, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(t.rows + t.cols));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (double& v : t.data) v = u(rng);
}

bool all_ones(std::span<const double> m) {
  return std::all_of(m.begin(), m.end(), [](double v) { return v != 0.0; });
}

Tensor column(std::span<const double> v) { return Tensor(v.size(), 1, std::vector<double>(v.begin(), v.end())); }

template <typename Self>
auto named_impl(Self& p) {
  using Ptr = std::conditional_t<std::is_const_v<Self>, const Tensor*, Tensor*>;
  std::vector<std::pair<std::string, Ptr>> out;
  for (Kind k : kAllKinds) out.emplace_back(std::string("E/") + kind_name(k), &p.E[kind_slot(k)]);
  for (std::size_t c = 0; c < kChannelCount; ++c)
    out.emplace_back(std::string("W/") + channel_name(static_cast<Channel>(c)), &p.W[c]);
  for (std::size_t t = 0; t < p.conv.size(); ++t) out.emplace_back("conv/" + std::to_string(t), &p.conv[t]);
  for (Relation r : kAllRelations)
    if (p.P[relation_slot(r)].size() > 0) out.emplace_back(std::string("P/") + relation_name(r), &p.P[relation_slot(r)]);
  out.emplace_back("agg", &p.agg);
  return out;
}

}  // namespace

const char* backbone_name(Backbone b) { return b == Backbone::kLight ? "light" : "gcn"; }

Backbone parse_backbone(const std::string& s) {
  if (s == "light") return Backbone::kLight;
  if (s == "gcn") return Backbone::kGcn;
  throw Error("unknown backbone `" + s + "` (light|gcn)");
}

const char* member_agg_name(MemberAgg a) {
  switch (a) {
    case MemberAgg::kAttention: return "attention";
    case MemberAgg::kAverage: return "average";
    case MemberAgg::kSum: return "sum";
    case MemberAgg::kMaxPool: return "maxpool";
  }
  return "?";
}

MemberAgg parse_member_agg(const std::string& s) {
  for (MemberAgg a : {MemberAgg::kAttention, MemberAgg::kAverage, MemberAgg::kSum, MemberAgg::kMaxPool})
    if (s == member_agg_name(a)) return a;
  throw Error("unknown f_agg `" + s + "` (attention|average|sum|maxpool)");
}

const char* channel_name(Channel c) {
  switch (c) {
    case Channel::kGI: return "GI";
    case Channel::kGU: return "GU";
    case Channel::kGUPrime: return "GU'";
    case Channel::kGG: return "GG";
    case Channel::kUI: return "UI";
    case Channel::kUU: return "UU";
  }
  return "?";
}

std::span<const Channel> channels_for(Kind k) {
  if (k == Kind::kGroup) return kGroupChannels;
  if (k == Kind::kUser) return kUserChannels;
  return {};
}

std::vector<std::pair<std::string, Tensor*>> ModelParams::named() { return named_impl(*this); }
std::vector<std::pair<std::string, const Tensor*>> ModelParams::named() const { return named_impl(*this); }

ModelParams init_model(const ModelConfig& cfg, std::array<int, 3> counts, std::uint64_t seed) {
  if (cfg.d < 1) throw Error("model: d must be >= 1");
  if (cfg.L < 0) throw Error("model: L must be >= 0");
  const auto d = static_cast<std::size_t>(cfg.d);
  ModelParams p;
  p.config = cfg;
  std::mt19937_64 rng(seed);
  for (Kind k : kAllKinds) {
    p.E[kind_slot(k)] = Tensor(static_cast<std::size_t>(counts[kind_slot(k)]), d);
    xavier(p.E[kind_slot(k)], rng);
  }
  for (Tensor& w : p.W) {
    w = Tensor(d, d);
    xavier(w, rng);
  }
  if (cfg.backbone == Backbone::kGcn) {
    for (int t = 0; t < cfg.L; ++t) {
      p.conv.emplace_back(2 * d, d);
      xavier(p.conv.back(), rng);
    }
  }
  p.agg = Tensor(d, 1);
  xavier(p.agg, rng);
  if (cfg.meta_projection) {
    for (Tensor& P : p.P) {
      P = Tensor(2 * d, d);
      for (std::size_t i = 0; i < d; ++i) P(i, i) = 1.0;
    }
  }
  return p;
}

std::vector<Var> ModelVars::all() const {
  std::vector<Var> out(E.begin(), E.end());
  out.insert(out.end(), W.begin(), W.end());
  out.insert(out.end(), conv.begin(), conv.end());
  for (Relation r : kAllRelations)
    if (params->P[relation_slot(r)].size() > 0) out.push_back(P[relation_slot(r)]);
  out.push_back(agg);
  return out;
}

ModelVars bind(ad::Tape& tape, const ModelParams& p, bool requires_grad) {
  ModelVars mv;
  mv.params = &p;
  for (std::size_t k = 0; k < 3; ++k) mv.E[k] = tape.leaf(p.E[k], requires_grad);
  for (std::size_t c = 0; c < kChannelCount; ++c) mv.W[c] = tape.leaf(p.W[c], requires_grad);
  for (const Tensor& w : p.conv) mv.conv.push_back(tape.leaf(w, requires_grad));
  for (std::size_t r = 0; r < 5; ++r)
    if (p.P[r].size() > 0) mv.P[r] = tape.leaf(p.P[r], requires_grad);
  mv.agg = tape.leaf(p.agg, requires_grad);
  return mv;
}

namespace {

// s' for a conv step: the self rows, or P_r applied to [self, meta].
Var inject_meta(const ModelVars& mv, Relation r, Var self, const std::optional<Var>& meta) {
  if (!meta) return self;
  const Var P = mv.P[relation_slot(r)];
  if (!P.valid()) throw Error("meta injection needs P_r (model built without meta projection)");
  const Var parts[2] = {self, *meta};
  return ad::matmul(ad::concat_cols(parts), P);
}

Var conv_injected(const ModelVars& mv, int step, Var self, Var s, Var nbar, std::span<const double> has_child) {
  ad::Tape& tape = *self.tape;
  Var out;
  if (mv.params->config.backbone == Backbone::kLight) {
    out = ad::scale(ad::add(s, nbar), 0.5);
  } else {
    if (step < 1 || static_cast<std::size_t>(step) > mv.conv.size()) throw Error("gcn step out of range");
    const Var parts[2] = {s, nbar};
    out = ad::relu(ad::matmul(ad::concat_cols(parts), mv.conv[static_cast<std::size_t>(step - 1)]));
  }
  if (!has_child.empty() && !all_ones(has_child)) {
    std::vector<double> inv(has_child.size());
    for (std::size_t i = 0; i < inv.size(); ++i) inv[i] = has_child[i] != 0.0 ? 0.0 : 1.0;
    out = ad::add(ad::scale_rows(out, tape.constant(column(has_child))), ad::scale_rows(self, tape.constant(column(inv))));
  }
  return out;
}

}  // namespace

Var conv_rows(const ModelVars& mv, Relation r, int step, Var self, Var nbar, std::optional<Var> meta,
              std::span<const double> has_child) {
  return conv_injected(mv, step, self, inject_meta(mv, r, self, meta), nbar, has_child);
}

Tensor conv_step(const ModelParams& p, Relation r, int step, const Tensor& self, const std::vector<Tensor>& neighbors,
                 const std::optional<Tensor>& meta) {
  const auto d = static_cast<std::size_t>(p.config.d);
  auto check = [&](const Tensor& t) {
    if (t.rows != 1 || t.cols != d) throw ShapeError("conv_step: expected 1x" + std::to_string(d) + ", got " + t.shape_str());
    if (!t.all_finite()) throw Error("conv_step: non-finite input");
  };
  check(self);
  Tensor nbar(1, d);
  for (const Tensor& n : neighbors) {
    check(n);
    for (std::size_t c = 0; c < d; ++c) nbar.data[c] += n.data[c];
  }
  if (!neighbors.empty())
    for (double& v : nbar.data) v /= static_cast<double>(neighbors.size());
  std::optional<Var> meta_var;
  ad::Tape tape;
  const ModelVars mv = bind(tape, p, false);
  if (meta) {
    check(*meta);
    meta_var = tape.constant(*meta);
  }
  return tape.value(conv_rows(mv, r, step, tape.constant(self), tape.constant(nbar), meta_var));
}

Var aggregate_rows(MemberAgg f, Var score_vec, Var rows, std::vector<std::size_t> offsets) {
  switch (f) {
    case MemberAgg::kAttention: {
      const Var w = ad::segment_softmax(ad::matmul(rows, score_vec), offsets);
      return ad::segment_sum(ad::scale_rows(rows, w), std::move(offsets));
    }
    case MemberAgg::kAverage: return ad::segment_mean(rows, std::move(offsets));
    case MemberAgg::kSum: return ad::segment_sum(rows, std::move(offsets));
    case MemberAgg::kMaxPool: return ad::segment_max(rows, std::move(offsets));
  }
  throw Error("unknown member aggregation");
}

Tensor aggregate_members(const std::vector<Tensor>& members, MemberAgg f, const Tensor& score_vec) {
  if (members.empty()) throw Error("group without members");
  const std::size_t d = members.front().cols;
  Tensor rows(members.size(), d);
  for (std::size_t m = 0; m < members.size(); ++m) {
    if (members[m].rows != 1 || members[m].cols != d) throw ShapeError("aggregate_members: ragged member rows");
    std::copy(members[m].data.begin(), members[m].data.end(), rows.row_span(m).begin());
  }
  ad::Tape tape;
  const Var out = aggregate_rows(f, tape.constant(score_vec), tape.constant(rows), {0, members.size()});
  return tape.value(out);
}

Var fuse_rows(std::span<const Var> channels, std::span<const Var> W, const Tensor& presence, Var fallback,
              Tensor* weights) {
  if (channels.empty() || channels.size() != W.size() || presence.cols != channels.size()) {
    throw ShapeError("fuse_rows: channel / weight / presence mismatch");
  }
  ad::Tape& tape = *fallback.tape;
  std::vector<Var> logits;
  for (std::size_t c = 0; c < channels.size(); ++c) logits.push_back(ad::row_sum(ad::matmul(channels[c], W[c])));
  const Var a = ad::softmax(ad::concat_cols(logits), presence);
  Var out = ad::scale_rows(channels[0], ad::slice_cols(a, 0, 1));
  for (std::size_t c = 1; c < channels.size(); ++c)
    out = ad::add(out, ad::scale_rows(channels[c], ad::slice_cols(a, c, c + 1)));
  std::vector<double> none(presence.rows, 0.0);
  bool any_none = false;
  for (std::size_t r = 0; r < presence.rows; ++r) {
    const auto row = presence.row_span(r);
    if (std::all_of(row.begin(), row.end(), [](double v) { return v == 0.0; })) {
      none[r] = 1.0;
      any_none = true;
    }
  }
  if (any_none) out = ad::add(out, ad::scale_rows(fallback, tape.constant(column(none))));
  if (weights != nullptr) *weights = tape.value(a);
  return out;
}

Tensor fuse_channels(ChannelEmbeddings& ch, const std::vector<Tensor>& W) {
  if (ch.h.size() != W.size() || ch.h.empty()) throw ShapeError("fuse_channels: channel / weight count mismatch");
  const auto first = std::find_if(ch.h.begin(), ch.h.end(), [](const auto& h) { return h.has_value(); });
  if (first == ch.h.end()) throw Error("fuse_channels: all channels absent");
  const std::size_t d = (*first)->cols;
  ad::Tape tape;
  std::vector<Var> chans, ws;
  Tensor presence(1, ch.h.size());
  for (std::size_t c = 0; c < ch.h.size(); ++c) {
    presence(0, c) = ch.h[c].has_value() ? 1.0 : 0.0;
    chans.push_back(tape.constant(ch.h[c].value_or(Tensor(1, d))));
    ws.push_back(tape.constant(W[c]));
  }
  Tensor a;
  const Var out = fuse_rows(chans, ws, presence, tape.constant(Tensor(1, d)), &a);
  ch.a = a.data;
  return tape.value(out);
}

double score(std::span<const double> left, std::span<const double> right) {
  if (left.size() != right.size()) throw ShapeError("score: dimension mismatch");
  return dot(left, right);
}

std::size_t Plan::edge_count() const {
  std::size_t n = 0;
  for (const auto& c : children) n += c.size();
  return n;
}

std::vector<double> Plan::root_presence() const {
  std::vector<double> out;
  if (nodes.empty()) return out;
  out.resize(nodes[0].size(), 0.0);
  if (offsets.empty()) return out;
  for (std::size_t p = 0; p < out.size(); ++p) out[p] = offsets[0][p + 1] > offsets[0][p] ? 1.0 : 0.0;
  return out;
}

Plan plan_from_episodes(std::span<const Episode* const> episodes, Relation relation) {
  Plan plan;
  plan.relation = relation;
  if (episodes.empty()) return plan;
  const Kind target_kind = episodes.front()->target.kind;
  const std::size_t depth = episodes.front()->sample(relation).layers.size() - 1;
  plan.nodes.resize(depth + 1);
  plan.offsets.assign(depth, std::vector<std::size_t>{0});
  plan.children.resize(depth);
  for (std::size_t l = 0; l <= depth; ++l) {
    const HopSample probe{relation, {}, {}, {}};
    plan.kinds.push_back(probe.layer_kind(target_kind, l));
  }
  for (const Episode* ep : episodes) {
    if (ep->target.kind != target_kind) throw Error("plan_from_episodes: mixed target kinds");
    const HopSample& h = ep->sample(relation);
    if (h.layers.size() != depth + 1) throw Error("plan_from_episodes: mixed depths");
    for (std::size_t l = 0; l < depth; ++l) {
      const int base = static_cast<int>(plan.nodes[l + 1].size());
      const std::size_t child_base = plan.children[l].size();
      for (int c : h.children[l]) plan.children[l].push_back(c + base);
      for (std::size_t p = 1; p < h.child_offsets[l].size(); ++p) plan.offsets[l].push_back(h.child_offsets[l][p] + child_base);
    }
    for (std::size_t l = 0; l <= depth; ++l) plan.nodes[l].insert(plan.nodes[l].end(), h.layers[l].begin(), h.layers[l].end());
  }
  return plan;
}

std::vector<Var> propagate_plan(const ModelVars& mv, const EnhancerVars* enhancer, const Plan& plan) {
  const std::size_t D = plan.depth();
  std::vector<Var> vals(D + 1);
  std::optional<ProjectedTables> pt;
  if (enhancer != nullptr && D > 0) pt = project_tables(*enhancer, mv.E);
  vals[D] = ad::gather_rows(mv.E[kind_slot(plan.kinds[D])], plan.nodes[D]);
  for (std::size_t j = D; j-- > 0;) {
    const Var nbar = ad::segment_mean(ad::gather_rows(vals[j + 1], plan.children[j]), plan.offsets[j]);
    const Var self = ad::gather_rows(mv.E[kind_slot(plan.kinds[j])], plan.nodes[j]);
    std::optional<Var> meta;
    if (enhancer != nullptr) {
      std::vector<int> child_ids(plan.children[j].size());
      for (std::size_t e = 0; e < child_ids.size(); ++e)
        child_ids[e] = plan.nodes[j + 1][static_cast<std::size_t>(plan.children[j][e])];
      meta = meta_from_ids(*enhancer, *pt, plan.kinds[j + 1], child_ids, plan.offsets[j]);
    }
    std::vector<double> has_child(plan.nodes[j].size());
    for (std::size_t p = 0; p < has_child.size(); ++p)
      has_child[p] = plan.offsets[j][p + 1] > plan.offsets[j][p] ? 1.0 : 0.0;
    vals[j] = conv_rows(mv, plan.relation, static_cast<int>(D - j), self, nbar, meta, has_child);
  }
  return vals;
}

Tensor propagate(const ModelParams& p, const Episode& ep, Relation r) {
  ad::Tape tape;
  const ModelVars mv = bind(tape, p, false);
  const Episode* one[1] = {&ep};
  return tape.value(propagate_plan(mv, nullptr, plan_from_episodes(one, r))[0]);
}

EpisodeOutput forward_episodes(const ModelVars& mv, const EnhancerVars* enhancer,
                               std::span<const Episode* const> episodes) {
  if (episodes.empty()) throw Error("forward_episodes: no episodes");
  const Kind kind = episodes.front()->target.kind;
  EpisodeOutput out;
  std::array<Plan, 5> plans;
  std::array<std::vector<Var>, 5> vals;
  for (Relation r : relations_for(kind)) {
    plans[relation_slot(r)] = plan_from_episodes(episodes, r);
    vals[relation_slot(r)] = propagate_plan(mv, enhancer, plans[relation_slot(r)]);
    out.edge_count += plans[relation_slot(r)].edge_count();
  }
  if (kind == Kind::kItem) {
    out.fused = vals[relation_slot(Relation::kUI)][0];
    return out;
  }
  const auto chans = channels_for(kind);
  std::vector<Var> h, W;
  Tensor presence(episodes.size(), chans.size());
  for (std::size_t c = 0; c < chans.size(); ++c) {
    const Relation r = channel_relation(chans[c]);
    const Plan& plan = plans[relation_slot(r)];
    if (chans[c] == Channel::kGUPrime) {
      if (plan.depth() < 1) throw Error("forward_episodes: group episodes need at least one hop");
      h.push_back(aggregate_rows(mv.params->config.f_agg, mv.agg, ad::gather_rows(vals[relation_slot(r)][1], plan.children[0]),
                                 plan.offsets[0]));
    } else {
      h.push_back(vals[relation_slot(r)][0]);
    }
    W.push_back(mv.W[ch_slot(chans[c])]);
    const auto pres = plan.root_presence();
    for (std::size_t i = 0; i < pres.size(); ++i) presence(i, c) = pres[i];
  }
  std::vector<int> targets;
  for (const Episode* ep : episodes) targets.push_back(ep->target.index);
  out.fused = fuse_rows(h, W, presence, ad::gather_rows(mv.E[kind_slot(kind)], std::move(targets)));
  return out;
}

namespace {

// Up to K neighbours per segment, without replacement.
void subsample_segments(const std::vector<std::size_t>& offsets, const std::vector<int>& indices, int K,
                        std::uint64_t seed, std::vector<int>& ids, std::vector<std::size_t>& out_offsets) {
  const auto k = static_cast<std::size_t>(K);
  std::mt19937_64 rng(seed);
  std::vector<int> pool;
  out_offsets.assign(1, 0);
  ids.clear();
  for (std::size_t v = 0; v + 1 < offsets.size(); ++v) {
    const std::size_t n = offsets[v + 1] - offsets[v];
    if (n <= k) {
      ids.insert(ids.end(), indices.begin() + static_cast<std::ptrdiff_t>(offsets[v]),
                 indices.begin() + static_cast<std::ptrdiff_t>(offsets[v + 1]));
    } else {
      pool.assign(indices.begin() + static_cast<std::ptrdiff_t>(offsets[v]),
                  indices.begin() + static_cast<std::ptrdiff_t>(offsets[v + 1]));
      for (std::size_t j = 0; j < k; ++j) {
        std::uniform_int_distribution<std::size_t> pick(j, n - 1);
        std::swap(pool[j], pool[pick(rng)]);
        ids.push_back(pool[j]);
      }
    }
    out_offsets.push_back(ids.size());
  }
}

}  // namespace

FullOutput forward_full(const ModelVars& mv, const EnhancerVars* enhancer, const InteractionGraph& g, bool keep_depths,
                        MetaSampling sampling) {
  const int L = mv.L();
  FullOutput out;
  struct Side {
    Kind kind, other;
    std::vector<std::size_t> offsets;
    std::vector<int> indices;
    std::vector<double> has_child;
    Var s_prime;         // self rows after meta injection; the same at every layer
    std::vector<Var> H;  // H[t], t = 0..L
  };
  std::optional<ProjectedTables> pt;
  if (enhancer != nullptr) pt = project_tables(*enhancer, mv.E);
  // Per relation: side 0 = first kind, side 1 = second kind (absent for UU/GG).
  std::array<std::vector<Side>, 5> sides;
  for (Relation r : kAllRelations) {
    const auto [ka, kb] = relation_kinds(r);
    const bool homo = ka == kb;
    for (int s = 0; s < (homo ? 1 : 2); ++s) {
      Side side;
      side.kind = s == 0 ? ka : kb;
      side.other = s == 0 ? kb : ka;
      const auto off = g.csr_offsets(r, side.kind);
      const auto idx = g.csr_indices(r, side.kind);
      side.offsets.assign(off.begin(), off.end());
      side.indices.assign(idx.begin(), idx.end());
      side.has_child.resize(side.offsets.size() - 1);
      for (std::size_t v = 0; v < side.has_child.size(); ++v)
        side.has_child[v] = side.offsets[v + 1] > side.offsets[v] ? 1.0 : 0.0;
      std::optional<Var> meta;
      if (enhancer != nullptr && sampling.K > 0) {
        std::vector<int> ids;
        std::vector<std::size_t> off2;
        subsample_segments(side.offsets, side.indices, sampling.K,
                           mix_seed(sampling.seed, relation_slot(r) + 1, static_cast<std::uint64_t>(s)), ids, off2);
        meta = meta_from_ids(*enhancer, *pt, side.other, ids, std::move(off2));
      } else if (enhancer != nullptr) {
        meta = meta_from_ids(*enhancer, *pt, side.other, side.indices, side.offsets);
      }
      side.s_prime = inject_meta(mv, r, mv.E[kind_slot(side.kind)], meta);
      side.H.push_back(mv.E[kind_slot(side.kind)]);
      sides[relation_slot(r)].push_back(std::move(side));
    }
  }
  // Sides whose depth-L value nobody reads.
  auto final_unused = [&](Relation r, Kind k) {
    return !keep_depths && ((r == Relation::kGI && k == Kind::kItem) || (r == Relation::kGU && k == Kind::kUser));
  };
  for (int t = 1; t <= L; ++t) {
    for (Relation r : kAllRelations) {
      auto& rs = sides[relation_slot(r)];
      std::vector<Var> next;
      for (std::size_t s = 0; s < rs.size(); ++s) {
        Side& side = rs[s];
        const Side& src = rs.size() == 1 ? rs[0] : rs[1 - s];
        if (t == L && final_unused(r, side.kind)) {
          next.push_back(Var{});
          continue;
        }
        const Var nbar = ad::segment_mean(ad::gather_rows(src.H[static_cast<std::size_t>(t - 1)], side.indices), side.offsets);
        next.push_back(conv_injected(mv, t, mv.E[kind_slot(side.kind)], side.s_prime, nbar, side.has_child));
        out.edge_count += side.indices.size();
      }
      for (std::size_t s = 0; s < rs.size(); ++s) rs[s].H.push_back(next[s]);
    }
  }

  auto side_of = [&](Relation r, Kind k) -> Side& {
    for (Side& s : sides[relation_slot(r)])
      if (s.kind == k) return s;
    throw Error("forward_full: missing side");
  };
  auto fused_at = [&](std::size_t t) {
    std::array<Var, 3> f;
    if (t == 0) {
      f = mv.E;
      return f;
    }
    f[kind_slot(Kind::kItem)] = side_of(Relation::kUI, Kind::kItem).H[t];
    for (Kind kind : {Kind::kUser, Kind::kGroup}) {
      const auto chans = channels_for(kind);
      std::vector<Var> h, W;
      Tensor presence(static_cast<std::size_t>(g.count(kind)), chans.size());
      for (std::size_t c = 0; c < chans.size(); ++c) {
        const Relation r = channel_relation(chans[c]);
        Side& side = side_of(r, kind);
        if (chans[c] == Channel::kGUPrime) {
          const Side& users = side_of(Relation::kGU, Kind::kUser);
          h.push_back(aggregate_rows(mv.params->config.f_agg, mv.agg, ad::gather_rows(users.H[t - 1], side.indices),
                                     side.offsets));
        } else {
          h.push_back(side.H[t]);
        }
        W.push_back(mv.W[ch_slot(chans[c])]);
        for (std::size_t v = 0; v < side.has_child.size(); ++v) presence(v, c) = side.has_child[v];
      }
      f[kind_slot(kind)] = fuse_rows(h, W, presence, mv.E[kind_slot(kind)]);
    }
    return f;
  };
  out.fused = fused_at(static_cast<std::size_t>(L));
  if (keep_depths) {
    for (int t = 0; t <= L; ++t) out.depth_fused.push_back(t == L ? out.fused : fused_at(static_cast<std::size_t>(t)));
  }
  return out;
}

std::array<Tensor, 3> infer_full(const ModelParams& p, const InteractionGraph& g, const EnhancerParams* enhancer,
                                 MetaSampling meta) {
  ad::Tape tape;
  const ModelVars mv = bind(tape, p, false);
  std::optional<EnhancerVars> ev;
  if (enhancer != nullptr) ev = bind(tape, *enhancer, false);
  const FullOutput f = forward_full(mv, ev ? &*ev : nullptr, g, false, meta);
  std::array<Tensor, 3> out;
  for (std::size_t k = 0; k < 3; ++k) out[k] = tape.value(f.fused[k]);
  return out;
}

}  // namespace coldgraph
