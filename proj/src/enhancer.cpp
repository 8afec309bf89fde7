#include "coldgraph/enhancer.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "coldgraph/error.hpp"
#include "coldgraph/optim.hpp"

namespace coldgraph {

using ad::Var;

namespace {

void xavier(Tensor& t, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(t.rows + t.cols));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (double& v : t.data) v = u(rng);
}

template <typename Self>
auto named_impl(Self& p) {
  using Ptr = std::conditional_t<std::is_const_v<Self>, const Tensor*, Tensor*>;
  std::vector<std::pair<std::string, Ptr>> out{{"Wq", &p.Wq}, {"Wk", &p.Wk}, {"Wv", &p.Wv}};
  for (std::size_t c = 0; c < kChannelCount; ++c)
    out.emplace_back(std::string("W/") + channel_name(static_cast<Channel>(c)), &p.W[c]);
  out.emplace_back("agg", &p.agg);
  return out;
}

Tensor stack_rows(const std::vector<Tensor>& rows, std::size_t d) {
  Tensor out(rows.size(), d);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].rows != 1 || rows[r].cols != d) throw ShapeError("expected 1x" + std::to_string(d) + " rows");
    std::copy(rows[r].data.begin(), rows[r].data.end(), out.row_span(r).begin());
  }
  return out;
}

Tensor row_of(const Tensor& t, std::size_t r) {
  const auto s = t.row_span(r);
  return Tensor(1, t.cols, std::vector<double>(s.begin(), s.end()));
}

}  // namespace

std::vector<std::pair<std::string, Tensor*>> EnhancerParams::named() { return named_impl(*this); }
std::vector<std::pair<std::string, const Tensor*>> EnhancerParams::named() const { return named_impl(*this); }

EnhancerParams init_enhancer(int d, std::uint64_t seed) {
  if (d < 1) throw Error("enhancer: d must be >= 1");
  const auto n = static_cast<std::size_t>(d);
  EnhancerParams p;
  p.d = d;
  std::mt19937_64 rng(seed);
  for (Tensor* t : {&p.Wq, &p.Wk, &p.Wv}) {
    *t = Tensor(n, n);
    xavier(*t, rng);
  }
  for (Tensor& w : p.W) {
    w = Tensor(n, n);
    xavier(w, rng);
  }
  p.agg = Tensor(n, 1);
  xavier(p.agg, rng);
  return p;
}

std::vector<Var> EnhancerVars::all() const {
  std::vector<Var> out{Wq, Wk, Wv};
  out.insert(out.end(), W.begin(), W.end());
  out.push_back(agg);
  return out;
}

EnhancerVars bind(ad::Tape& tape, const EnhancerParams& p, bool requires_grad) {
  EnhancerVars ev;
  ev.params = &p;
  ev.Wq = tape.leaf(p.Wq, requires_grad);
  ev.Wk = tape.leaf(p.Wk, requires_grad);
  ev.Wv = tape.leaf(p.Wv, requires_grad);
  for (std::size_t c = 0; c < kChannelCount; ++c) ev.W[c] = tape.leaf(p.W[c], requires_grad);
  ev.agg = tape.leaf(p.agg, requires_grad);
  return ev;
}

Var smooth_rows(const EnhancerVars& ev, Var rows, std::vector<std::size_t> offsets) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(ev.params->d));
  return ad::segment_attention(ad::matmul(rows, ev.Wq), ad::matmul(rows, ev.Wk), ad::matmul(rows, ev.Wv),
                               std::move(offsets), scale);
}

Var meta_rows(const EnhancerVars& ev, Var rows, std::vector<std::size_t> offsets) {
  return ad::segment_mean(smooth_rows(ev, rows, offsets), offsets);
}

ProjectedTables project_tables(const EnhancerVars& ev, const std::array<Var, 3>& E) {
  ProjectedTables pt;
  for (std::size_t k = 0; k < 3; ++k) {
    pt.q[k] = ad::matmul(E[k], ev.Wq);
    pt.k[k] = ad::matmul(E[k], ev.Wk);
    pt.v[k] = ad::matmul(E[k], ev.Wv);
  }
  return pt;
}

Var meta_from_ids(const EnhancerVars& ev, const ProjectedTables& pt, Kind kind, const std::vector<int>& ids,
                  std::vector<std::size_t> offsets) {
  const std::size_t s = kind_slot(kind);
  const double scale = 1.0 / std::sqrt(static_cast<double>(ev.params->d));
  const Var att = ad::segment_attention(ad::gather_rows(pt.q[s], ids), ad::gather_rows(pt.k[s], ids),
                                        ad::gather_rows(pt.v[s], ids), offsets, scale);
  return ad::segment_mean(att, std::move(offsets));
}

std::vector<Tensor> self_attention(const std::vector<Tensor>& neighbors, const EnhancerParams& p) {
  if (neighbors.empty()) throw Error("self_attention: empty input");
  ad::Tape tape;
  const EnhancerVars ev = bind(tape, p, false);
  const Tensor& out =
      tape.value(smooth_rows(ev, tape.constant(stack_rows(neighbors, static_cast<std::size_t>(p.d))), {0, neighbors.size()}));
  std::vector<Tensor> rows;
  for (std::size_t r = 0; r < out.rows; ++r) rows.push_back(row_of(out, r));
  return rows;
}

MetaEmbedding meta_embed(Kind kind, const std::vector<std::pair<Relation, std::vector<Tensor>>>& first_order,
                         const EnhancerParams& p, MemberAgg f_agg) {
  const auto d = static_cast<std::size_t>(p.d);
  ad::Tape tape;
  const EnhancerVars ev = bind(tape, p, false);
  MetaEmbedding out;
  std::array<std::optional<Var>, 5> smoothed;
  for (const auto& [r, rows] : first_order) {
    const auto allowed = relations_for(kind);
    if (std::find(allowed.begin(), allowed.end(), r) == allowed.end()) {
      throw Error(std::string("meta_embed: relation ") + relation_name(r) + " is not used for " + kind_name(kind) + " targets");
    }
    if (rows.empty()) continue;
    smoothed[relation_slot(r)] = smooth_rows(ev, tape.constant(stack_rows(rows, d)), {0, rows.size()});
    out.per_relation.emplace_back(r, tape.value(ad::mean_rows(*smoothed[relation_slot(r)])));
  }
  if (out.per_relation.empty()) throw Error("meta_embed: all relations empty");
  auto relation_mean = [&](Relation r) -> std::optional<Tensor> {
    for (const auto& [rr, h] : out.per_relation)
      if (rr == r) return h;
    return std::nullopt;
  };
  if (kind == Kind::kItem) {
    out.fused = *relation_mean(Relation::kUI);
    return out;
  }
  ChannelEmbeddings ch;
  std::vector<Tensor> W;
  for (Channel c : channels_for(kind)) {
    if (c == Channel::kGUPrime) {
      const auto& s = smoothed[relation_slot(Relation::kGU)];
      if (s) {
        const std::size_t m = tape.value(*s).rows;
        ch.h.push_back(tape.value(aggregate_rows(f_agg, ev.agg, *s, {0, m})));
      } else {
        ch.h.push_back(std::nullopt);
      }
    } else {
      ch.h.push_back(relation_mean(channel_relation(c)));
    }
    W.push_back(p.W[static_cast<std::size_t>(c)]);
  }
  out.fused = fuse_channels(ch, W);
  out.weights = ch.a;
  return out;
}

Var predict_enhancer(const EnhancerVars& ev, const std::array<Var, 3>& E, MemberAgg f_agg,
                     std::span<const Episode* const> episodes) {
  if (episodes.empty()) throw Error("predict_enhancer: no episodes");
  const Kind kind = episodes.front()->target.kind;
  std::array<Var, 5> hr, smoothed;
  std::array<std::vector<double>, 5> presence;
  std::array<std::vector<std::size_t>, 5> offsets;
  for (Relation r : relations_for(kind)) {
    const Plan plan = plan_from_episodes(episodes, r);
    if (plan.depth() < 1) throw Error("predict_enhancer: episodes need at least one hop");
    std::vector<int> ids(plan.children[0].size());
    for (std::size_t e = 0; e < ids.size(); ++e) ids[e] = plan.nodes[1][static_cast<std::size_t>(plan.children[0][e])];
    const std::size_t s = relation_slot(r);
    smoothed[s] = smooth_rows(ev, ad::gather_rows(E[kind_slot(plan.kinds[1])], std::move(ids)), plan.offsets[0]);
    hr[s] = ad::segment_mean(smoothed[s], plan.offsets[0]);
    presence[s] = plan.root_presence();
    offsets[s] = plan.offsets[0];
  }
  std::vector<int> targets;
  for (const Episode* ep : episodes) targets.push_back(ep->target.index);
  const Var fallback = ad::gather_rows(E[kind_slot(kind)], std::move(targets));

  std::vector<Var> h, W;
  std::vector<Relation> rel;
  if (kind == Kind::kItem) {
    h.push_back(hr[relation_slot(Relation::kUI)]);
    W.push_back(ev.W[static_cast<std::size_t>(Channel::kUI)]);
    rel.push_back(Relation::kUI);
  } else {
    for (Channel c : channels_for(kind)) {
      const Relation r = channel_relation(c);
      const std::size_t s = relation_slot(r);
      h.push_back(c == Channel::kGUPrime ? aggregate_rows(f_agg, ev.agg, smoothed[s], offsets[s]) : hr[s]);
      W.push_back(ev.W[static_cast<std::size_t>(c)]);
      rel.push_back(r);
    }
  }
  Tensor pres(episodes.size(), h.size());
  for (std::size_t c = 0; c < h.size(); ++c)
    for (std::size_t i = 0; i < episodes.size(); ++i) pres(i, c) = presence[relation_slot(rel[c])][i];
  return fuse_rows(h, W, pres, fallback);
}

namespace {

bool has_first_order(const InteractionGraph& g, NodeId n) {
  for (Relation r : relations_for(n.kind))
    if (g.degree(r, n) > 0) return true;
  return false;
}

// Targets bucketed by kind, in a fixed kind order.
std::array<std::vector<NodeId>, 3> by_kind(const InteractionGraph& g, const std::vector<NodeId>& targets,
                                           const GroundTruthTable& gt) {
  std::array<std::vector<NodeId>, 3> out;
  for (NodeId n : targets) {
    if (!gt.has(n)) throw Error(std::string("target ") + kind_name(n.kind) + " " + std::to_string(n.index) + " missing from ground-truth table");
    if (has_first_order(g, n)) out[kind_slot(n.kind)].push_back(n);
  }
  return out;
}

Tensor gt_rows(const GroundTruthTable& gt, const std::vector<NodeId>& nodes) {
  Tensor out(nodes.size(), static_cast<std::size_t>(gt.d()));
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const auto r = gt.row(nodes[i]);
    std::copy(r.begin(), r.end(), out.row_span(i).begin());
  }
  return out;
}

}  // namespace

EnhancerHistory train_enhancer(EnhancerParams& p, const std::array<Tensor, 3>& E, const InteractionGraph& g,
                               const std::vector<NodeId>& targets, const GroundTruthTable& gt,
                               const EnhancerTrainConfig& cfg) {
  if (cfg.batch < 1) throw Error("train_enhancer: batch must be >= 1");
  auto buckets = by_kind(g, targets, gt);
  std::vector<Tensor*> params;
  for (auto& [_, t] : p.named()) params.push_back(t);
  Adam adam(AdamConfig{cfg.lr}, params);
  std::mt19937_64 order_rng(mix_seed(cfg.seed, 0xE5));
  EnhancerHistory hist;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const std::uint64_t ep_seed = mix_seed(cfg.seed, 0xE6, static_cast<std::uint64_t>(epoch));
    double loss_sum = 0.0;
    std::size_t count = 0;
    for (auto& bucket : buckets) {
      std::shuffle(bucket.begin(), bucket.end(), order_rng);
      for (std::size_t b = 0; b < bucket.size(); b += static_cast<std::size_t>(cfg.batch)) {
        const std::vector<NodeId> batch(bucket.begin() + static_cast<std::ptrdiff_t>(b),
                                        bucket.begin() + static_cast<std::ptrdiff_t>(std::min(bucket.size(), b + static_cast<std::size_t>(cfg.batch))));
        std::vector<Episode> eps;
        for (NodeId n : batch) eps.push_back(sample_episode(g, n, cfg.K, 1, ep_seed));
        std::vector<const Episode*> ptrs;
        for (const Episode& e : eps) ptrs.push_back(&e);

        ad::Tape tape;
        const EnhancerVars ev = bind(tape, p, true);
        const std::array<Var, 3> Ev = {tape.constant(E[0]), tape.constant(E[1]), tape.constant(E[2])};
        const Var pred = predict_enhancer(ev, Ev, cfg.f_agg, ptrs);
        const Var cos = ad::cosine_similarity(pred, tape.constant(gt_rows(gt, batch)));
        const Var loss = ad::add(tape.constant(Tensor::scalar(1.0)), ad::negate(ad::mean(cos)));
        const double lv = tape.value(loss).item();
        if (!std::isfinite(lv)) throw Error("train_enhancer: non-finite loss");
        loss_sum += lv * static_cast<double>(batch.size());
        count += batch.size();
        const ad::Gradients grads = tape.backward(loss);
        std::vector<const Tensor*> gs;
        for (Var v : ev.all()) gs.push_back(&grads.of(v));
        adam.step(gs);
      }
    }
    hist.loss.push_back(count > 0 ? loss_sum / static_cast<double>(count) : 0.0);
  }
  hist.mean_cosine = enhancer_mean_cosine(p, E, g, targets, gt, cfg.K, cfg.f_agg, mix_seed(cfg.seed, 0xE7));
  return hist;
}

double enhancer_mean_cosine(const EnhancerParams& p, const std::array<Tensor, 3>& E, const InteractionGraph& g,
                            const std::vector<NodeId>& targets, const GroundTruthTable& gt, int K, MemberAgg f_agg,
                            std::uint64_t seed) {
  const auto buckets = by_kind(g, targets, gt);
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& bucket : buckets) {
    if (bucket.empty()) continue;
    std::vector<Episode> eps;
    for (NodeId n : bucket) eps.push_back(sample_episode(g, n, K, 1, seed));
    std::vector<const Episode*> ptrs;
    for (const Episode& e : eps) ptrs.push_back(&e);
    ad::Tape tape;
    const EnhancerVars ev = bind(tape, p, false);
    const std::array<Var, 3> Ev = {tape.constant(E[0]), tape.constant(E[1]), tape.constant(E[2])};
    const Tensor& cos = tape.value(ad::cosine_similarity(predict_enhancer(ev, Ev, f_agg, ptrs), tape.constant(gt_rows(gt, bucket))));
    for (double c : cos.data) total += c;
    count += cos.data.size();
  }
  return count > 0 ? total / static_cast<double>(count) : 0.0;
}

}  // namespace coldgraph
