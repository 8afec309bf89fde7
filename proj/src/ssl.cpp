#include "coldgraph/ssl.hpp"

#include <cmath>

#include "coldgraph/error.hpp"

namespace coldgraph {

using ad::Var;

bool GroundTruthTable::has(NodeId n) const {
  const auto& c = covered[kind_slot(n.kind)];
  return n.index >= 0 && static_cast<std::size_t>(n.index) < c.size() && c[static_cast<std::size_t>(n.index)];
}

std::span<const double> GroundTruthTable::row(NodeId n) const {
  if (!has(n)) {
    throw Error(std::string("no ground truth for ") + kind_name(n.kind) + " " + std::to_string(n.index));
  }
  return table[kind_slot(n.kind)].row_span(static_cast<std::size_t>(n.index));
}

GroundTruthTable ground_truth_from(const ModelParams& p, const InteractionGraph& g,
                                   const std::array<std::vector<bool>, 3>& covered, const std::string& provenance) {
  ad::Tape tape;
  const ModelVars mv = bind(tape, p, false);
  const FullOutput out = forward_full(mv, nullptr, g, true);
  GroundTruthTable gt;
  gt.provenance = provenance;
  gt.covered = covered;
  for (Kind k : kAllKinds) {
    const std::size_t s = kind_slot(k);
    Tensor sum = tape.value(mv.E[s]);
    for (std::size_t t = 1; t < out.depth_fused.size(); ++t) {
      const Tensor& h = tape.value(out.depth_fused[t][s]);
      for (std::size_t i = 0; i < sum.data.size(); ++i) sum.data[i] += h.data[i];
    }
    if (covered[s].size() != sum.rows) throw ShapeError("ground truth coverage size mismatch");
    for (std::size_t v = 0; v < sum.rows; ++v) {
      if (!covered[s][v]) continue;
      double norm = 0.0;
      for (double x : sum.row_span(v)) norm += x * x;
      if (!std::isfinite(norm) || norm == 0.0) {
        throw Error(std::string("degenerate ground truth for ") + kind_name(k) + " " + std::to_string(v));
      }
    }
    gt.table[s] = std::move(sum);
  }
  return gt;
}

TeacherResult train_teacher(const InteractionGraph& g, const EvalSplit& split, const TrainConfig& cfg) {
  const InteractionGraph wg = warm_graph(g, split, cfg.c_u, cfg.c_g);
  if (wg.edges(Relation::kGI).empty() && wg.edges(Relation::kUI).empty()) {
    throw Error("warm set too small to form BPR pairs");
  }
  TrainConfig tc = cfg;
  tc.epochs = cfg.teacher_epochs;
  tc.enhancer = false;
  tc.lambda1 = 0.0;
  tc.eval_every = 0;
  TrainResult r = train_base(tc, wg);
  const std::string prov = std::string("teacher backbone=") + backbone_name(tc.backbone) + " L=" +
                           std::to_string(tc.L) + " d=" + std::to_string(tc.d) + " rule=layer-sum";
  GroundTruthTable gt = ground_truth_from(r.model, wg, split.warm, prov);
  r.history.variant = "teacher";
  return {std::move(r.model), std::move(gt), std::move(r.history)};
}

double reconstruction_loss(const Tensor& predicted, const Tensor& target) {
  if (!predicted.same_shape(target)) throw ShapeError("reconstruction_loss: shape mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < predicted.data.size(); ++i) {
    dot += predicted.data[i] * target.data[i];
    na += predicted.data[i] * predicted.data[i];
    nb += target.data[i] * target.data[i];
  }
  if (na == 0.0 || nb == 0.0) throw Error("degenerate norm");
  return 1.0 - dot / std::sqrt(na * nb);
}

Var reconstruction_loss(Var predicted, const Tensor& target) {
  ad::Tape& tape = *predicted.tape;
  const Var cos = ad::cosine_similarity(predicted, tape.constant(target));
  return ad::add(tape.constant(Tensor::scalar(1.0)), ad::negate(ad::mean(cos)));
}

namespace {

Tensor gt_batch(const GroundTruthTable& gt, std::span<const NodeId> nodes) {
  Tensor t(nodes.size(), static_cast<std::size_t>(gt.d()));
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const auto row = gt.row(nodes[i]);
    std::copy(row.begin(), row.end(), t.row_span(i).begin());
  }
  return t;
}

}  // namespace

SslLoss ssl_loss(std::span<const Episode* const> group_batch, std::span<const Episode* const> user_batch,
                 std::span<const Episode* const> item_batch, const ModelVars& mv, const EnhancerVars* enhancer,
                 const GroundTruthTable& gt) {
  ad::Tape& tape = *mv.E[0].tape;
  SslLoss out;
  out.total = tape.constant(Tensor::scalar(0.0));
  const std::array<std::pair<Kind, std::span<const Episode* const>>, 3> batches = {
      std::pair{Kind::kGroup, group_batch}, std::pair{Kind::kUser, user_batch}, std::pair{Kind::kItem, item_batch}};
  for (const auto& [kind, batch] : batches) {
    if (batch.empty()) {
      out.empty_kinds.push_back(kind);
      continue;
    }
    std::vector<NodeId> nodes;
    for (const Episode* e : batch) {
      if (e->target.kind != kind) throw Error("ssl_loss: episode kind does not match its batch");
      nodes.push_back(e->target);
    }
    const EpisodeOutput eo = forward_episodes(mv, enhancer, batch);
    const Var term = reconstruction_loss(eo.fused, gt_batch(gt, nodes));
    out.parts[kind_slot(kind)] = tape.value(term).item();
    out.edge_count += eo.edge_count;
    out.total = ad::add(out.total, term);
  }
  return out;
}

SslLoss ssl_loss_full(const std::array<Var, 3>& embeddings, std::span<const NodeId> targets,
                      const GroundTruthTable& gt) {
  ad::Tape& tape = *embeddings[0].tape;
  SslLoss out;
  out.total = tape.constant(Tensor::scalar(0.0));
  for (Kind kind : {Kind::kGroup, Kind::kUser, Kind::kItem}) {
    std::vector<NodeId> nodes;
    std::vector<int> idx;
    for (NodeId n : targets) {
      if (n.kind != kind) continue;
      nodes.push_back(n);
      idx.push_back(n.index);
    }
    if (nodes.empty()) {
      out.empty_kinds.push_back(kind);
      continue;
    }
    const Var term = reconstruction_loss(ad::gather_rows(embeddings[kind_slot(kind)], idx), gt_batch(gt, nodes));
    out.parts[kind_slot(kind)] = tape.value(term).item();
    out.total = ad::add(out.total, term);
  }
  return out;
}

}  // namespace coldgraph
