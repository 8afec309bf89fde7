#include "coldgraph/train.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

#include "coldgraph/error.hpp"
#include "coldgraph/optim.hpp"
#include "coldgraph/ssl.hpp"

namespace coldgraph {

using ad::Var;

const char* paradigm_name(Paradigm p) { return p == Paradigm::kJoint ? "joint" : "pretrain_finetune"; }
const char* meta_mode_name(MetaMode m) { return m == MetaMode::kEpisodic ? "episodic" : "full_neighborhood"; }

ModelConfig TrainConfig::model_config() const {
  return ModelConfig{d, L, backbone, f_agg, enhancer};
}

std::string TrainConfig::variant() const {
  if (lambda1 == 0.0 && !enhancer) return "base";
  std::string v = paradigm_name(paradigm);
  if (meta_mode == MetaMode::kFullNeighborhood) v += "-M";
  return v;
}

std::string TrainConfig::to_text() const {
  std::string out;
  for (const ConfigKey& k : config_keys()) out += k.name + "=" + k.get(*this) + "\n";
  return out;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw Error("bad value for " + key + ": '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw Error("bad value for " + key + ": '" + v + "' (expected true/false)");
}

std::string fmt_bool(bool b) { return b ? "true" : "false"; }

template <typename T>
ConfigKey number_key(std::string name, std::string help, T TrainConfig::*field) {
  return {name, std::move(help),
          [name, field](TrainConfig& c, const std::string& v) { c.*field = parse_number<T>(name, v); },
          [field](const TrainConfig& c) { return fmt::format("{}", c.*field); }};
}

template <typename T>
ConfigKey synth_key(std::string name, std::string help, T SyntheticSpec::*field) {
  return {name, std::move(help),
          [name, field](TrainConfig& c, const std::string& v) { c.synth.*field = parse_number<T>(name, v); },
          [field](const TrainConfig& c) { return fmt::format("{}", c.synth.*field); }};
}

std::vector<ConfigKey> make_keys() {
  std::vector<ConfigKey> k;
  k.push_back(number_key("d", "embedding dimension", &TrainConfig::d));
  k.push_back(number_key("L", "propagation depth", &TrainConfig::L));
  k.push_back(number_key("K", "neighbours sampled per node and hop", &TrainConfig::K));
  k.push_back(number_key("lr", "Adam learning rate", &TrainConfig::lr));
  k.push_back(number_key("batch_size", "BPR pairs per step", &TrainConfig::batch_size));
  k.push_back(number_key("lambda", "weight of the user BPR term", &TrainConfig::lambda));
  k.push_back(number_key("lambda1", "weight of the reconstruction loss", &TrainConfig::lambda1));
  k.push_back(number_key("lambda2", "L2 regularization weight", &TrainConfig::lambda2));
  k.push_back(number_key("c_u", "shared-item threshold for UU edges", &TrainConfig::c_u));
  k.push_back(number_key("c_g", "shared-item threshold for GG edges", &TrainConfig::c_g));
  k.push_back({"paradigm", "joint | pretrain_finetune",
               [](TrainConfig& c, const std::string& v) {
                 if (v == "joint") c.paradigm = Paradigm::kJoint;
                 else if (v == "pretrain_finetune") c.paradigm = Paradigm::kPretrainFinetune;
                 else throw Error("bad value for paradigm: '" + v + "'");
               },
               [](const TrainConfig& c) { return std::string(paradigm_name(c.paradigm)); }});
  k.push_back({"meta_mode", "episodic | full_neighborhood",
               [](TrainConfig& c, const std::string& v) {
                 if (v == "episodic") c.meta_mode = MetaMode::kEpisodic;
                 else if (v == "full_neighborhood") c.meta_mode = MetaMode::kFullNeighborhood;
                 else throw Error("bad value for meta_mode: '" + v + "'");
               },
               [](const TrainConfig& c) { return std::string(meta_mode_name(c.meta_mode)); }});
  k.push_back({"backbone", "light | gcn",
               [](TrainConfig& c, const std::string& v) { c.backbone = parse_backbone(v); },
               [](const TrainConfig& c) { return std::string(backbone_name(c.backbone)); }});
  k.push_back({"enhancer", "inject meta embeddings (true/false)",
               [](TrainConfig& c, const std::string& v) { c.enhancer = parse_bool("enhancer", v); },
               [](const TrainConfig& c) { return fmt_bool(c.enhancer); }});
  k.push_back(number_key("seed", "master random seed", &TrainConfig::seed));
  k.push_back(number_key("epochs", "training epochs (phase 2 for pretrain_finetune)", &TrainConfig::epochs));
  k.push_back({"f_agg", "member aggregation: attention | average | sum | maxpool",
               [](TrainConfig& c, const std::string& v) { c.f_agg = parse_member_agg(v); },
               [](const TrainConfig& c) { return std::string(member_agg_name(c.f_agg)); }});
  k.push_back(number_key("ssl_batch", "episodes per reconstruction batch", &TrainConfig::ssl_batch));
  k.push_back(number_key("warmup_epochs", "enhancer warm-up epochs", &TrainConfig::warmup_epochs));
  k.push_back(number_key("pretrain_epochs", "reconstruction-only epochs of pretrain_finetune",
                         &TrainConfig::pretrain_epochs));
  k.push_back(number_key("teacher_epochs", "teacher training epochs", &TrainConfig::teacher_epochs));
  k.push_back(number_key("checkpoint_every", "checkpoint period in epochs (0 = end only)",
                         &TrainConfig::checkpoint_every));
  k.push_back(number_key("eval_every", "cold-start evaluation period in epochs (0 = off)", &TrainConfig::eval_every));
  k.push_back(number_key("k", "cutoff for Recall@k and NDCG@k", &TrainConfig::k));
  k.push_back({"eval_users", "also evaluate cold users (true/false)",
               [](TrainConfig& c, const std::string& v) { c.eval_users = parse_bool("eval_users", v); },
               [](const TrainConfig& c) { return fmt_bool(c.eval_users); }});
  k.push_back(number_key("threads", "OpenMP threads (0 = runtime default)", &TrainConfig::threads));
  k.push_back(number_key("n_g", "warm threshold: group interactions", &TrainConfig::n_g));
  k.push_back(number_key("n_u", "warm threshold: user interactions", &TrainConfig::n_u));
  k.push_back(number_key("n_i", "warm threshold: item interactions", &TrainConfig::n_i));
  k.push_back(number_key("c_percent", "fraction of cold interactions kept for training", &TrainConfig::c_percent));
  k.push_back({"data", "directory with user_item.tsv, group_item.tsv, group_user.tsv",
               [](TrainConfig& c, const std::string& v) { c.data = v; },
               [](const TrainConfig& c) { return c.data; }});
  k.push_back(synth_key("synth.users", "synthetic users", &SyntheticSpec::users));
  k.push_back(synth_key("synth.items", "synthetic items", &SyntheticSpec::items));
  k.push_back(synth_key("synth.groups", "synthetic groups", &SyntheticSpec::groups));
  k.push_back(synth_key("synth.clusters", "synthetic taste clusters", &SyntheticSpec::clusters));
  k.push_back(synth_key("synth.p_intra", "interaction probability within a cluster", &SyntheticSpec::p_intra));
  k.push_back(synth_key("synth.p_inter", "interaction probability across clusters", &SyntheticSpec::p_inter));
  k.push_back(synth_key("synth.member_affinity", "chance a member comes from the group's cluster",
                        &SyntheticSpec::member_affinity));
  k.push_back(synth_key("synth.group_size_min", "smallest synthetic group", &SyntheticSpec::group_size_min));
  k.push_back(synth_key("synth.group_size_max", "largest synthetic group", &SyntheticSpec::group_size_max));
  k.push_back(synth_key("synth.activity_spread", "per-node activity spread (>= 1)", &SyntheticSpec::activity_spread));
  k.push_back(synth_key("synth.seed", "synthetic generator seed", &SyntheticSpec::seed));
  return k;
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = make_keys();
  return keys;
}

void apply_override(TrainConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw Error("expected key=value, got '" + assignment + "'");
  const std::string key = trim(assignment.substr(0, eq));
  const std::string value = trim(assignment.substr(eq + 1));
  for (const ConfigKey& k : config_keys()) {
    if (k.name == key) {
      k.set(cfg, value);
      return;
    }
  }
  throw Error("unknown config key '" + key + "'");
}

TrainConfig parse_config_text(const std::string& text, const std::string& origin, TrainConfig base) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    try {
      apply_override(base, line);
    } catch (const ParseError&) {
      throw;
    } catch (const Error& e) {
      throw ParseError(origin, lineno, e.what());
    }
  }
  return base;
}

TrainConfig read_config(const std::filesystem::path& path, TrainConfig base) {
  std::ifstream in(path);
  if (!in) throw MissingInputError("missing config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path.string(), std::move(base));
}

void validate(const TrainConfig& c) {
  auto need = [](bool ok, const char* what) {
    if (!ok) throw Error(std::string("invalid config: ") + what);
  };
  need(c.d >= 1, "d must be >= 1");
  need(c.L >= 0, "L must be >= 0");
  need(c.K >= 1, "K must be >= 1");
  need(c.lr > 0.0, "lr must be > 0");
  need(c.batch_size >= 1, "batch_size must be >= 1");
  need(c.lambda >= 0.0 && c.lambda1 >= 0.0 && c.lambda2 >= 0.0, "lambdas must be >= 0");
  need(c.c_u >= 0 && c.c_g >= 0, "c_u and c_g must be >= 0");
  need(c.epochs >= 0 && c.warmup_epochs >= 0 && c.pretrain_epochs >= 0 && c.teacher_epochs >= 0,
       "epoch counts must be >= 0");
  need(c.ssl_batch >= 1, "ssl_batch must be >= 1");
  need(c.checkpoint_every >= 0 && c.eval_every >= 0, "periods must be >= 0");
  need(c.k >= 1, "k must be >= 1");
  need(c.threads >= 0, "threads must be >= 0");
  need(c.c_percent >= 0.0 && c.c_percent <= 1.0, "c_percent must be in [0, 1]");
}

// Losses ---------------------------------------------------------------------

Var bpr_loss(Var pos, Var neg) {
  return ad::negate(ad::mean(ad::log_sigmoid(ad::add(pos, ad::negate(neg)))));
}

double bpr_loss(const std::vector<double>& pos, const std::vector<double>& neg) {
  if (pos.size() != neg.size()) throw ShapeError("bpr_loss: pos/neg size mismatch");
  if (pos.empty()) throw Error("bpr_loss: empty batch");
  double s = 0.0;
  for (std::size_t i = 0; i < pos.size(); ++i) {
    const double x = pos[i] - neg[i];
    s += x >= 0.0 ? std::log1p(std::exp(-x)) : -x + std::log1p(std::exp(x));
  }
  return s / static_cast<double>(pos.size());
}

MainLoss main_loss(const std::array<Var, 3>& emb, const std::vector<Pair>& pairs, double lambda) {
  ad::Tape& tape = *emb[0].tape;
  auto term = [&](Kind kind) {
    std::vector<int> a, p, n;
    for (const Pair& pr : pairs) {
      if (pr.anchor_kind != kind) continue;
      a.push_back(pr.anchor);
      p.push_back(pr.pos);
      n.push_back(pr.neg);
    }
    if (a.empty()) return tape.constant(Tensor::scalar(0.0));
    const Var anchors = ad::gather_rows(emb[kind_slot(kind)], std::move(a));
    const Var& items = emb[kind_slot(Kind::kItem)];
    return bpr_loss(ad::row_dot(anchors, ad::gather_rows(items, std::move(p))),
                    ad::row_dot(anchors, ad::gather_rows(items, std::move(n))));
  };
  MainLoss out;
  out.group = term(Kind::kGroup);
  out.user = term(Kind::kUser);
  out.total = ad::add(out.group, ad::scale(out.user, lambda));
  return out;
}

Var total_loss(Var main, std::optional<Var> ssl, std::span<const Var> params, double lambda1, double lambda2) {
  Var t = main;
  if (ssl) t = ad::add(t, ad::scale(*ssl, lambda1));
  if (lambda2 != 0.0 && !params.empty()) {
    Var reg = ad::sum_squares(params[0]);
    for (std::size_t i = 1; i < params.size(); ++i) reg = ad::add(reg, ad::sum_squares(params[i]));
    t = ad::add(t, ad::scale(reg, lambda2));
  }
  return t;
}

std::vector<Pair> positive_pairs(const InteractionGraph& g) {
  std::vector<Pair> out;
  for (const Edge& e : g.edges(Relation::kGI)) out.push_back({Kind::kGroup, e.a, e.b, 0});
  for (const Edge& e : g.edges(Relation::kUI)) out.push_back({Kind::kUser, e.a, e.b, 0});
  return out;
}

std::vector<Pair> sample_pairs(const InteractionGraph& g, const std::vector<Pair>& positives, std::mt19937_64& rng) {
  const int n_items = g.count(Kind::kItem);
  std::uniform_int_distribution<int> pick(0, std::max(0, n_items - 1));
  std::vector<Pair> out;
  out.reserve(positives.size());
  for (Pair p : positives) {
    const Relation r = p.anchor_kind == Kind::kGroup ? Relation::kGI : Relation::kUI;
    const auto seen = g.neighbors(r, {p.anchor_kind, p.anchor});
    if (static_cast<int>(seen.size()) >= n_items) continue;
    do {
      p.neg = pick(rng);
    } while (std::binary_search(seen.begin(), seen.end(), p.neg));
    out.push_back(p);
  }
  return out;
}

// History -------------------------------------------------------------------

namespace {

std::string opt_num(const std::optional<double>& v) { return v ? fmt::format("{}", *v) : std::string(); }

}  // namespace

std::string TrainHistory::to_csv() const {
  std::string out = "epoch,l_main,l_r,total,seconds,recall20,ndcg20\n";
  for (const EpochRecord& e : epochs) {
    out += fmt::format("{},{},{},{},{},{},{}\n", e.epoch, e.l_main, e.l_r, e.total, e.seconds, opt_num(e.recall),
                       opt_num(e.ndcg));
  }
  return out;
}

TrainHistory TrainHistory::from_csv(const std::string& text) {
  TrainHistory h;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1) {
      if (line != "epoch,l_main,l_r,total,seconds,recall20,ndcg20") throw ParseError("history", 1, "bad header");
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (line.back() == ',') f.emplace_back();
    if (f.size() != 7) throw ParseError("history", lineno, "expected 7 fields");
    try {
      EpochRecord e;
      e.epoch = std::stoi(f[0]);
      e.l_main = std::stod(f[1]);
      e.l_r = std::stod(f[2]);
      e.total = std::stod(f[3]);
      e.seconds = std::stod(f[4]);
      if (!f[5].empty()) e.recall = std::stod(f[5]);
      if (!f[6].empty()) e.ndcg = std::stod(f[6]);
      h.epochs.push_back(e);
    } catch (const std::exception&) {
      throw ParseError("history", lineno, "bad number");
    }
  }
  return h;
}

double TrainHistory::mean_epoch_seconds() const {
  if (epochs.empty()) return 0.0;
  double s = 0.0;
  for (const EpochRecord& e : epochs) s += e.seconds;
  return s / static_cast<double>(epochs.size());
}

std::vector<NodeId> warm_targets(const EvalSplit& split, const GroundTruthTable& gt) {
  std::vector<NodeId> out;
  for (Kind k : kAllKinds) {
    const auto& w = split.warm[kind_slot(k)];
    for (std::size_t v = 0; v < w.size(); ++v) {
      const NodeId n{k, static_cast<int>(v)};
      if (w[v] && gt.has(n)) out.push_back(n);
    }
  }
  return out;
}

// Training loops -----------------------------------------------------------

namespace {

// Independent random streams derived from the master seed.
enum Stream : std::uint64_t { kInit = 1, kNeg = 2, kEnhInit = 3, kWarmup = 4, kTargets = 5, kEpisodes = 6, kMeta = 7 };

}  // namespace

MetaSampling meta_sampling(const TrainConfig& cfg, std::uint64_t step) {
  if (cfg.meta_mode == MetaMode::kFullNeighborhood) return {};
  return {cfg.K, mix_seed(cfg.seed, kMeta, step)};
}

namespace {

using Clock = std::chrono::steady_clock;
double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::vector<Tensor*> tensors_of(ModelParams& m, EnhancerParams* e) {
  std::vector<Tensor*> out;
  for (auto& [_, t] : m.named()) out.push_back(t);
  if (e != nullptr)
    for (auto& [_, t] : e->named()) out.push_back(t);
  return out;
}

std::vector<Var> vars_of(const ModelVars& mv, const EnhancerVars* ev) {
  std::vector<Var> out = mv.all();
  if (ev != nullptr) {
    const auto e = ev->all();
    out.insert(out.end(), e.begin(), e.end());
  }
  return out;
}

void apply_step(Adam& adam, const ad::Gradients& grads, const std::vector<Var>& vars) {
  std::vector<const Tensor*> gs;
  gs.reserve(vars.size());
  for (Var v : vars) gs.push_back(&grads.of(v));
  adam.step(gs);
}

std::vector<Pair> epoch_pairs(const InteractionGraph& g, std::vector<Pair> positives, std::mt19937_64& rng) {
  std::shuffle(positives.begin(), positives.end(), rng);
  return sample_pairs(g, positives, rng);
}

std::size_t step_count(std::size_t pairs, int batch) {
  return std::max<std::size_t>(1, (pairs + static_cast<std::size_t>(batch) - 1) / static_cast<std::size_t>(batch));
}

std::vector<Pair> slice(const std::vector<Pair>& pairs, std::size_t step, int batch) {
  const std::size_t b = static_cast<std::size_t>(batch);
  const std::size_t lo = std::min(pairs.size(), step * b);
  const std::size_t hi = std::min(pairs.size(), lo + b);
  return {pairs.begin() + static_cast<std::ptrdiff_t>(lo), pairs.begin() + static_cast<std::ptrdiff_t>(hi)};
}

[[noreturn]] void diverge(int epoch, ModelParams& model, const ModelParams& good_model,
                          std::optional<EnhancerParams>& enh, const std::optional<EnhancerParams>& good_enh,
                          int good_epoch, const TrainHooks& hooks) {
  model = good_model;
  enh = good_enh;
  if (hooks.checkpoint) hooks.checkpoint(good_epoch, model, enh ? &*enh : nullptr);
  throw DivergenceError(fmt::format("non-finite loss at epoch {}; restored parameters from epoch {}", epoch,
                                    good_epoch));
}

void maybe_eval(const TrainConfig& cfg, const TrainHooks& hooks, EpochRecord& rec, int epoch,
                const ModelParams& m, const std::optional<EnhancerParams>& e) {
  if (cfg.eval_every > 0 && hooks.evaluate && epoch % cfg.eval_every == 0) {
    const auto [r, n] = hooks.evaluate(m, e ? &*e : nullptr);
    rec.recall = r;
    rec.ndcg = n;
  }
}

void maybe_checkpoint(const TrainConfig& cfg, const TrainHooks& hooks, int epoch, int last_epoch,
                      const ModelParams& m, const std::optional<EnhancerParams>& e) {
  if (!hooks.checkpoint) return;
  const bool periodic = cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0;
  if (periodic || epoch == last_epoch) hooks.checkpoint(epoch, m, e ? &*e : nullptr);
}

// Cycles through the warm targets in a reshuffled order.
class TargetCursor {
 public:
  TargetCursor(std::vector<NodeId> targets, std::uint64_t seed) : order_(std::move(targets)), rng_(seed) {
    std::shuffle(order_.begin(), order_.end(), rng_);
  }
  std::vector<NodeId> next(std::size_t n) {
    std::vector<NodeId> out;
    n = std::min(n, order_.size());
    while (out.size() < n) {
      if (pos_ == order_.size()) {
        std::shuffle(order_.begin(), order_.end(), rng_);
        pos_ = 0;
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  std::vector<NodeId> order_;
  std::mt19937_64 rng_;
  std::size_t pos_ = 0;
};

// Reconstruction loss of one batch of targets.
SslLoss batch_ssl(const TrainConfig& cfg, const InteractionGraph& g, const GroundTruthTable& gt,
                  const std::vector<NodeId>& batch, std::uint64_t seed, const ModelVars& mv, const EnhancerVars* ev,
                  const FullOutput* full) {
  if (cfg.meta_mode == MetaMode::kFullNeighborhood) {
    SslLoss s = ssl_loss_full(full->fused, batch, gt);
    s.edge_count = full->edge_count;
    return s;
  }
  std::vector<Episode> eps;
  eps.reserve(batch.size());
  for (NodeId n : batch) eps.push_back(sample_episode(g, n, cfg.K, cfg.L, seed));
  std::array<std::vector<const Episode*>, 3> by_kind;
  for (const Episode& e : eps) by_kind[kind_slot(e.target.kind)].push_back(&e);
  return ssl_loss(by_kind[kind_slot(Kind::kGroup)], by_kind[kind_slot(Kind::kUser)], by_kind[kind_slot(Kind::kItem)],
                  mv, ev, gt);
}

// One warning per kind and run when an SSL batch had no targets of that kind.
void warn_empty(const SslLoss& sl, int epoch, std::array<bool, 3>& warned, const TrainHooks& hooks) {
  for (Kind k : sl.empty_kinds) {
    if (warned[kind_slot(k)]) continue;
    warned[kind_slot(k)] = true;
    if (hooks.warn)
      hooks.warn(fmt::format("epoch {}: SSL batch without {} targets, L_R term for that kind is 0", epoch, kind_name(k)));
  }
}

struct Prepared {
  ModelParams model;
  std::optional<EnhancerParams> enhancer;
  std::vector<NodeId> targets;
  TrainHistory history;
};

Prepared prepare_run(const TrainConfig& cfg, const InteractionGraph& g, const EvalSplit& split,
                     const GroundTruthTable* gt) {
  validate(cfg);
  const bool need_gt = cfg.lambda1 > 0.0 || cfg.enhancer;
  if (need_gt && gt == nullptr) throw MissingInputError("ground-truth table required (run train-teacher first)");
  if (gt != nullptr && need_gt && gt->d() != cfg.d) {
    throw ShapeError(fmt::format("ground truth has d={} but config has d={}", gt->d(), cfg.d));
  }
  Prepared p;
  p.model = init_model(cfg.model_config(), g.counts(), mix_seed(cfg.seed, kInit));
  p.history.variant = cfg.variant();
  p.history.graph_edges = g.total_edges();
  if (gt != nullptr && need_gt) p.targets = warm_targets(split, *gt);
  if (cfg.enhancer) {
    p.enhancer = init_enhancer(cfg.d, mix_seed(cfg.seed, kEnhInit));
    const auto t0 = Clock::now();
    EnhancerTrainConfig ec;
    ec.epochs = cfg.warmup_epochs;
    ec.lr = cfg.lr;
    ec.batch = cfg.batch_size;
    ec.K = cfg.K;
    ec.f_agg = cfg.f_agg;
    ec.seed = mix_seed(cfg.seed, kWarmup);
    const EnhancerHistory eh = train_enhancer(*p.enhancer, p.model.E, g, p.targets, *gt, ec);
    p.history.warmup_loss = eh.loss;
    p.history.warmup_seconds = since(t0);
  }
  return p;
}

// Epochs of L_main (+ lambda1 L_R when ssl) + reg, appended to res.history.
void run_main_phase(const TrainConfig& cfg, const InteractionGraph& g, const GroundTruthTable* gt, bool ssl,
                    const std::vector<NodeId>& targets, TrainResult& res, int first_epoch, const TrainHooks& hooks) {
  const std::vector<Pair> positives = positive_pairs(g);
  if (positives.empty()) throw Error("training graph has no group-item or user-item interactions");
  std::mt19937_64 neg_rng(mix_seed(cfg.seed, kNeg));
  TargetCursor cursor(targets, mix_seed(cfg.seed, kTargets, 2));
  EnhancerParams* enh = res.enhancer ? &*res.enhancer : nullptr;
  Adam adam(AdamConfig{cfg.lr}, tensors_of(res.model, enh));
  ModelParams good_model = res.model;
  std::optional<EnhancerParams> good_enh = res.enhancer;
  int good_epoch = first_epoch - 1;
  std::uint64_t global_step = 0;
  const int last_epoch = first_epoch + cfg.epochs - 1;
  std::array<bool, 3> warned{};

  for (int epoch = first_epoch; epoch <= last_epoch; ++epoch) {
    const auto t0 = Clock::now();
    const std::vector<Pair> pairs = epoch_pairs(g, positives, neg_rng);
    const std::size_t steps = step_count(pairs.size(), cfg.batch_size);
    EpochRecord rec;
    rec.epoch = epoch;
    double w_main = 0.0, w_r = 0.0, w_total = 0.0;
    for (std::size_t s = 0; s < steps; ++s, ++global_step) {
      const std::vector<Pair> batch = slice(pairs, s, cfg.batch_size);
      ad::Tape tape;
      const ModelVars mv = bind(tape, res.model, true);
      std::optional<EnhancerVars> ev;
      if (enh != nullptr) ev = bind(tape, *enh, true);
      const EnhancerVars* evp = ev ? &*ev : nullptr;
      const FullOutput full = forward_full(mv, evp, g, false, meta_sampling(cfg, global_step + 1));
      rec.full_edges += full.edge_count;
      const MainLoss ml = main_loss(full.fused, batch, cfg.lambda);
      std::optional<Var> lr_var;
      if (ssl) {
        const SslLoss sl = batch_ssl(cfg, g, *gt, cursor.next(static_cast<std::size_t>(cfg.ssl_batch)),
                                     mix_seed(cfg.seed, kEpisodes, global_step), mv, evp, &full);
        warn_empty(sl, epoch, warned, hooks);
        lr_var = sl.total;
        rec.ssl_edges_max = std::max(rec.ssl_edges_max, sl.edge_count);
        rec.ssl_edges_sum += sl.edge_count;
        ++rec.ssl_batches;
      }
      const std::vector<Var> vars = vars_of(mv, evp);
      const Var total = total_loss(ml.total, lr_var, vars, cfg.lambda1, cfg.lambda2);
      const double tv = tape.value(total).item();
      if (!std::isfinite(tv)) diverge(epoch, res.model, good_model, res.enhancer, good_enh, good_epoch, hooks);
      const double w = static_cast<double>(batch.size());
      w_main += w * tape.value(ml.total).item();
      if (lr_var) w_r += w * tape.value(*lr_var).item();
      w_total += w * tv;
      apply_step(adam, tape.backward(total), vars);
    }
    const double n = static_cast<double>(std::max<std::size_t>(1, pairs.size()));
    rec.l_main = w_main / n;
    rec.l_r = w_r / n;
    rec.total = w_total / n;
    rec.seconds = since(t0);
    maybe_eval(cfg, hooks, rec, epoch, res.model, res.enhancer);
    res.history.epochs.push_back(rec);
    good_model = res.model;
    good_enh = res.enhancer;
    good_epoch = epoch;
    maybe_checkpoint(cfg, hooks, epoch, last_epoch, res.model, res.enhancer);
  }
}

}  // namespace

TrainResult train_base(const TrainConfig& cfg, const InteractionGraph& g, const TrainHooks& hooks) {
  validate(cfg);
  TrainConfig mc = cfg;
  mc.enhancer = false;
  TrainResult res;
  res.model = init_model(mc.model_config(), g.counts(), mix_seed(cfg.seed, kInit));
  res.history.variant = "base";
  res.history.graph_edges = g.total_edges();
  const std::vector<Pair> positives = positive_pairs(g);
  if (positives.empty()) throw Error("training graph has no group-item or user-item interactions");
  std::mt19937_64 rng(mix_seed(cfg.seed, kNeg));
  Adam adam(AdamConfig{cfg.lr}, tensors_of(res.model, nullptr));
  ModelParams good = res.model;
  std::optional<EnhancerParams> none;
  const auto t_phase = Clock::now();

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = Clock::now();
    const std::vector<Pair> pairs = epoch_pairs(g, positives, rng);
    const std::size_t steps = step_count(pairs.size(), cfg.batch_size);
    EpochRecord rec;
    rec.epoch = epoch;
    for (std::size_t s = 0; s < steps; ++s) {
      const std::vector<Pair> batch = slice(pairs, s, cfg.batch_size);
      ad::Tape tape;
      const ModelVars mv = bind(tape, res.model, true);
      const FullOutput full = forward_full(mv, nullptr, g);
      rec.full_edges += full.edge_count;
      const MainLoss ml = main_loss(full.fused, batch, cfg.lambda);
      const std::vector<Var> vars = mv.all();
      const Var total = total_loss(ml.total, std::nullopt, vars, 0.0, cfg.lambda2);
      const double tv = tape.value(total).item();
      if (!std::isfinite(tv)) diverge(epoch, res.model, good, none, none, epoch - 1, hooks);
      rec.l_main += static_cast<double>(batch.size()) * tape.value(ml.total).item();
      rec.total += static_cast<double>(batch.size()) * tv;
      apply_step(adam, tape.backward(total), vars);
    }
    const double n = static_cast<double>(std::max<std::size_t>(1, pairs.size()));
    rec.l_main /= n;
    rec.total /= n;
    rec.seconds = since(t0);
    maybe_eval(cfg, hooks, rec, epoch, res.model, none);
    res.history.epochs.push_back(rec);
    good = res.model;
    maybe_checkpoint(cfg, hooks, epoch, cfg.epochs, res.model, none);
  }
  res.history.phase2_seconds = since(t_phase);
  return res;
}

TrainResult train_joint(const TrainConfig& cfg, const InteractionGraph& g, const EvalSplit& split,
                        const GroundTruthTable* gt, const TrainHooks& hooks) {
  Prepared p = prepare_run(cfg, g, split, gt);
  TrainResult res{std::move(p.model), std::move(p.enhancer), std::move(p.history)};
  const auto t0 = Clock::now();
  run_main_phase(cfg, g, gt, cfg.lambda1 > 0.0, p.targets, res, 1, hooks);
  res.history.phase2_seconds = since(t0);
  return res;
}

TrainResult train_pretrain_finetune(const TrainConfig& cfg, const InteractionGraph& g, const EvalSplit& split,
                                    const GroundTruthTable* gt, const TrainHooks& hooks) {
  Prepared p = prepare_run(cfg, g, split, gt);
  TrainResult res{std::move(p.model), std::move(p.enhancer), std::move(p.history)};
  EnhancerParams* enh = res.enhancer ? &*res.enhancer : nullptr;
  const bool ssl = cfg.lambda1 > 0.0 && cfg.pretrain_epochs > 0;

  // Phase 1: reconstruction only.
  const auto t1 = Clock::now();
  if (ssl) {
    const std::size_t steps = step_count(positive_pairs(g).size(), cfg.batch_size);
    TargetCursor cursor(p.targets, mix_seed(cfg.seed, kTargets, 1));
    Adam adam(AdamConfig{cfg.lr}, tensors_of(res.model, enh));
    ModelParams good_model = res.model;
    std::optional<EnhancerParams> good_enh = res.enhancer;
    std::uint64_t global_step = 0;
    std::array<bool, 3> warned{};
    for (int epoch = 1; epoch <= cfg.pretrain_epochs; ++epoch) {
      const auto t0 = Clock::now();
      EpochRecord rec;
      rec.epoch = epoch;
      for (std::size_t s = 0; s < steps; ++s, ++global_step) {
        ad::Tape tape;
        const ModelVars mv = bind(tape, res.model, true);
        std::optional<EnhancerVars> ev;
        if (enh != nullptr) ev = bind(tape, *enh, true);
        const EnhancerVars* evp = ev ? &*ev : nullptr;
        std::optional<FullOutput> full;
        if (cfg.meta_mode == MetaMode::kFullNeighborhood) full = forward_full(mv, evp, g, false, meta_sampling(cfg, global_step + 1));
        const SslLoss sl = batch_ssl(cfg, g, *gt, cursor.next(static_cast<std::size_t>(cfg.ssl_batch)),
                                     mix_seed(cfg.seed, kEpisodes, global_step ^ 0x5ull << 40), mv, evp,
                                     full ? &*full : nullptr);
        warn_empty(sl, epoch, warned, hooks);
        rec.ssl_edges_max = std::max(rec.ssl_edges_max, sl.edge_count);
        rec.ssl_edges_sum += sl.edge_count;
        ++rec.ssl_batches;
        const std::vector<Var> vars = vars_of(mv, evp);
        const Var total = total_loss(tape.constant(Tensor::scalar(0.0)), sl.total, vars, cfg.lambda1, cfg.lambda2);
        const double tv = tape.value(total).item();
        if (!std::isfinite(tv)) diverge(epoch, res.model, good_model, res.enhancer, good_enh, epoch - 1, hooks);
        rec.l_r += tape.value(sl.total).item();
        rec.total += tv;
        apply_step(adam, tape.backward(total), vars);
      }
      rec.l_r /= static_cast<double>(steps);
      rec.total /= static_cast<double>(steps);
      rec.seconds = since(t0);
      res.history.epochs.push_back(rec);
      good_model = res.model;
      good_enh = res.enhancer;
    }
  }
  res.history.phase1_seconds = since(t1);

  // Phase 2: fresh optimizer, main loss only.
  const auto t2 = Clock::now();
  run_main_phase(cfg, g, gt, false, {}, res, static_cast<int>(res.history.epochs.size()) + 1, hooks);
  res.history.phase2_seconds = since(t2);
  return res;
}

TrainResult train(const TrainConfig& cfg, const InteractionGraph& g, const EvalSplit& split,
                  const GroundTruthTable* gt, const TrainHooks& hooks) {
  if (cfg.variant() == "base") return train_base(cfg, g, hooks);
  if (cfg.paradigm == Paradigm::kPretrainFinetune) return train_pretrain_finetune(cfg, g, split, gt, hooks);
  return train_joint(cfg, g, split, gt, hooks);
}

}  // namespace coldgraph
