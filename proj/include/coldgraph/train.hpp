#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "coldgraph/autodiff.hpp"
#include "coldgraph/enhancer.hpp"
#include "coldgraph/ground_truth.hpp"
#include "coldgraph/graph.hpp"
#include "coldgraph/model.hpp"

namespace coldgraph {

enum class Paradigm : std::uint8_t { kJoint, kPretrainFinetune };
enum class MetaMode : std::uint8_t { kEpisodic, kFullNeighborhood };

const char* paradigm_name(Paradigm p);
const char* meta_mode_name(MetaMode m);

struct TrainConfig {
  int d = 64;
  int L = 3;
  int K = 5;
  double lr = 0.001;
  int batch_size = 256;
  double lambda = 1.0;
  double lambda1 = 1.0;
  double lambda2 = 1e-6;
  int c_u = 20;
  int c_g = 20;
  Paradigm paradigm = Paradigm::kJoint;
  MetaMode meta_mode = MetaMode::kEpisodic;
  Backbone backbone = Backbone::kLight;
  bool enhancer = true;
  std::uint64_t seed = 1;
  int epochs = 100;

  MemberAgg f_agg = MemberAgg::kAttention;
  int ssl_batch = 16;          // episodes per optimizer step
  int warmup_epochs = 50;      // enhancer pre-training
  int pretrain_epochs = 20;    // phase 1 of pretrain_finetune
  int teacher_epochs = 100;
  int checkpoint_every = 0;    // 0 = only at the end
  int eval_every = 0;          // 0 = never during training
  int k = 20;
  bool eval_users = false;
  int threads = 0;

  // Segmentation.
  int n_g = 5;
  int n_u = 5;
  int n_i = 5;
  double c_percent = 0.1;

  // Input edge files (prepare) and synthetic generator settings (synth).
  std::string data;
  SyntheticSpec synth;

  ModelConfig model_config() const;
  // "base" when lambda1 == 0 and the enhancer is off, else the paradigm name,
  // with "-M" appended in full_neighborhood mode.
  std::string variant() const;
  // key=value lines for every key, in registry order.
  std::string to_text() const;
};

struct ConfigKey {
  std::string name;
  std::string help;
  std::function<void(TrainConfig&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};
const std::vector<ConfigKey>& config_keys();

// Applies one `key=value` (or `key = value`) assignment; throws
// coldgraph::Error naming an unknown key or a bad value.
void apply_override(TrainConfig& cfg, const std::string& assignment);
// Flat key=value file; `#` comments and blank lines skipped. ParseError with the line.
TrainConfig read_config(const std::filesystem::path& path, TrainConfig base = {});
TrainConfig parse_config_text(const std::string& text, const std::string& origin = "<config>", TrainConfig base = {});
// Throws on non-positive sizes or negative lambdas.
void validate(const TrainConfig& cfg);

// Losses ------------------------------------------------------------------

// mean(-log sigmoid(pos - neg)) over [n,1] columns.
ad::Var bpr_loss(ad::Var pos, ad::Var neg);
double bpr_loss(const std::vector<double>& pos, const std::vector<double>& neg);

struct Pair {
  Kind anchor_kind = Kind::kGroup;  // group (GI) or user (UI)
  int anchor = 0;
  int pos = 0;
  int neg = 0;
};

struct MainLoss {
  ad::Var total;  // L_g + lambda * L_u
  ad::Var group;
  ad::Var user;
};
// embeddings: per-kind final embedding tables (e.g. forward_full().fused).
MainLoss main_loss(const std::array<ad::Var, 3>& embeddings, const std::vector<Pair>& pairs, double lambda);

// L_main + lambda1 * L_R + lambda2 * sum of squared parameters.
ad::Var total_loss(ad::Var main, std::optional<ad::Var> ssl, std::span<const ad::Var> params, double lambda1,
                   double lambda2);

// Uniform negatives rejecting the anchor's observed items in g. Pairs whose
// anchor has interacted with every item are dropped.
std::vector<Pair> sample_pairs(const InteractionGraph& g, const std::vector<Pair>& positives, std::mt19937_64& rng);
// Every GI and UI edge of g as a positive pair (neg unset).
std::vector<Pair> positive_pairs(const InteractionGraph& g);

// Training -----------------------------------------------------------------

struct EpochRecord {
  int epoch = 0;
  double l_main = 0.0;
  double l_r = 0.0;
  double total = 0.0;
  double seconds = 0.0;
  std::optional<double> recall, ndcg;
  std::size_t ssl_edges_max = 0;   // largest |E^| of an episode batch this epoch
  std::size_t ssl_edges_sum = 0;   // sum over batches
  std::size_t ssl_batches = 0;
  std::size_t full_edges = 0;      // neighbour reads of full-graph propagation
};

struct TrainHistory {
  std::string variant;
  std::vector<EpochRecord> epochs;
  double warmup_seconds = 0.0;
  double phase1_seconds = 0.0;  // pretrain_finetune only
  double phase2_seconds = 0.0;
  std::size_t graph_edges = 0;  // |E| of the training graph
  std::vector<double> warmup_loss;

  // Header `epoch,l_main,l_r,total,seconds,recall20,ndcg20`; unscheduled
  // metrics are left empty.
  std::string to_csv() const;
  static TrainHistory from_csv(const std::string& text);
  double mean_epoch_seconds() const;
};

struct TrainResult {
  ModelParams model;
  std::optional<EnhancerParams> enhancer;
  TrainHistory history;
};

struct TrainHooks {
  // Called with the 1-based epoch after every checkpoint_every epochs and at the end.
  std::function<void(int, const ModelParams&, const EnhancerParams*)> checkpoint;
  // Cold-start metrics for the eval_every schedule: (recall, ndcg).
  std::function<std::pair<double, double>(const ModelParams&, const EnhancerParams*)> evaluate;
  // Non-fatal conditions, e.g. an SSL batch with no targets of some kind.
  std::function<void(const std::string&)> warn;
};

// Vanilla base GNN: L_main + lambda2 reg on the full graph, no SSL, no enhancer.
TrainResult train_base(const TrainConfig& cfg, const InteractionGraph& g, const TrainHooks& hooks = {});

// gt is required when lambda1 > 0 or the enhancer is on.
TrainResult train_joint(const TrainConfig& cfg, const InteractionGraph& g, const EvalSplit& split,
                        const GroundTruthTable* gt, const TrainHooks& hooks = {});
TrainResult train_pretrain_finetune(const TrainConfig& cfg, const InteractionGraph& g, const EvalSplit& split,
                                    const GroundTruthTable* gt, const TrainHooks& hooks = {});
// Dispatches on cfg.paradigm, or to train_base for the base variant.
TrainResult train(const TrainConfig& cfg, const InteractionGraph& g, const EvalSplit& split,
                  const GroundTruthTable* gt, const TrainHooks& hooks = {});

// Warm targets (groups, users, items) covered by gt, in kind then index order.
std::vector<NodeId> warm_targets(const EvalSplit& split, const GroundTruthTable& gt);

// Enhancer neighbour sampling for full propagation at a training step
// (steps count from 1; step 0 is the one used at evaluation time).
MetaSampling meta_sampling(const TrainConfig& cfg, std::uint64_t step = 0);

}  // namespace coldgraph
