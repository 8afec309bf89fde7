// coldgraph command line: prepare, synth, train-teacher, train, evaluate, report.
//
// Artifacts under --out DIR:
//   data/{user_item,group_item,group_user}.tsv   synth
//   graph.bin ids.tsv split.txt stats.txt         prepare
//   teacher.ckpt teacher_history.csv              train-teacher
//   runs/<variant>-seed<N>/{model.ckpt,history.csv,history.json,config.txt}   train
//   metrics.csv metrics.txt                       evaluate
//   report.txt complexity.csv                     report

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "coldgraph/checkpoint.hpp"
#include "coldgraph/error.hpp"
#include "coldgraph/eval.hpp"
#include "coldgraph/io.hpp"
#include "coldgraph/kernels.hpp"
#include "coldgraph/ssl.hpp"
#include "coldgraph/train.hpp"

namespace fs = std::filesystem;
using namespace coldgraph;
using json = nlohmann::json;

namespace {

// Bad flags, bad overrides, unreadable config files.
class UsageError : public Error {
 public:
  using Error::Error;
};

struct Invocation {
  std::string config_path;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::vector<std::string> overrides;          // positional key=value
  std::map<std::string, std::string> options;  // --key value, by config key
};

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot write " + p.string());
  f << text;
}

std::string read_text(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw MissingInputError("missing " + p.string());
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

fs::path require(const fs::path& p, const std::string& producer) {
  if (!fs::exists(p)) throw MissingInputError("missing " + p.string() + " (run `coldgraph " + producer + "` first)");
  return p;
}

std::string option_name(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  std::replace(key.begin(), key.end(), '.', '-');
  return "--" + key;
}

TrainConfig resolve(const Invocation& inv) {
  TrainConfig cfg;
  try {
    if (!inv.config_path.empty()) {
      if (!fs::exists(inv.config_path)) throw MissingInputError("missing config " + inv.config_path);
      cfg = read_config(inv.config_path);
    }
    for (const std::string& o : inv.overrides) {
      if (o.find('=') == std::string::npos) throw UsageError("expected key=value, got '" + o + "'");
      apply_override(cfg, o);
    }
    for (const auto& [key, value] : inv.options) apply_override(cfg, key + "=" + value);
    if (inv.seed) cfg.seed = *inv.seed;
    if (inv.threads) cfg.threads = *inv.threads;
    validate(cfg);
  } catch (const MissingInputError&) {
    throw;
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  kernels::set_threads(cfg.threads);
  return cfg;
}

struct Prepared {
  InteractionGraph full;
  EvalSplit split;
};

Prepared load_prepared(const fs::path& out) {
  Prepared p;
  p.full = read_graph(require(out / "graph.bin", "prepare"));
  p.split = read_split(require(out / "split.txt", "prepare"));
  return p;
}

fs::path run_dir(const fs::path& out, const TrainConfig& cfg) {
  return out / "runs" / (cfg.variant() + "-seed" + std::to_string(cfg.seed));
}

std::vector<fs::path> run_dirs(const fs::path& out) {
  std::vector<fs::path> dirs;
  const fs::path root = out / "runs";
  if (fs::is_directory(root))
    for (const auto& e : fs::directory_iterator(root))
      if (fs::exists(e.path() / "model.ckpt")) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) throw MissingInputError("no trained runs under " + root.string() + " (run `coldgraph train` first)");
  return dirs;
}

json history_json(const TrainHistory& h) {
  json j;
  j["variant"] = h.variant;
  j["graph_edges"] = h.graph_edges;
  j["warmup_seconds"] = h.warmup_seconds;
  j["phase1_seconds"] = h.phase1_seconds;
  j["phase2_seconds"] = h.phase2_seconds;
  j["warmup_loss"] = h.warmup_loss;
  j["epochs"] = json::array();
  for (const EpochRecord& e : h.epochs) {
    json r = {{"epoch", e.epoch},
              {"l_main", e.l_main},
              {"l_r", e.l_r},
              {"total", e.total},
              {"seconds", e.seconds},
              {"ssl_edges_max", e.ssl_edges_max},
              {"ssl_edges_sum", e.ssl_edges_sum},
              {"ssl_batches", e.ssl_batches},
              {"full_edges", e.full_edges}};
    if (e.recall) r["recall"] = *e.recall;
    if (e.ndcg) r["ndcg"] = *e.ndcg;
    j["epochs"].push_back(r);
  }
  return j;
}

TrainHistory history_from_json(const json& j) {
  TrainHistory h;
  h.variant = j.at("variant").get<std::string>();
  h.graph_edges = j.at("graph_edges").get<std::size_t>();
  h.warmup_seconds = j.value("warmup_seconds", 0.0);
  h.phase1_seconds = j.value("phase1_seconds", 0.0);
  h.phase2_seconds = j.value("phase2_seconds", 0.0);
  h.warmup_loss = j.value("warmup_loss", std::vector<double>{});
  for (const json& r : j.at("epochs")) {
    EpochRecord e;
    e.epoch = r.at("epoch").get<int>();
    e.l_main = r.at("l_main").get<double>();
    e.l_r = r.at("l_r").get<double>();
    e.total = r.at("total").get<double>();
    e.seconds = r.at("seconds").get<double>();
    e.ssl_edges_max = r.at("ssl_edges_max").get<std::size_t>();
    e.ssl_edges_sum = r.at("ssl_edges_sum").get<std::size_t>();
    e.ssl_batches = r.at("ssl_batches").get<std::size_t>();
    e.full_edges = r.at("full_edges").get<std::size_t>();
    if (r.contains("recall")) e.recall = r["recall"].get<double>();
    if (r.contains("ndcg")) e.ndcg = r["ndcg"].get<double>();
    h.epochs.push_back(e);
  }
  return h;
}

// Commands -------------------------------------------------------------------

void cmd_synth(const TrainConfig& cfg, const fs::path& out) {
  const SyntheticGraph s = generate_synthetic(cfg.synth);
  const fs::path dir = out / "data";
  fs::create_directories(dir);
  write_edges(EdgeFiles::in_dir(dir), s.graph);
  spdlog::info("synth: {} users, {} items, {} groups -> {}", cfg.synth.users, cfg.synth.items, cfg.synth.groups,
               dir.string());
}

void cmd_prepare(const TrainConfig& cfg, const fs::path& out) {
  const fs::path data = cfg.data.empty() ? out / "data" : fs::path(cfg.data);
  const LoadedGraph loaded = load_edges(EdgeFiles::in_dir(data));
  const InteractionGraph full = build_implicit(loaded.graph, cfg.c_u, cfg.c_g);
  const EvalSplit split = segment(full, cfg.n_g, cfg.n_u, cfg.n_i, cfg.c_percent);
  fs::create_directories(out);
  write_graph(out / "graph.bin", full);
  loaded.ids.write(out / "ids.tsv");
  write_split(out / "split.txt", split);
  const std::string stats = format_stats(graph_stats(full));
  write_text(out / "stats.txt", stats);
  spdlog::info("prepare: {} cold groups in test, {} excluded\n{}", split.members(Kind::kGroup, false).size(),
               split.excluded_groups.size(), stats);
}

void cmd_train_teacher(const TrainConfig& cfg, const fs::path& out) {
  const Prepared p = load_prepared(out);
  spdlog::info("train-teacher: {} epochs, d={}, L={}", cfg.teacher_epochs, cfg.d, cfg.L);
  const TeacherResult t = train_teacher(p.full, p.split, cfg);
  // The teacher is a plain base GNN; its stored config says so.
  TrainConfig tc = cfg;
  tc.enhancer = false;
  tc.lambda1 = 0.0;
  tc.epochs = cfg.teacher_epochs;
  save_checkpoint(out / "teacher.ckpt", tc, t.model, nullptr, &t.table);
  write_text(out / "teacher_history.csv", t.history.to_csv());
  if (!t.history.epochs.empty()) spdlog::info("train-teacher: final loss {:.6f}", t.history.epochs.back().l_main);
}

void cmd_train(const TrainConfig& cfg, const fs::path& out) {
  const Prepared p = load_prepared(out);
  const InteractionGraph g = training_graph(p.full, p.split, cfg.c_u, cfg.c_g);
  const bool needs_gt = cfg.variant() != "base" && (cfg.lambda1 > 0.0 || cfg.enhancer);
  std::optional<GroundTruthTable> gt;
  if (needs_gt) {
    LoadedCheckpoint teacher = load_checkpoint(require(out / "teacher.ckpt", "train-teacher"));
    if (!teacher.ground_truth) throw MissingInputError("teacher.ckpt has no ground-truth table");
    gt = std::move(teacher.ground_truth);
  }
  const fs::path dir = run_dir(out, cfg);
  fs::create_directories(dir);
  write_text(dir / "config.txt", cfg.to_text());

  TrainHooks hooks;
  hooks.warn = [](const std::string& m) { spdlog::warn("{}", m); };
  hooks.checkpoint = [&](int epoch, const ModelParams& m, const EnhancerParams* e) {
    save_checkpoint(dir / "model.ckpt", cfg, m, e);
    spdlog::debug("checkpoint at epoch {}", epoch);
  };
  if (cfg.eval_every > 0) {
    hooks.evaluate = [&](const ModelParams& m, const EnhancerParams* e) {
      const EvalReport r = evaluate(m, e, g, p.split, cfg.k, false, cfg.variant(), meta_sampling(cfg));
      return std::make_pair(r.groups.recall, r.groups.ndcg);
    };
  }
  spdlog::info("train: variant {} seed {} for {} epochs", cfg.variant(), cfg.seed, cfg.epochs);
  const TrainResult r = train(cfg, g, p.split, gt ? &*gt : nullptr, hooks);
  save_checkpoint(dir / "model.ckpt", cfg, r.model, r.enhancer ? &*r.enhancer : nullptr);
  write_text(dir / "history.csv", r.history.to_csv());
  write_text(dir / "history.json", history_json(r.history).dump(1) + "\n");
  if (!r.history.epochs.empty())
    spdlog::info("train: final total loss {:.6f}, {:.3f} s/epoch", r.history.epochs.back().total,
                 r.history.mean_epoch_seconds());
}

void cmd_evaluate(const TrainConfig& cfg, const fs::path& out) {
  const Prepared p = load_prepared(out);
  std::string csv;
  std::vector<EvalReport> reports;
  for (const fs::path& dir : run_dirs(out)) {
    const LoadedCheckpoint ck = load_checkpoint(dir / "model.ckpt");
    const TrainConfig& rc = ck.config;
    const InteractionGraph g = training_graph(p.full, p.split, rc.c_u, rc.c_g);
    const EvalReport r = evaluate(ck.model, ck.enhancer ? &*ck.enhancer : nullptr, g, p.split, cfg.k,
                                  cfg.eval_users, rc.variant(), meta_sampling(rc));
    std::istringstream rows(metrics_csv(std::span(&r, 1)));
    std::string line;
    std::getline(rows, line);
    if (csv.empty()) csv = "seed," + line + "\n";
    while (std::getline(rows, line)) csv += std::to_string(rc.seed) + "," + line + "\n";
    reports.push_back(r);
  }
  write_text(out / "metrics.csv", csv);
  const std::string table = metrics_table(reports);
  write_text(out / "metrics.txt", table);
  spdlog::info("evaluate:\n{}", table);
}

struct RunInfo {
  TrainConfig cfg;
  TrainHistory history;
};

// seed -> variant -> group NDCG, from metrics.csv when present.
std::map<std::uint64_t, std::map<std::string, double>> read_ndcg(const fs::path& path) {
  std::map<std::uint64_t, std::map<std::string, double>> out;
  if (!fs::exists(path)) return out;
  std::istringstream in(read_text(path));
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() == 7 && f[2] == "group") out[std::stoull(f[0])][f[1]] = std::stod(f[6]);
  }
  return out;
}

void cmd_report(const fs::path& out) {
  std::map<std::uint64_t, std::vector<RunInfo>> by_seed;
  for (const fs::path& dir : run_dirs(out)) {
    RunInfo r;
    r.cfg = parse_config_text(read_text(dir / "config.txt"), (dir / "config.txt").string());
    r.history = history_from_json(json::parse(read_text(require(dir / "history.json", "train"))));
    by_seed[r.cfg.seed].push_back(std::move(r));
  }
  std::string text, csv;
  for (auto& [seed, runs] : by_seed) {
    // The base run is the reference row; the joint run is compared against it.
    auto rank = [](const RunInfo& r) {
      static const std::vector<std::string> order = {"base", "joint", "pretrain_finetune", "joint-M"};
      return std::find(order.begin(), order.end(), r.history.variant) - order.begin();
    };
    std::stable_sort(runs.begin(), runs.end(), [&](const RunInfo& a, const RunInfo& b) { return rank(a) < rank(b); });
    std::vector<TrainHistory> hs;
    for (const RunInfo& r : runs) hs.push_back(r.history);
    const std::vector<ComplexityRow> rows = complexity_report(hs);
    text += fmt::format("seed {}\n{}\n", seed, complexity_table(rows));
    std::istringstream lines(complexity_csv(rows));
    std::string line;
    std::getline(lines, line);
    if (csv.empty()) csv = "seed," + line + "\n";
    while (std::getline(lines, line)) csv += fmt::format("{},{}\n", seed, line);

    const auto conv = [&](const std::string& v) -> std::optional<int> {
      for (const ComplexityRow& r : rows)
        if (r.variant == v) return r.convergence;
      return std::nullopt;
    };
    const auto fmt_epoch = [](std::optional<int> e) { return e ? std::to_string(*e) : std::string("none"); };
    if (std::any_of(rows.begin(), rows.end(), [](const ComplexityRow& r) { return r.variant == "joint"; }) &&
        std::any_of(rows.begin(), rows.end(), [](const ComplexityRow& r) { return r.variant == "joint-M"; }))
      text += fmt::format("convergence epoch: joint {} vs joint-M {}\n\n", fmt_epoch(conv("joint")),
                          fmt_epoch(conv("joint-M")));

    if (runs.size() > 1 && runs.front().history.variant == "base") {
      const RunInfo& ssl = runs[1];
      const auto comps = complexity_components(rows[0], rows[1], ssl.cfg.L, ssl.cfg.d, ssl.cfg.epochs,
                                               ssl.cfg.batch_size);
      text += fmt::format("operation counts, base vs {}\n{}\n", ssl.history.variant,
                          complexity_components_table(comps));
    }
  }

  const auto ndcg = read_ndcg(out / "metrics.csv");
  std::string order;
  for (const auto& [seed, m] : ndcg) {
    auto cmp = [&](const std::string& a, const std::string& b) {
      if (!m.count(a) || !m.count(b)) return;
      order += fmt::format("  seed {}: {} {:.6f} {} {} {:.6f}\n", seed, a, m.at(a), m.at(a) >= m.at(b) ? ">=" : "<",
                          b, m.at(b));
    };
    cmp("joint", "base");
    cmp("joint", "pretrain_finetune");
    cmp("joint", "joint-M");
  }
  if (!order.empty()) text += "orderings (group NDCG)\n" + order;
  write_text(out / "report.txt", text);
  write_text(out / "complexity.csv", csv);
  spdlog::info("report:\n{}", text);
}

void configure_logging() {
  spdlog::set_pattern("[%l] %v");
  spdlog::set_level(spdlog::level::info);
  const char* env = std::getenv("COLDGRAPH_LOG");
  if (env == nullptr) return;
  const std::string v = env;
  if (v == "error") spdlog::set_level(spdlog::level::err);
  else if (v == "debug") spdlog::set_level(spdlog::level::debug);
  else if (v != "info") spdlog::warn("COLDGRAPH_LOG={} not one of error, info, debug; using info", v);
}

std::string keys_help() {
  const TrainConfig defaults;
  std::string s = "\nConfig keys (key=value, or --key value):\n";
  for (const ConfigKey& k : config_keys())
    s += fmt::format("  {:<22} {:<12} {}\n", k.name, k.get(defaults), k.help);
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  configure_logging();
  CLI::App app{"coldgraph: cold-start group recommendation with self-supervised graph learning"};
  app.require_subcommand(1, 1);
  app.footer(keys_help());

  Invocation inv;
  struct Sub {
    const char* name;
    const char* help;
  };
  const Sub subs[] = {{"prepare", "load edge files, build implicit relations, segment, write the split manifest"},
                      {"synth", "generate a synthetic clustered dataset as edge files"},
                      {"train-teacher", "train the warm-node teacher and store ground-truth embeddings"},
                      {"train", "train a recommender variant"},
                      {"evaluate", "cold-start Recall@k / NDCG@k for every trained run"},
                      {"report", "complexity table and variant orderings"}};
  const TrainConfig defaults;
  for (const Sub& s : subs) {
    CLI::App* sub = app.add_subcommand(s.name, s.help);
    sub->add_option("--config", inv.config_path, "key=value config file");
    sub->add_option("--out", inv.out, "output directory")->capture_default_str();
    sub->add_option("--seed", inv.seed, "training seed (overrides the seed key)");
    sub->add_option("--threads", inv.threads, "worker cap for parallel kernels");
    sub->add_option("overrides", inv.overrides, "key=value config overrides");
    for (const ConfigKey& k : config_keys()) {
      if (k.name == "seed" || k.name == "threads") continue;
      sub->add_option_function<std::string>(
             option_name(k.name), [&inv, name = k.name](const std::string& v) { inv.options[name] = v; }, k.help)
          ->default_str(k.get(defaults));
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const std::string cmd = app.get_subcommands().front()->get_name();
  try {
    const TrainConfig cfg = resolve(inv);
    const fs::path out = inv.out;
    if (cmd == "synth") cmd_synth(cfg, out);
    else if (cmd == "prepare") cmd_prepare(cfg, out);
    else if (cmd == "train-teacher") cmd_train_teacher(cfg, out);
    else if (cmd == "train") cmd_train(cfg, out);
    else if (cmd == "evaluate") cmd_evaluate(cfg, out);
    else cmd_report(out);
  } catch (const DivergenceError& e) {
    spdlog::error("{}", e.what());
    return 3;
  } catch (const UsageError& e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const MissingInputError& e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const ParseError& e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
