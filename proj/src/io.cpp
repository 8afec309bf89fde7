#include "coldgraph/io.hpp"

#include <charconv>
#include <fmt/format.h>
#include <fstream>
#include <sstream>

#include "coldgraph/error.hpp"

namespace coldgraph {
namespace fs = std::filesystem;

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  std::string f;
  while (in >> f) out.push_back(f);
  return out;
}

bool skip_line(const std::string& line) {
  const auto p = line.find_first_not_of(" \t\r");
  return p == std::string::npos || line[p] == '#';
}

template <typename T>
bool parse_number(const std::string& s, T& out) {
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

std::optional<Kind> parse_kind(const std::string& s) {
  for (Kind k : kAllKinds)
    if (s == kind_name(k)) return k;
  return std::nullopt;
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingInputError("cannot open " + path.string());
  return in;
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

void write_edge_line(std::ostream& out, const Edge& e) {
  out << e.a << '\t' << e.b << '\t';
  if (e.has_ts) {
    out << e.ts;
  } else {
    out << '-';
  }
  out << '\n';
}

Edge parse_edge_line(const std::string& file, std::size_t line_no, const std::string& line) {
  const auto f = split_fields(line);
  Edge e;
  if (f.size() != 3 || !parse_number(f[0], e.a) || !parse_number(f[1], e.b)) {
    throw ParseError(file, line_no, "expected `a b ts|-`");
  }
  if (f[2] != "-") {
    if (!parse_number(f[2], e.ts)) throw ParseError(file, line_no, "bad timestamp");
    e.has_ts = true;
  }
  return e;
}

}  // namespace

int IdMap::intern(Kind k, const std::string& external) {
  auto& idx = index_[kind_slot(k)];
  auto [it, fresh] = idx.try_emplace(external, static_cast<int>(names_[kind_slot(k)].size()));
  if (fresh) names_[kind_slot(k)].push_back(external);
  return it->second;
}

std::optional<int> IdMap::find(Kind k, const std::string& external) const {
  const auto& idx = index_[kind_slot(k)];
  const auto it = idx.find(external);
  if (it == idx.end()) return std::nullopt;
  return it->second;
}

const std::string& IdMap::external(Kind k, int index) const {
  return names_[kind_slot(k)].at(static_cast<std::size_t>(index));
}

void IdMap::write(const fs::path& path) const {
  std::ofstream out = open_out(path);
  out << "# kind\texternal_id\tdense_index\n";
  for (Kind k : kAllKinds) {
    const auto& names = names_[kind_slot(k)];
    for (std::size_t i = 0; i < names.size(); ++i) out << kind_name(k) << '\t' << names[i] << '\t' << i << '\n';
  }
}

IdMap IdMap::read(const fs::path& path) {
  std::ifstream in = open_in(path);
  const std::string file = path.string();
  std::array<std::vector<std::pair<int, std::string>>, 3> rows;
  std::array<std::unordered_map<std::string, std::size_t>, 3> seen_external;
  std::string line;
  for (std::size_t line_no = 1; std::getline(in, line); ++line_no) {
    if (skip_line(line)) continue;
    const auto f = split_fields(line);
    int index = 0;
    if (f.size() != 3 || !parse_number(f[2], index) || index < 0) {
      throw ParseError(file, line_no, "expected `kind external_id dense_index`");
    }
    const auto kind = parse_kind(f[0]);
    if (!kind) throw ParseError(file, line_no, "unknown kind `" + f[0] + "`");
    if (!seen_external[kind_slot(*kind)].emplace(f[1], line_no).second) {
      throw ParseError(file, line_no, "id `" + f[1] + "` mapped twice for kind " + kind_name(*kind));
    }
    rows[kind_slot(*kind)].emplace_back(index, f[1]);
  }
  IdMap m;
  for (Kind k : kAllKinds) {
    auto& r = rows[kind_slot(k)];
    std::vector<const std::string*> by_index(r.size(), nullptr);
    for (const auto& [index, name] : r) {
      if (static_cast<std::size_t>(index) >= r.size() || by_index[static_cast<std::size_t>(index)] != nullptr) {
        throw ParseError(file, 0, std::string("dense indices of kind ") + kind_name(k) + " collide or are not dense");
      }
      by_index[static_cast<std::size_t>(index)] = &name;
    }
    for (const std::string* name : by_index) m.intern(k, *name);
  }
  return m;
}

EdgeFiles EdgeFiles::in_dir(const fs::path& dir) {
  return {dir / "user_item.tsv", dir / "group_item.tsv", dir / "group_user.tsv"};
}

LoadedGraph load_edges(const EdgeFiles& files, const IdMap* prior) {
  LoadedGraph out;
  if (prior != nullptr) out.ids = *prior;
  std::array<std::vector<Edge>, 5> rel;

  struct Source {
    const fs::path* path;
    Relation relation;
    bool timestamps;
  };
  const Source sources[] = {{&files.user_item, Relation::kUI, true},
                            {&files.group_item, Relation::kGI, true},
                            {&files.group_user, Relation::kGU, false}};
  for (const Source& src : sources) {
    if (!fs::exists(*src.path)) throw MissingInputError("missing edge file " + src.path->string());
  }
  for (const Source& src : sources) {
    std::ifstream in = open_in(*src.path);
    const std::string file = src.path->string();
    const auto [ka, kb] = relation_kinds(src.relation);
    std::string line;
    for (std::size_t line_no = 1; std::getline(in, line); ++line_no) {
      if (skip_line(line)) continue;
      const auto f = split_fields(line);
      const std::size_t max_fields = src.timestamps ? 3 : 2;
      if (f.size() < 2 || f.size() > max_fields) {
        throw ParseError(file, line_no, fmt::format("expected 2{} fields, got {}", src.timestamps ? "-3" : "", f.size()));
      }
      Edge e;
      if (f.size() == 3) {
        if (!parse_number(f[2], e.ts)) throw ParseError(file, line_no, "timestamp `" + f[2] + "` is not an integer");
        e.has_ts = true;
      }
      e.a = out.ids.intern(ka, f[0]);
      e.b = out.ids.intern(kb, f[1]);
      rel[relation_slot(src.relation)].push_back(e);
    }
  }
  const std::array<int, 3> counts = {out.ids.size(Kind::kUser), out.ids.size(Kind::kItem), out.ids.size(Kind::kGroup)};
  out.graph = InteractionGraph(counts, std::move(rel));
  return out;
}

void write_edges(const EdgeFiles& files, const InteractionGraph& g, const IdMap* ids) {
  auto name = [&](Kind k, int i) { return ids != nullptr ? ids->external(k, i) : fmt::format("{}{}", kind_name(k)[0], i); };
  auto dump = [&](const fs::path& path, Relation r, bool ts) {
    std::ofstream out = open_out(path);
    const auto [ka, kb] = relation_kinds(r);
    for (const Edge& e : g.edges(r)) {
      out << name(ka, e.a) << '\t' << name(kb, e.b);
      if (ts && e.has_ts) out << '\t' << e.ts;
      out << '\n';
    }
  };
  dump(files.user_item, Relation::kUI, true);
  dump(files.group_item, Relation::kGI, true);
  dump(files.group_user, Relation::kGU, false);
}

GraphStats graph_stats(const InteractionGraph& g) {
  GraphStats s;
  s.counts = g.counts();
  for (Relation r : kAllRelations) s.edges[relation_slot(r)] = g.edges(r).size();
  auto density = [](std::size_t e, int a, int b) {
    return a > 0 && b > 0 ? static_cast<double>(e) / (static_cast<double>(a) * static_cast<double>(b)) : 0.0;
  };
  s.ui_sparsity = density(s.edges[relation_slot(Relation::kUI)], g.count(Kind::kUser), g.count(Kind::kItem));
  s.gi_sparsity = density(s.edges[relation_slot(Relation::kGI)], g.count(Kind::kGroup), g.count(Kind::kItem));
  return s;
}

std::string format_stats(const GraphStats& s) {
  std::string out;
  out += fmt::format("{:<18}{:>12}\n", "Users", s.counts[kind_slot(Kind::kUser)]);
  out += fmt::format("{:<18}{:>12}\n", "Items", s.counts[kind_slot(Kind::kItem)]);
  out += fmt::format("{:<18}{:>12}\n", "Groups", s.counts[kind_slot(Kind::kGroup)]);
  out += fmt::format("{:<18}{:>12}\n", "U-I Interactions", s.edges[relation_slot(Relation::kUI)]);
  out += fmt::format("{:<18}{:>12}\n", "G-I Interactions", s.edges[relation_slot(Relation::kGI)]);
  out += fmt::format("{:<18}{:>12}\n", "G-U Memberships", s.edges[relation_slot(Relation::kGU)]);
  out += fmt::format("{:<18}{:>12}\n", "U-U Edges", s.edges[relation_slot(Relation::kUU)]);
  out += fmt::format("{:<18}{:>12}\n", "G-G Edges", s.edges[relation_slot(Relation::kGG)]);
  out += fmt::format("{:<18}{:>11.3f}%\n", "U-I Sparsity", 100.0 * s.ui_sparsity);
  out += fmt::format("{:<18}{:>11.3f}%\n", "G-I Sparsity", 100.0 * s.gi_sparsity);
  return out;
}

namespace {

constexpr const char* kSplitHeader = "coldgraph-split v1";
constexpr const char* kGraphHeader = "coldgraph-graph v1";

void expect_header(std::istream& in, const std::string& file, const char* header) {
  std::string line;
  if (!std::getline(in, line) || line != header) {
    throw ParseError(file, 1, std::string("expected header `") + header + "`");
  }
}

}  // namespace

void write_split(const fs::path& path, const EvalSplit& s) {
  std::ofstream out = open_out(path);
  out << kSplitHeader << '\n';
  out << fmt::format("n_g {}\nn_u {}\nn_i {}\nc_percent {}\n", s.n_g, s.n_u, s.n_i, s.c_percent);
  for (Kind k : kAllKinds) {
    for (bool warm : {true, false}) {
      out << (warm ? "warm " : "cold ") << kind_name(k);
      for (int v : s.members(k, warm)) out << ' ' << v;
      out << '\n';
    }
  }
  out << "excluded group";
  for (int v : s.excluded_groups) out << ' ' << v;
  out << "\nexcluded user";
  for (int v : s.excluded_users) out << ' ' << v;
  out << '\n';
  const std::pair<const char*, const std::vector<Edge>*> lists[] = {
      {"train_gi", &s.train_gi}, {"test_gi", &s.test_gi},           {"train_ui", &s.train_ui},
      {"test_ui", &s.test_ui},   {"truncated_gi", &s.truncated_gi}, {"truncated_ui", &s.truncated_ui}};
  for (const auto& [name, edges] : lists) {
    out << "edges " << name << ' ' << edges->size() << '\n';
    for (const Edge& e : *edges) write_edge_line(out, e);
  }
}

EvalSplit read_split(const fs::path& path) {
  std::ifstream in = open_in(path);
  const std::string file = path.string();
  expect_header(in, file, kSplitHeader);
  EvalSplit s;
  std::array<std::vector<int>, 3> warm_ids, cold_ids;
  std::string line;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (skip_line(line)) continue;
    const auto f = split_fields(line);
    auto ints_from = [&](std::size_t first) {
      std::vector<int> v;
      for (std::size_t j = first; j < f.size(); ++j) {
        int x = 0;
        if (!parse_number(f[j], x)) throw ParseError(file, line_no, "bad index `" + f[j] + "`");
        v.push_back(x);
      }
      return v;
    };
    const std::string& key = f[0];
    if ((key == "n_g" || key == "n_u" || key == "n_i") && f.size() == 2) {
      int& dst = key == "n_g" ? s.n_g : key == "n_u" ? s.n_u : s.n_i;
      if (!parse_number(f[1], dst)) throw ParseError(file, line_no, "bad threshold");
    } else if (key == "c_percent" && f.size() == 2) {
      try {
        s.c_percent = std::stod(f[1]);
      } catch (const std::exception&) {
        throw ParseError(file, line_no, "bad c_percent");
      }
    } else if ((key == "warm" || key == "cold") && f.size() >= 2) {
      const auto kind = parse_kind(f[1]);
      if (!kind) throw ParseError(file, line_no, "unknown kind");
      (key == "warm" ? warm_ids : cold_ids)[kind_slot(*kind)] = ints_from(2);
    } else if (key == "excluded" && f.size() >= 2) {
      (f[1] == "group" ? s.excluded_groups : s.excluded_users) = ints_from(2);
    } else if (key == "edges" && f.size() == 3) {
      std::size_t n = 0;
      if (!parse_number(f[2], n)) throw ParseError(file, line_no, "bad edge count");
      std::vector<Edge>* dst = f[1] == "train_gi"       ? &s.train_gi
                               : f[1] == "test_gi"      ? &s.test_gi
                               : f[1] == "train_ui"     ? &s.train_ui
                               : f[1] == "test_ui"      ? &s.test_ui
                               : f[1] == "truncated_gi" ? &s.truncated_gi
                               : f[1] == "truncated_ui" ? &s.truncated_ui
                                                        : nullptr;
      if (dst == nullptr) throw ParseError(file, line_no, "unknown edge list `" + f[1] + "`");
      for (std::size_t j = 0; j < n; ++j) {
        if (!std::getline(in, line)) throw ParseError(file, line_no, "truncated edge list");
        ++line_no;
        dst->push_back(parse_edge_line(file, line_no, line));
      }
    } else {
      throw ParseError(file, line_no, "unrecognised line");
    }
  }
  for (Kind k : kAllKinds) {
    const std::size_t n = warm_ids[kind_slot(k)].size() + cold_ids[kind_slot(k)].size();
    auto& w = s.warm[kind_slot(k)];
    w.assign(n, false);
    for (int v : warm_ids[kind_slot(k)]) {
      if (v < 0 || static_cast<std::size_t>(v) >= n) throw ParseError(file, 0, "warm index out of range");
      w[static_cast<std::size_t>(v)] = true;
    }
  }
  return s;
}

void write_graph(const fs::path& path, const InteractionGraph& g) {
  std::ofstream out = open_out(path);
  out << kGraphHeader << '\n';
  out << "counts " << g.count(Kind::kUser) << ' ' << g.count(Kind::kItem) << ' ' << g.count(Kind::kGroup) << '\n';
  for (Relation r : kAllRelations) {
    out << "relation " << relation_name(r) << ' ' << g.edges(r).size() << '\n';
    for (const Edge& e : g.edges(r)) write_edge_line(out, e);
  }
}

InteractionGraph read_graph(const fs::path& path) {
  std::ifstream in = open_in(path);
  const std::string file = path.string();
  expect_header(in, file, kGraphHeader);
  std::array<int, 3> counts{};
  std::array<std::vector<Edge>, 5> rel;
  std::string line;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (skip_line(line)) continue;
    const auto f = split_fields(line);
    if (f[0] == "counts" && f.size() == 4) {
      for (std::size_t k = 0; k < 3; ++k)
        if (!parse_number(f[k + 1], counts[k])) throw ParseError(file, line_no, "bad count");
    } else if (f[0] == "relation" && f.size() == 3) {
      std::optional<Relation> r;
      for (Relation c : kAllRelations)
        if (f[1] == relation_name(c)) r = c;
      std::size_t n = 0;
      if (!r || !parse_number(f[2], n)) throw ParseError(file, line_no, "bad relation header");
      for (std::size_t j = 0; j < n; ++j) {
        if (!std::getline(in, line)) throw ParseError(file, line_no, "truncated relation");
        ++line_no;
        rel[relation_slot(*r)].push_back(parse_edge_line(file, line_no, line));
      }
    } else {
      throw ParseError(file, line_no, "unrecognised line");
    }
  }
  return InteractionGraph(counts, std::move(rel));
}

}  // namespace coldgraph
