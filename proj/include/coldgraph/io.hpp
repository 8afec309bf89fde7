#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "coldgraph/graph.hpp"

namespace coldgraph {

// External id <-> dense index per kind.
class IdMap {
 public:
  // Returns the dense index, registering the id if it is new.
  int intern(Kind k, const std::string& external);
  std::optional<int> find(Kind k, const std::string& external) const;
  const std::string& external(Kind k, int index) const;
  int size(Kind k) const { return static_cast<int>(names_[kind_slot(k)].size()); }

  // ids.tsv: kind <TAB> external_id <TAB> dense_index.
  void write(const std::filesystem::path& path) const;
  // Throws ParseError on malformed rows, unknown kinds, a repeated
  // (kind, external id), or indices that are repeated or not dense.
  static IdMap read(const std::filesystem::path& path);

 private:
  std::array<std::vector<std::string>, 3> names_;
  std::array<std::unordered_map<std::string, int>, 3> index_;
};

struct EdgeFiles {
  std::filesystem::path user_item;
  std::filesystem::path group_item;
  std::filesystem::path group_user;

  static EdgeFiles in_dir(const std::filesystem::path& dir);
};

struct LoadedGraph {
  InteractionGraph graph;
  IdMap ids;
};

// Reads the three edge lists. Rows are `id <TAB> id [<TAB> timestamp]`
// (group_user.tsv takes no timestamp); `#` lines and blank lines are skipped.
// Ids are re-indexed densely in order of first appearance unless `prior`
// already maps them. Throws MissingInputError naming a missing file and
// ParseError with the line number of a malformed row.
LoadedGraph load_edges(const EdgeFiles& files, const IdMap* prior = nullptr);

void write_edges(const EdgeFiles& files, const InteractionGraph& g, const IdMap* ids = nullptr);

struct GraphStats {
  std::array<int, 3> counts{};
  std::array<std::size_t, 5> edges{};
  double ui_sparsity = 0.0;  // |UI| / (|U| |I|)
  double gi_sparsity = 0.0;  // |GI| / (|G| |I|)
};

GraphStats graph_stats(const InteractionGraph& g);
std::string format_stats(const GraphStats& s);

// Split manifest, header `coldgraph-split v1`.
void write_split(const std::filesystem::path& path, const EvalSplit& s);
EvalSplit read_split(const std::filesystem::path& path);

// Dense-index graph cache, header `coldgraph-graph v1`.
void write_graph(const std::filesystem::path& path, const InteractionGraph& g);
InteractionGraph read_graph(const std::filesystem::path& path);

}  // namespace coldgraph
