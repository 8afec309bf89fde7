#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "coldgraph/graph.hpp"
#include "coldgraph/tensor.hpp"

namespace coldgraph {

// Reconstruction targets per warm node, one count x d table per kind.
struct GroundTruthTable {
  std::array<Tensor, 3> table;
  std::array<std::vector<bool>, 3> covered;
  std::string provenance;

  int d() const { return static_cast<int>(table[0].cols); }
  bool has(NodeId n) const;
  // Throws coldgraph::Error when n is not covered.
  std::span<const double> row(NodeId n) const;
};

}  // namespace coldgraph
