#pragma once

// Data-parallel inner loops. Every kernel has a serial reference version and
// an OpenMP version with an identical signature. The parallel versions assign
// each output element to exactly one thread and accumulate in the same order
// as the reference, so both produce bit-identical results.

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

namespace coldgraph::kernels {

struct GemmShape {
  std::size_t m, n, k;
};

// Sorted per-row adjacency in CSR form.
struct CsrView {
  std::span<const std::size_t> offsets;  // rows + 1 entries
  std::span<const int> indices;
};

using Pair = std::pair<int, int>;

namespace reference {

// C (+)= op(A) * op(B) with op(A) m x k, op(B) k x n and C m x n.
void gemm(GemmShape s, std::span<const double> a, bool trans_a, std::span<const double> b,
          bool trans_b, std::span<double> c, bool accumulate);

// out[s] = mean of rows [offsets[s], offsets[s+1]) of x; an empty segment gives a zero row.
void segment_mean(std::span<const double> x, std::size_t cols, std::span<const std::size_t> offsets,
                  std::span<double> out);

void gather_rows(std::span<const double> x, std::size_t cols, std::span<const int> index,
                 std::span<double> out);

// dst[index[r]] += src[r], visiting r in ascending order for every destination element.
void scatter_add_rows(std::span<const double> src, std::size_t cols, std::span<const int> index,
                      std::span<double> dst);

// All (a, b), a < b, whose sorted neighbour lists share more than `threshold` entries.
std::vector<Pair> shared_neighbor_pairs(CsrView adj, int threshold);

// Top-k item ids by queries * items^T per query row, skipping the (sorted) excluded ids of
// that query. Ties go to the lower item index.
std::vector<std::vector<int>> batch_topk(std::span<const double> queries,
                                         std::span<const double> items, std::size_t dim,
                                         const std::vector<std::vector<int>>& exclude,
                                         std::size_t k);

}  // namespace reference

namespace parallel {

void gemm(GemmShape s, std::span<const double> a, bool trans_a, std::span<const double> b,
          bool trans_b, std::span<double> c, bool accumulate);
void segment_mean(std::span<const double> x, std::size_t cols, std::span<const std::size_t> offsets,
                  std::span<double> out);
void gather_rows(std::span<const double> x, std::size_t cols, std::span<const int> index,
                 std::span<double> out);
void scatter_add_rows(std::span<const double> src, std::size_t cols, std::span<const int> index,
                      std::span<double> dst);
std::vector<Pair> shared_neighbor_pairs(CsrView adj, int threshold);
std::vector<std::vector<int>> batch_topk(std::span<const double> queries,
                                         std::span<const double> items, std::size_t dim,
                                         const std::vector<std::vector<int>>& exclude,
                                         std::size_t k);

}  // namespace parallel

// Caps the worker count of the parallel kernels; n <= 0 keeps the OpenMP default.
void set_threads(int n);
int max_threads();

}  // namespace coldgraph::kernels
