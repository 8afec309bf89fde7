#include "coldgraph/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <numeric>

namespace coldgraph::kernels {
namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1u << 14;

inline double a_at(std::span<const double> a, bool trans, std::size_t m, std::size_t k,
                   std::size_t i, std::size_t p) {
  return trans ? a[p * m + i] : a[i * k + p];
}

// One output row of the product; shared by both variants so the summation
// order (p ascending) is identical.
inline void gemm_row(GemmShape s, std::span<const double> a, bool trans_a,
                     std::span<const double> b, bool trans_b, std::span<double> c,
                     bool accumulate, std::size_t i, std::vector<double>& tmp) {
  double* crow = c.data() + i * s.n;
  if (trans_b) {
    for (std::size_t j = 0; j < s.n; ++j) {
      const double* brow = b.data() + j * s.k;
      double acc = 0.0;
      for (std::size_t p = 0; p < s.k; ++p) acc += a_at(a, trans_a, s.m, s.k, i, p) * brow[p];
      crow[j] = accumulate ? crow[j] + acc : acc;
    }
    return;
  }
  tmp.assign(s.n, 0.0);
  for (std::size_t p = 0; p < s.k; ++p) {
    const double av = a_at(a, trans_a, s.m, s.k, i, p);
    const double* brow = b.data() + p * s.n;
    for (std::size_t j = 0; j < s.n; ++j) tmp[j] += av * brow[j];
  }
  for (std::size_t j = 0; j < s.n; ++j) crow[j] = accumulate ? crow[j] + tmp[j] : tmp[j];
}

inline void segment_mean_one(std::span<const double> x, std::size_t cols,
                             std::span<const std::size_t> offsets, std::span<double> out,
                             std::size_t seg) {
  double* o = out.data() + seg * cols;
  std::fill(o, o + cols, 0.0);
  const std::size_t begin = offsets[seg], end = offsets[seg + 1];
  if (begin == end) return;
  for (std::size_t r = begin; r < end; ++r) {
    const double* xr = x.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) o[c] += xr[c];
  }
  const double n = static_cast<double>(end - begin);
  for (std::size_t c = 0; c < cols; ++c) o[c] /= n;
}

inline std::vector<int> topk_one(std::span<const double> queries, std::span<const double> items,
                                 std::size_t dim, const std::vector<int>& exclude, std::size_t k,
                                 std::size_t q) {
  const std::size_t n_items = items.size() / dim;
  const double* qv = queries.data() + q * dim;
  std::vector<double> score(n_items);
  for (std::size_t i = 0; i < n_items; ++i) {
    const double* iv = items.data() + i * dim;
    double s = 0.0;
    for (std::size_t c = 0; c < dim; ++c) s += qv[c] * iv[c];
    score[i] = s;
  }
  std::vector<int> cand;
  cand.reserve(n_items);
  for (std::size_t i = 0; i < n_items; ++i) {
    if (!std::binary_search(exclude.begin(), exclude.end(), static_cast<int>(i))) {
      cand.push_back(static_cast<int>(i));
    }
  }
  const std::size_t take = std::min(k, cand.size());
  auto better = [&](int x, int y) {
    if (score[x] != score[y]) return score[x] > score[y];
    return x < y;
  };
  std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(take), cand.end(),
                    better);
  cand.resize(take);
  return cand;
}

// Transpose of a CSR adjacency whose column ids are < n_cols.
struct Transposed {
  std::vector<std::size_t> offsets;
  std::vector<int> indices;
};

Transposed transpose(CsrView adj) {
  const std::size_t rows = adj.offsets.size() - 1;
  int n_cols = 0;
  for (int c : adj.indices) n_cols = std::max(n_cols, c + 1);
  Transposed t;
  t.offsets.assign(static_cast<std::size_t>(n_cols) + 1, 0);
  for (int c : adj.indices) ++t.offsets[static_cast<std::size_t>(c) + 1];
  std::partial_sum(t.offsets.begin(), t.offsets.end(), t.offsets.begin());
  t.indices.resize(adj.indices.size());
  std::vector<std::size_t> fill(t.offsets.begin(), t.offsets.end() - 1);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t e = adj.offsets[r]; e < adj.offsets[r + 1]; ++e) {
      t.indices[fill[static_cast<std::size_t>(adj.indices[e])]++] = static_cast<int>(r);
    }
  }
  return t;
}

}  // namespace

namespace reference {

void gemm(GemmShape s, std::span<const double> a, bool trans_a, std::span<const double> b,
          bool trans_b, std::span<double> c, bool accumulate) {
  std::vector<double> tmp;
  for (std::size_t i = 0; i < s.m; ++i) gemm_row(s, a, trans_a, b, trans_b, c, accumulate, i, tmp);
}

void segment_mean(std::span<const double> x, std::size_t cols, std::span<const std::size_t> offsets,
                  std::span<double> out) {
  for (std::size_t s = 0; s + 1 < offsets.size(); ++s) segment_mean_one(x, cols, offsets, out, s);
}

void gather_rows(std::span<const double> x, std::size_t cols, std::span<const int> index,
                 std::span<double> out) {
  for (std::size_t r = 0; r < index.size(); ++r) {
    std::copy_n(x.data() + static_cast<std::size_t>(index[r]) * cols, cols, out.data() + r * cols);
  }
}

void scatter_add_rows(std::span<const double> src, std::size_t cols, std::span<const int> index,
                      std::span<double> dst) {
  for (std::size_t r = 0; r < index.size(); ++r) {
    double* d = dst.data() + static_cast<std::size_t>(index[r]) * cols;
    const double* sr = src.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) d[c] += sr[c];
  }
}

std::vector<Pair> shared_neighbor_pairs(CsrView adj, int threshold) {
  // Pairwise sorted-merge intersection.
  const std::size_t rows = adj.offsets.size() - 1;
  std::vector<Pair> out;
  for (std::size_t a = 0; a < rows; ++a) {
    for (std::size_t b = a + 1; b < rows; ++b) {
      std::size_t i = adj.offsets[a], j = adj.offsets[b];
      int shared = 0;
      while (i < adj.offsets[a + 1] && j < adj.offsets[b + 1]) {
        if (adj.indices[i] < adj.indices[j]) {
          ++i;
        } else if (adj.indices[j] < adj.indices[i]) {
          ++j;
        } else {
          ++shared, ++i, ++j;
        }
      }
      if (shared > threshold) out.emplace_back(static_cast<int>(a), static_cast<int>(b));
    }
  }
  return out;
}

std::vector<std::vector<int>> batch_topk(std::span<const double> queries,
                                         std::span<const double> items, std::size_t dim,
                                         const std::vector<std::vector<int>>& exclude,
                                         std::size_t k) {
  const std::size_t nq = dim == 0 ? 0 : queries.size() / dim;
  std::vector<std::vector<int>> out(nq);
  for (std::size_t q = 0; q < nq; ++q) out[q] = topk_one(queries, items, dim, exclude[q], k, q);
  return out;
}

}  // namespace reference

namespace parallel {

void gemm(GemmShape s, std::span<const double> a, bool trans_a, std::span<const double> b,
          bool trans_b, std::span<double> c, bool accumulate) {
  const bool par = s.m * s.n * s.k >= kParallelWork;
#pragma omp parallel if (par)
  {
    std::vector<double> tmp;
#pragma omp for schedule(static)
    for (std::size_t i = 0; i < s.m; ++i) gemm_row(s, a, trans_a, b, trans_b, c, accumulate, i, tmp);
  }
}

void segment_mean(std::span<const double> x, std::size_t cols, std::span<const std::size_t> offsets,
                  std::span<double> out) {
  const std::size_t n_seg = offsets.empty() ? 0 : offsets.size() - 1;
  const bool par = x.size() >= kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (std::size_t s = 0; s < n_seg; ++s) segment_mean_one(x, cols, offsets, out, s);
}

void gather_rows(std::span<const double> x, std::size_t cols, std::span<const int> index,
                 std::span<double> out) {
  const bool par = index.size() * cols >= kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (std::size_t r = 0; r < index.size(); ++r) {
    std::copy_n(x.data() + static_cast<std::size_t>(index[r]) * cols, cols, out.data() + r * cols);
  }
}

void scatter_add_rows(std::span<const double> src, std::size_t cols, std::span<const int> index,
                      std::span<double> dst) {
  // Each thread owns a contiguous column block, so per-element order stays ascending in r.
  const bool par = index.size() * cols >= kParallelWork;
#pragma omp parallel if (par)
  {
    const auto nt = static_cast<std::size_t>(omp_get_num_threads());
    const auto tid = static_cast<std::size_t>(omp_get_thread_num());
    const std::size_t c0 = cols * tid / nt, c1 = cols * (tid + 1) / nt;
    for (std::size_t r = 0; r < index.size() && c0 < c1; ++r) {
      double* d = dst.data() + static_cast<std::size_t>(index[r]) * cols;
      const double* s = src.data() + r * cols;
      for (std::size_t c = c0; c < c1; ++c) d[c] += s[c];
    }
  }
}

std::vector<Pair> shared_neighbor_pairs(CsrView adj, int threshold) {
  // Counting through the transposed adjacency: one pass over two-hop walks per row.
  const std::size_t rows = adj.offsets.size() - 1;
  const Transposed t = transpose(adj);
  std::vector<std::vector<int>> partners(rows);
#pragma omp parallel
  {
    std::vector<int> count(rows, 0);
    std::vector<int> touched;
#pragma omp for schedule(dynamic, 16)
    for (std::size_t a = 0; a < rows; ++a) {
      touched.clear();
      for (std::size_t e = adj.offsets[a]; e < adj.offsets[a + 1]; ++e) {
        const auto x = static_cast<std::size_t>(adj.indices[e]);
        for (std::size_t f = t.offsets[x]; f < t.offsets[x + 1]; ++f) {
          const int b = t.indices[f];
          if (b <= static_cast<int>(a)) continue;
          if (count[static_cast<std::size_t>(b)]++ == 0) touched.push_back(b);
        }
      }
      std::sort(touched.begin(), touched.end());
      for (int b : touched) {
        if (count[static_cast<std::size_t>(b)] > threshold) partners[a].push_back(b);
        count[static_cast<std::size_t>(b)] = 0;
      }
    }
  }
  std::vector<Pair> out;
  for (std::size_t a = 0; a < rows; ++a) {
    for (int b : partners[a]) out.emplace_back(static_cast<int>(a), b);
  }
  return out;
}

std::vector<std::vector<int>> batch_topk(std::span<const double> queries,
                                         std::span<const double> items, std::size_t dim,
                                         const std::vector<std::vector<int>>& exclude,
                                         std::size_t k) {
  const std::size_t nq = dim == 0 ? 0 : queries.size() / dim;
  std::vector<std::vector<int>> out(nq);
#pragma omp parallel for schedule(dynamic, 4)
  for (std::size_t q = 0; q < nq; ++q) out[q] = topk_one(queries, items, dim, exclude[q], k, q);
  return out;
}

}  // namespace parallel

void set_threads(int n) {
  if (n > 0) omp_set_num_threads(n);
}

int max_threads() { return omp_get_max_threads(); }

}  // namespace coldgraph::kernels
