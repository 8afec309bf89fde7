// Serial reference kernels against their OpenMP versions: wall time and a
// bitwise equality check of the outputs.
//
//   bench_kernels [--threads N] [--reps R]

#include <CLI11.hpp>
#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cstring>
#include <functional>
#include <random>

#include "coldgraph/kernels.hpp"

using namespace coldgraph::kernels;

namespace {

std::vector<double> random_values(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

double best_of(int reps, const std::function<void()>& f) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  return best;
}

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

void row(const char* name, double serial, double par, bool equal) {
  fmt::print("{:<22}{:>12.4f}{:>12.4f}{:>9.2f}x  {}\n", name, serial * 1e3, par * 1e3, serial / par,
             equal ? "identical" : "MISMATCH");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"serial vs OpenMP kernel benchmark"};
  int threads = 0, reps = 5;
  app.add_option("--threads", threads, "OpenMP worker cap (0 = default)");
  app.add_option("--reps", reps, "repetitions, best time reported");
  CLI11_PARSE(app, argc, argv);
  set_threads(threads);

  std::mt19937_64 rng(42);
  fmt::print("threads: {}\n{:<22}{:>12}{:>12}{:>10}\n", max_threads(), "kernel", "serial ms", "openmp ms", "speedup");
  bool all_equal = true;

  {
    const GemmShape s{512, 64, 256};
    const auto a = random_values(rng, s.m * s.k), b = random_values(rng, s.k * s.n);
    std::vector<double> c1(s.m * s.n), c2(s.m * s.n);
    const double t1 = best_of(reps, [&] { reference::gemm(s, a, false, b, false, c1, false); });
    const double t2 = best_of(reps, [&] { parallel::gemm(s, a, false, b, false, c2, false); });
    all_equal &= same_bits(c1, c2);
    row("gemm 512x256x64", t1, t2, same_bits(c1, c2));
  }
  {
    const std::size_t rows = 200000, cols = 64, segs = 20000;
    const auto x = random_values(rng, rows * cols);
    std::vector<std::size_t> offsets(segs + 1);
    for (std::size_t s = 0; s <= segs; ++s) offsets[s] = s * rows / segs;
    std::vector<double> o1(segs * cols), o2(segs * cols);
    const double t1 = best_of(reps, [&] { reference::segment_mean(x, cols, offsets, o1); });
    const double t2 = best_of(reps, [&] { parallel::segment_mean(x, cols, offsets, o2); });
    all_equal &= same_bits(o1, o2);
    row("segment_mean", t1, t2, same_bits(o1, o2));
  }
  {
    const std::size_t src_rows = 20000, dst_rows = 2000, cols = 64;
    const auto x = random_values(rng, src_rows * cols);
    std::vector<int> index(200000);
    for (int& i : index) i = static_cast<int>(rng() % src_rows);
    std::vector<double> g1(index.size() * cols), g2(index.size() * cols);
    const double t1 = best_of(reps, [&] { reference::gather_rows(x, cols, index, g1); });
    const double t2 = best_of(reps, [&] { parallel::gather_rows(x, cols, index, g2); });
    all_equal &= same_bits(g1, g2);
    row("gather_rows", t1, t2, same_bits(g1, g2));

    std::vector<int> dst_index(index.size());
    for (int& i : dst_index) i = static_cast<int>(rng() % dst_rows);
    std::vector<double> d1(dst_rows * cols), d2(dst_rows * cols);
    const double t3 = best_of(reps, [&] {
      std::fill(d1.begin(), d1.end(), 0.0);
      reference::scatter_add_rows(g1, cols, dst_index, d1);
    });
    const double t4 = best_of(reps, [&] {
      std::fill(d2.begin(), d2.end(), 0.0);
      parallel::scatter_add_rows(g1, cols, dst_index, d2);
    });
    all_equal &= same_bits(d1, d2);
    row("scatter_add_rows", t3, t4, same_bits(d1, d2));
  }
  {
    const std::size_t nodes = 3000, items = 1500;
    std::vector<std::size_t> offsets{0};
    std::vector<int> indices;
    for (std::size_t n = 0; n < nodes; ++n) {
      std::vector<int> nb;
      for (int k = 0; k < 40; ++k) nb.push_back(static_cast<int>(rng() % items));
      std::sort(nb.begin(), nb.end());
      nb.erase(std::unique(nb.begin(), nb.end()), nb.end());
      indices.insert(indices.end(), nb.begin(), nb.end());
      offsets.push_back(indices.size());
    }
    const CsrView adj{offsets, indices};
    std::vector<Pair> p1, p2;
    const double t1 = best_of(reps, [&] { p1 = reference::shared_neighbor_pairs(adj, 3); });
    const double t2 = best_of(reps, [&] { p2 = parallel::shared_neighbor_pairs(adj, 3); });
    all_equal &= p1 == p2;
    row("shared_neighbor_pairs", t1, t2, p1 == p2);
  }
  {
    const std::size_t queries = 2000, items = 5000, dim = 64, k = 20;
    const auto q = random_values(rng, queries * dim), it = random_values(rng, items * dim);
    std::vector<std::vector<int>> exclude(queries);
    for (auto& e : exclude) {
      for (int j = 0; j < 10; ++j) e.push_back(static_cast<int>(rng() % items));
      std::sort(e.begin(), e.end());
      e.erase(std::unique(e.begin(), e.end()), e.end());
    }
    std::vector<std::vector<int>> r1, r2;
    const double t1 = best_of(reps, [&] { r1 = reference::batch_topk(q, it, dim, exclude, k); });
    const double t2 = best_of(reps, [&] { r2 = parallel::batch_topk(q, it, dim, exclude, k); });
    all_equal &= r1 == r2;
    row("batch_topk", t1, t2, r1 == r2);
  }
  return all_equal ? 0 : 1;
}
