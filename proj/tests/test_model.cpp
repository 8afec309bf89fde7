#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "coldgraph/enhancer.hpp"
#include "coldgraph/error.hpp"
#include "coldgraph/model.hpp"
#include "coldgraph/train.hpp"
#include "test_support.hpp"

using namespace coldgraph;
using coldgraph::testing::random_hetero;
using coldgraph::testing::random_tensor;

namespace {

ModelParams small_model(int d, int L, Backbone b, std::array<int, 3> counts = {1, 1, 1}, bool meta = false,
                        std::uint64_t seed = 3) {
  return init_model(ModelConfig{d, L, b, MemberAgg::kAttention, meta}, counts, seed);
}

Tensor row(std::span<const double> v) { return Tensor(1, v.size(), std::vector<double>(v.begin(), v.end())); }

void check_close(const Tensor& a, const Tensor& b, double tol) {
  REQUIRE(a.same_shape(b));
  for (std::size_t i = 0; i < a.data.size(); ++i) CHECK(a.data[i] == doctest::Approx(b.data[i]).epsilon(tol));
}

}  // namespace

TEST_CASE("conv_step light arithmetic") {
  const ModelParams p = small_model(2, 1, Backbone::kLight);
  const Tensor out = conv_step(p, Relation::kUI, 1, Tensor::row({1, 0}), {Tensor::row({0, 1}), Tensor::row({1, 1})});
  CHECK(out(0, 0) == doctest::Approx(0.75));
  CHECK(out(0, 1) == doctest::Approx(0.5));

  const Tensor self = Tensor::row({0.3, -0.7});
  CHECK(conv_step(p, Relation::kGI, 1, self, {self, self, self}) == self);
  // Empty neighbour list means a zero mean.
  const Tensor half = conv_step(p, Relation::kGI, 1, self, {});
  CHECK(half(0, 0) == doctest::Approx(0.15));
}

TEST_CASE("conv_step gcn with zero weights gives zero") {
  ModelParams p = small_model(3, 2, Backbone::kGcn);
  for (Tensor& w : p.conv) std::fill(w.data.begin(), w.data.end(), 0.0);
  const Tensor out = conv_step(p, Relation::kUU, 2, Tensor::row({1, 2, 3}), {Tensor::row({-1, 4, 0})});
  CHECK(out == Tensor(1, 3));
}

TEST_CASE("conv_step gcn matches relu of concat times weight") {
  std::mt19937_64 rng(5);
  const ModelParams p = small_model(3, 1, Backbone::kGcn);
  const Tensor s = random_tensor(rng, 1, 3), n1 = random_tensor(rng, 1, 3), n2 = random_tensor(rng, 1, 3);
  const Tensor out = conv_step(p, Relation::kUI, 1, s, {n1, n2});
  for (std::size_t j = 0; j < 3; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < 3; ++i) acc += s(0, i) * p.conv[0](i, j) + 0.5 * (n1(0, i) + n2(0, i)) * p.conv[0](i + 3, j);
    CHECK(out(0, j) == doctest::Approx(std::max(0.0, acc)));
  }
}

TEST_CASE("conv_step meta injection") {
  std::mt19937_64 rng(6);
  ModelParams p = small_model(2, 1, Backbone::kLight, {1, 1, 1}, true);
  const Tensor s = random_tensor(rng, 1, 2), n = random_tensor(rng, 1, 2), m = random_tensor(rng, 1, 2);
  // P_r starts as [I; 0], so the meta embedding is ignored exactly.
  CHECK(conv_step(p, Relation::kGI, 1, s, {n}, m) == conv_step(p, Relation::kGI, 1, s, {n}));
  // P_r = [0; I] replaces self by meta.
  Tensor& P = p.P[relation_slot(Relation::kGI)];
  std::fill(P.data.begin(), P.data.end(), 0.0);
  P(2, 0) = P(3, 1) = 1.0;
  check_close(conv_step(p, Relation::kGI, 1, s, {n}, m), conv_step(p, Relation::kGI, 1, m, {n}), 1e-12);

  const ModelParams plain = small_model(2, 1, Backbone::kLight);
  CHECK_THROWS_AS(conv_step(plain, Relation::kGI, 1, s, {n}, m), Error);
}

TEST_CASE("conv_step rejects bad input") {
  const ModelParams p = small_model(2, 1, Backbone::kLight);
  CHECK_THROWS_AS(conv_step(p, Relation::kUI, 1, Tensor::row({1, 2, 3}), {}), ShapeError);
  CHECK_THROWS_AS(conv_step(p, Relation::kUI, 1, Tensor::row({1, NAN}), {}), Error);
  CHECK_THROWS_AS(conv_step(p, Relation::kUI, 1, Tensor::row({1, 2}), {Tensor::row({INFINITY, 0})}), Error);
}

TEST_CASE("propagate L=1 on a star equals one conv step") {
  std::array<std::vector<Edge>, 5> rel;
  for (int i = 0; i < 4; ++i) rel[relation_slot(Relation::kUI)].push_back(Edge{0, i, 0, false});
  const InteractionGraph g({1, 4, 0}, rel);
  for (Backbone b : {Backbone::kLight, Backbone::kGcn}) {
    const ModelParams p = small_model(4, 1, b, g.counts());
    const Episode ep = expand_full(g, {Kind::kUser, 0}, 1);
    std::vector<Tensor> nb;
    for (int i = 0; i < 4; ++i) nb.push_back(row(p.E[1].row_span(static_cast<std::size_t>(i))));
    check_close(propagate(p, ep, Relation::kUI), conv_step(p, Relation::kUI, 1, row(p.E[0].row_span(0)), nb), 1e-12);
  }
}

TEST_CASE("propagate L=2 on a toy tree matches the unrolled recursion") {
  // u0-i0, u0-i1, u1-i0, u2-i0, u3-i1, u4-i1: seven nodes.
  std::array<std::vector<Edge>, 5> rel;
  for (auto [u, i] : std::vector<std::pair<int, int>>{{0, 0}, {0, 1}, {1, 0}, {2, 0}, {3, 1}, {4, 1}})
    rel[relation_slot(Relation::kUI)].push_back(Edge{u, i, 0, false});
  const InteractionGraph g({5, 2, 0}, rel);
  const ModelParams p = small_model(3, 2, Backbone::kLight, g.counts());
  auto E = [&](Kind k, int v) { return p.E[kind_slot(k)].row_span(static_cast<std::size_t>(v)); };
  auto item_h1 = [&](int i, std::vector<int> users) {
    std::vector<double> h(3);
    for (std::size_t c = 0; c < 3; ++c) {
      double m = 0.0;
      for (int u : users) m += E(Kind::kUser, u)[c];
      h[c] = 0.5 * (E(Kind::kItem, i)[c] + m / static_cast<double>(users.size()));
    }
    return h;
  };
  const auto h0 = item_h1(0, {0, 1, 2});
  const auto h1 = item_h1(1, {0, 3, 4});
  const Tensor out = propagate(p, expand_full(g, {Kind::kUser, 0}, 2), Relation::kUI);
  for (std::size_t c = 0; c < 3; ++c)
    CHECK(out(0, c) == doctest::Approx(0.5 * (E(Kind::kUser, 0)[c] + 0.5 * (h0[c] + h1[c]))).epsilon(1e-12));
}

TEST_CASE("propagate with an empty neighbourhood returns the layer-0 row") {
  const InteractionGraph g({2, 2, 1}, {});
  const ModelParams p = small_model(4, 3, Backbone::kLight, g.counts());
  for (Relation r : {Relation::kGI, Relation::kGU, Relation::kGG}) {
    CHECK(propagate(p, expand_full(g, {Kind::kGroup, 0}, 3), r) == row(p.E[2].row_span(0)));
  }
}

TEST_CASE("aggregate_members") {
  const Tensor score_vec(2, 1, 0.0);
  const Tensor v = Tensor::row({0.4, -1.2});
  check_close(aggregate_members({v, v, v}, MemberAgg::kAverage, score_vec), v, 1e-15);
  CHECK(aggregate_members({Tensor::row({1, 0}), Tensor::row({0, 1})}, MemberAgg::kSum, score_vec) == Tensor::row({1, 1}));
  const Tensor mid = aggregate_members({Tensor::row({1, 3}), Tensor::row({3, -1})}, MemberAgg::kAttention, score_vec);
  check_close(mid, Tensor::row({2, 1}), 1e-12);
  CHECK(aggregate_members({Tensor::row({1, -3}), Tensor::row({0, 2})}, MemberAgg::kMaxPool, score_vec) ==
        Tensor::row({1, 2}));
  CHECK_THROWS_WITH_AS(aggregate_members({}, MemberAgg::kAverage, score_vec), "group without members", Error);

  // Attention weights follow softmax of member . score_vec.
  const Tensor sv(2, 1, std::vector<double>{1.0, 0.0});
  const Tensor a = aggregate_members({Tensor::row({1, 0}), Tensor::row({0, 1})}, MemberAgg::kAttention, sv);
  const double w = std::exp(1.0) / (std::exp(1.0) + 1.0);
  check_close(a, Tensor::row({w, 1 - w}), 1e-12);
}

TEST_CASE("fuse_channels") {
  std::mt19937_64 rng(11);
  const Tensor h = random_tensor(rng, 1, 3);
  std::vector<Tensor> W = {random_tensor(rng, 3, 3), random_tensor(rng, 3, 3), random_tensor(rng, 3, 3)};

  SUBCASE("one channel") {
    ChannelEmbeddings ch{{h, std::nullopt, std::nullopt}, {}};
    CHECK(fuse_channels(ch, W) == h);
    CHECK(ch.a == std::vector<double>{1.0, 0.0, 0.0});
  }
  SUBCASE("identical logits split evenly") {
    ChannelEmbeddings ch{{h, h}, {}};
    const Tensor out = fuse_channels(ch, {W[0], W[0]});
    CHECK(ch.a[0] == doctest::Approx(0.5));
    CHECK(ch.a[1] == doctest::Approx(0.5));
    check_close(out, h, 1e-12);
  }
  SUBCASE("three channels against a scalar softmax") {
    std::vector<Tensor> hs = {random_tensor(rng, 1, 3), random_tensor(rng, 1, 3), random_tensor(rng, 1, 3)};
    ChannelEmbeddings ch{{hs[0], hs[1], hs[2]}, {}};
    const Tensor out = fuse_channels(ch, W);
    std::vector<double> logit(3), a(3);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) logit[c] += hs[c](0, i) * W[c](i, j);
    double z = 0.0;
    for (std::size_t c = 0; c < 3; ++c) z += std::exp(logit[c]);
    for (std::size_t c = 0; c < 3; ++c) {
      a[c] = std::exp(logit[c]) / z;
      CHECK(ch.a[c] == doctest::Approx(a[c]).epsilon(1e-12));
    }
    for (std::size_t j = 0; j < 3; ++j)
      CHECK(out(0, j) == doctest::Approx(a[0] * hs[0](0, j) + a[1] * hs[1](0, j) + a[2] * hs[2](0, j)).epsilon(1e-12));
  }
  SUBCASE("absent channels get no weight") {
    ChannelEmbeddings ch{{h, std::nullopt, random_tensor(rng, 1, 3)}, {}};
    fuse_channels(ch, W);
    CHECK(ch.a[1] == 0.0);
    CHECK(ch.a[0] + ch.a[2] == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("all absent") {
    ChannelEmbeddings ch{{std::nullopt, std::nullopt}, {}};
    CHECK_THROWS_AS(fuse_channels(ch, {W[0], W[1]}), Error);
  }
}

TEST_CASE("fusion weights form a probability vector") {
  std::mt19937_64 rng(12);
  std::bernoulli_distribution present(0.6);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t C = 1 + rng() % 4;
    std::vector<std::optional<Tensor>> hs(C);
    std::vector<Tensor> W;
    bool any = false;
    for (std::size_t c = 0; c < C; ++c) {
      if (present(rng)) {
        hs[c] = random_tensor(rng, 1, 4, -3, 3);
        any = true;
      }
      W.push_back(random_tensor(rng, 4, 4, -2, 2));
    }
    if (!any) hs[0] = random_tensor(rng, 1, 4);
    ChannelEmbeddings ch{hs, {}};
    fuse_channels(ch, W);
    double s = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      CHECK(ch.a[c] >= 0.0);
      if (!hs[c]) CHECK(ch.a[c] == 0.0);
      s += ch.a[c];
    }
    CHECK(std::abs(s - 1.0) < 1e-10);
  }
}

TEST_CASE("score") {
  const std::vector<double> a{1, 2}, b{3, 4}, z{0, 0};
  CHECK(score(a, b) == 11.0);
  CHECK(score(a, z) == 0.0);
  CHECK_THROWS_AS(score(a, std::vector<double>{1.0}), ShapeError);

  // Adding a vector orthogonal to every item embedding keeps the ranking.
  std::mt19937_64 rng(13);
  Tensor items = random_tensor(rng, 30, 3);
  for (std::size_t i = 0; i < items.rows; ++i) items(i, 2) = 0.0;
  const std::vector<double> q{0.3, -0.8, 0.0}, q2{0.3, -0.8, 5.0};
  auto best = [&](const std::vector<double>& v) {
    int arg = 0;
    for (int i = 1; i < 30; ++i)
      if (score(v, items.row_span(static_cast<std::size_t>(i))) > score(v, items.row_span(static_cast<std::size_t>(arg))))
        arg = i;
    return arg;
  };
  CHECK(best(q) == best(q2));
}

TEST_CASE("light L=1 full propagation equals the adjacency-mean oracle") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 40; ++trial) {
    const int nu = 1 + static_cast<int>(rng() % 15), ni = 1 + static_cast<int>(rng() % 15);
    std::array<std::vector<Edge>, 5> rel;
    std::bernoulli_distribution b(0.25);
    for (int u = 0; u < nu; ++u)
      for (int i = 0; i < ni; ++i)
        if (b(rng)) rel[relation_slot(Relation::kUI)].push_back(Edge{u, i, 0, false});
    const InteractionGraph g({nu, ni, 0}, rel);
    const ModelParams p = small_model(3, 1, Backbone::kLight, g.counts(), false, rng());
    const auto out = infer_full(p, g);
    for (Kind k : {Kind::kUser, Kind::kItem}) {
      for (int v = 0; v < g.count(k); ++v) {
        const auto nb = g.neighbors(Relation::kUI, {k, v});
        const auto self = p.E[kind_slot(k)].row_span(static_cast<std::size_t>(v));
        for (std::size_t c = 0; c < 3; ++c) {
          double expect = self[c];
          if (!nb.empty()) {
            double m = 0.0;
            for (int o : nb) m += p.E[kind_slot(other_kind(Relation::kUI, k))](static_cast<std::size_t>(o), c);
            expect = 0.5 * (self[c] + m / static_cast<double>(nb.size()));
          }
          CHECK(out[kind_slot(k)](static_cast<std::size_t>(v), c) == doctest::Approx(expect).epsilon(1e-12));
        }
        if (k == Kind::kUser) {
          const Tensor ep = propagate(p, expand_full(g, {k, v}, 1), Relation::kUI);
          for (std::size_t c = 0; c < 3; ++c)
            CHECK(ep(0, c) == doctest::Approx(out[0](static_cast<std::size_t>(v), c)).epsilon(1e-12));
        }
      }
    }
  }
}

TEST_CASE("episode propagation over full expansions matches full-graph propagation") {
  std::mt19937_64 rng(22);
  for (int trial = 0; trial < 12; ++trial) {
    const InteractionGraph g = random_hetero(rng, {6, 7, 4}, 0.3);
    const Backbone b = trial % 2 == 0 ? Backbone::kLight : Backbone::kGcn;
    const bool with_enh = trial % 3 == 0;
    const int L = 1 + trial % 3;
    const ModelParams p = init_model(ModelConfig{4, L, b, MemberAgg::kAttention, with_enh}, g.counts(), rng());
    const EnhancerParams ep = init_enhancer(4, rng());
    ad::Tape tape;
    const ModelVars mv = bind(tape, p, false);
    std::optional<EnhancerVars> ev;
    if (with_enh) ev = bind(tape, ep, false);
    const FullOutput full = forward_full(mv, ev ? &*ev : nullptr, g);
    for (Kind k : kAllKinds) {
      std::vector<Episode> eps;
      for (int v = 0; v < g.count(k); ++v) eps.push_back(expand_full(g, {k, v}, L));
      std::vector<const Episode*> ptrs;
      for (const Episode& e : eps) ptrs.push_back(&e);
      const Tensor& got = tape.value(forward_episodes(mv, ev ? &*ev : nullptr, ptrs).fused);
      const Tensor& want = tape.value(full.fused[kind_slot(k)]);
      CAPTURE(trial);
      CAPTURE(kind_name(k));
      for (std::size_t i = 0; i < got.data.size(); ++i) CHECK(got.data[i] == doctest::Approx(want.data[i]).epsilon(1e-10));
    }
  }
}

TEST_CASE("identity-extension meta projection reproduces the plain path bitwise") {
  std::mt19937_64 rng(23);
  const InteractionGraph g = random_hetero(rng, {8, 9, 5}, 0.3);
  for (Backbone b : {Backbone::kLight, Backbone::kGcn}) {
    const ModelParams plain = init_model(ModelConfig{5, 3, b, MemberAgg::kAttention, false}, g.counts(), 7);
    const ModelParams meta = init_model(ModelConfig{5, 3, b, MemberAgg::kAttention, true}, g.counts(), 7);
    const EnhancerParams enh = init_enhancer(5, 8);
    ad::Tape t1, t2, t3;
    const ModelVars m1 = bind(t1, plain, false), m2 = bind(t2, meta, false), m3 = bind(t3, meta, false);
    const EnhancerVars ev = bind(t3, enh, false);
    const FullOutput a = forward_full(m1, nullptr, g), c = forward_full(m2, nullptr, g), e = forward_full(m3, &ev, g);
    for (std::size_t k = 0; k < 3; ++k) {
      CHECK(t1.value(a.fused[k]) == t2.value(c.fused[k]));
      CHECK(t1.value(a.fused[k]) == t3.value(e.fused[k]));
    }
    // Same tape shape without meta: no extra records.
    CHECK(t1.size() == t2.size() - 5);
  }
}

TEST_CASE("gradient of BPR through propagation and fusion matches finite differences") {
  std::mt19937_64 rng(31);
  int checked = 0;
  for (int trial = 0; trial < 6; ++trial) {
    const InteractionGraph g = random_hetero(rng, {4, 5, 3}, 0.45);
    const Backbone b = trial % 2 == 0 ? Backbone::kLight : Backbone::kGcn;
    const MemberAgg f = trial % 3 == 0 ? MemberAgg::kAverage : MemberAgg::kAttention;
    const ModelParams p = init_model(ModelConfig{3, 2, b, f, false}, g.counts(), rng());
    const std::vector<Pair> pairs = sample_pairs(g, positive_pairs(g), rng);
    if (pairs.empty()) continue;
    const double err = ad::finite_diff_check(
        [&](ad::Tape&, std::span<const ad::Var> leaves) {
          const ModelVars mv = coldgraph::testing::vars_from(p, leaves);
          return main_loss(forward_full(mv, nullptr, g).fused, pairs, 0.7).total;
        },
        coldgraph::testing::tensors_of(p));
    CAPTURE(trial);
    CHECK(err < 1e-4);
    ++checked;
  }
  CHECK(checked >= 4);
}
