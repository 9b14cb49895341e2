#include <gtest/gtest.h>

#include "stcat/model.hpp"
#include "stcat/tensor/grad_check.hpp"

using namespace stcat;

namespace {

Tensor<double> randn(Shape s, std::uint64_t seed, double sd = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0, sd);
  Tensor<double> t(std::move(s));
  for (auto& v : t.data) v = n(rng);
  return t;
}

Tensor<double> uniform(Shape s, std::uint64_t seed, double lo, double hi) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<double> t(std::move(s));
  for (auto& v : t.data) v = u(rng);
  return t;
}

ModelConfig decoder_config(std::size_t C = 32) {
  ModelConfig c = micro_config();
  c.C = C;
  return c;
}

struct Fixture {
  ModelConfig cfg;
  ParameterStore<double> store;
  Initializer init{9};
  TubeDecoder<double> dec;
  PredictionHeads<double> heads;
  explicit Fixture(ModelConfig c) : cfg(c), dec(store, init, cfg), heads(store, init, cfg) {}

  Template<double> tpl(Graph<double>& g, std::uint64_t seed) const {
    return {g.constant(randn(Shape{cfg.C}, seed)), g.constant(uniform(Shape{cfg.T_sampled, 4}, seed + 1, 0.2, 0.8))};
  }
  EncodedContext<double> ctx(Graph<double>& g, const Tensor<double>& fvl) const {
    return {g.constant(fvl), g.constant(randn(Shape{cfg.C}, 3)), g.constant(randn(Shape{cfg.T_sampled, cfg.C}, 4))};
  }
  std::size_t memory_len() const { return cfg.visual_tokens() + 5; }
};

}  // namespace

TEST(InitQueries, SharedContentDistinctPositions) {
  Fixture f(decoder_config(32));
  Tape<double> tape;
  Graph<double> g(tape, f.store, false);
  const auto q = f.dec.init_queries(g, f.tpl(g, 1));
  ASSERT_EQ(q.content.shape(), (Shape{4, 32}));
  ASSERT_EQ(q.position.shape(), (Shape{4, 32}));
  const auto& c = q.content.value();
  const auto& p = q.position.value();
  for (std::size_t t = 1; t < 4; ++t) {
    bool differs = false;
    for (std::size_t k = 0; k < 32; ++k) {
      EXPECT_EQ(c.at(t, k), c.at(0, k));
      differs |= p.at(t, k) != p.at(0, k);
    }
    EXPECT_TRUE(differs);
  }
}

TEST(DecoderBlock, CrossAttentionReadsOnlyItsFrame) {
  auto cfg = decoder_config(16);
  cfg.decoder_self_attention = false;  // isolate the cross-attention path
  Fixture f(cfg);
  const std::size_t L = f.memory_len();
  auto fvl = randn(Shape{4, L, 16}, 5);
  auto run = [&](const Tensor<double>& memory) {
    Tape<double> tape;
    Graph<double> g(tape, f.store, false);
    const auto q = f.dec.init_queries(g, f.tpl(g, 1));
    auto mem_pos = g.constant(memory_position<double>(4, cfg.grid_h(), cfg.grid_w(), 5, 16));
    auto r = f.dec.block(g, Branch::kBox, 0, q, g.constant(memory), mem_pos, f.heads.box_regressor(), true);
    return std::make_pair(r.queries.content.value(), r.attention);
  };
  auto [c0, a0] = run(fvl);
  ASSERT_EQ(a0.shape, (Shape{4, L}));
  for (std::size_t t = 0; t < 4; ++t) {
    double s = 0;
    for (std::size_t k = 0; k < L; ++k) s += a0.at(t, k);
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  for (std::size_t i = 2 * L * 16; i < 3 * L * 16; ++i) fvl[i] += 1.0;  // frame 2 only
  auto [c1, a1] = run(fvl);
  for (std::size_t t = 0; t < 4; ++t) {
    bool same = true;
    for (std::size_t k = 0; k < 16; ++k) same &= c0.at(t, k) == c1.at(t, k);
    EXPECT_EQ(same, t != 2) << "frame " << t;
  }
}

TEST(DecoderBlock, ZeroRegressorKeepsAnchorsAndTimeBranchNeverMovesThem) {
  Fixture f(decoder_config(16));
  Tape<double> tape;
  Graph<double> g(tape, f.store, false);
  const auto q = f.dec.init_queries(g, f.tpl(g, 1));
  auto fvl = g.constant(randn(Shape{4, f.memory_len(), 16}, 5));
  auto mem_pos = g.constant(memory_position<double>(4, 4, 4, 5, 16));
  auto box = f.dec.block(g, Branch::kBox, 0, q, fvl, mem_pos, f.heads.box_regressor(), true);
  EXPECT_EQ(box.queries.anchors.value().data, q.anchors.value().data);

  // With a nonzero regressor the box branch moves anchors; the time branch does not.
  auto& l3 = f.store.value(f.heads.box_regressor().l3.weight);
  l3 = randn(l3.shape, 6, 0.05);
  Tape<double> tape2;
  Graph<double> g2(tape2, f.store, false);
  const auto q2 = f.dec.init_queries(g2, f.tpl(g2, 1));
  auto fvl2 = g2.constant(randn(Shape{4, f.memory_len(), 16}, 5));
  auto pos2 = g2.constant(memory_position<double>(4, 4, 4, 5, 16));
  auto moved = f.dec.block(g2, Branch::kBox, 0, q2, fvl2, pos2, f.heads.box_regressor(), true);
  auto time = f.dec.block(g2, Branch::kTime, 0, q2, fvl2, pos2, f.heads.box_regressor(), true);
  EXPECT_NE(moved.queries.anchors.value().data, q2.anchors.value().data);
  EXPECT_EQ(time.queries.anchors.value().data, q2.anchors.value().data);
}

TEST(DecoderBlock, RejectsMismatchedMemory) {
  Fixture f(decoder_config(16));
  Tape<double> tape;
  Graph<double> g(tape, f.store, false);
  const auto q = f.dec.init_queries(g, f.tpl(g, 1));
  auto bad = g.constant(randn(Shape{3, f.memory_len(), 16}, 5));
  auto pos = g.constant(memory_position<double>(3, 4, 4, 5, 16));
  EXPECT_THROW(f.dec.block(g, Branch::kBox, 0, q, bad, pos, f.heads.box_regressor(), true), ShapeError);
}

TEST(Decode, ShapesAndZeroRegressorComposition) {
  Fixture f(decoder_config(32));
  Tape<double> tape;
  Graph<double> g(tape, f.store, false);
  const auto tpl = f.tpl(g, 2);
  const auto out = f.dec.decode(g, tpl, f.ctx(g, randn(Shape{4, f.memory_len(), 32}, 7)), f.heads.box_regressor());
  EXPECT_EQ(out.bbox_feats.shape(), (Shape{4, 32}));
  EXPECT_EQ(out.time_feats.shape(), (Shape{4, 32}));
  EXPECT_EQ(out.anchors.shape(), (Shape{4, 4}));
  EXPECT_EQ(out.anchors.value().data, tpl.q_p.value().data);
  ASSERT_EQ(out.box_attention.size(), 2u);
  ASSERT_EQ(out.time_attention.size(), 2u);
  for (const auto* maps : {&out.box_attention, &out.time_attention})
    for (const auto& a : *maps)
      for (std::size_t t = 0; t < 4; ++t) {
        double s = 0;
        for (std::size_t k = 0; k < a.dim(1); ++k) s += a.at(t, k);
        EXPECT_NEAR(s, 1.0, 1e-12);
      }
}

TEST(Decode, LogitSpaceRefinementStaysInsideUnitBox) {
  auto cfg = decoder_config(16);
  cfg.anchor_logit_space = true;
  Fixture f(cfg);
  auto& l3 = f.store.value(f.heads.box_regressor().l3.weight);
  l3 = randn(l3.shape, 6, 2.0);
  Tape<double> tape;
  Graph<double> g(tape, f.store, false);
  const auto out = f.dec.decode(g, f.tpl(g, 2), f.ctx(g, randn(Shape{4, f.memory_len(), 16}, 7)),
                                f.heads.box_regressor());
  for (double v : out.anchors.value().data) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(Decode, GradientMatchesFiniteDifferencesOnMicroConfig) {
  Fixture f(micro_config());
  auto& l3 = f.store.value(f.heads.box_regressor().l3.weight);
  l3 = randn(l3.shape, 6, 0.1);
  const std::size_t L = f.memory_len();
  const auto wb = randn(Shape{4, 16}, 20), wt = randn(Shape{4, 16}, 21), wa = randn(Shape{4, 4}, 22);
  auto fn = [&](Tape<double>& t, Var<double> fvl) {
    Graph<double> g(t, f.store, false);
    EncodedContext<double> ctx{fvl, g.constant(randn(Shape{16}, 3)), g.constant(randn(Shape{4, 16}, 4))};
    const auto o = f.dec.decode(g, f.tpl(g, 2), ctx, f.heads.box_regressor());
    return add(add(sum(mul(o.bbox_feats, t.constant(wb))), sum(mul(o.time_feats, t.constant(wt)))),
               sum(mul(o.anchors, t.constant(wa))));
  };
  EXPECT_LT(grad_check(fn, randn(Shape{4, L, 16}, 8)), 1e-4);
}

TEST(Consistency, ContentQueriesIdenticalAcrossFramesInFullModel) {
  for (int variant = 0; variant < 3; ++variant) {
    auto cfg = micro_config();
    cfg.no_global_template = variant == 1;
    cfg.no_local_template = variant == 2;
    StcatModel<double> model(cfg);
    VideoClip clip(4, 16, 16);
    for (std::size_t i = 0; i < clip.pixels.size(); ++i) clip.pixels[i] = static_cast<float>((i * 37) % 101) / 100.f;
    Tape<double> tape;
    Graph<double> g(tape, model.params(), false);
    const auto out = model.forward(g, clip, QueryTokens{{2, 4, 7}, 40});
    const auto q = model.decoder().init_queries(g, out.tpl);
    const auto& c = q.content.value();
    for (std::size_t t = 1; t < 4; ++t)
      for (std::size_t k = 0; k < 16; ++k) EXPECT_EQ(c.at(t, k), c.at(0, k));
    if (variant == 1) {
      for (double v : c.data) EXPECT_EQ(v, 0.0);
    }
    if (variant == 2) {
      const auto& a = q.anchors.value();
      for (std::size_t t = 1; t < 4; ++t)
        for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(a.at(t, k), a.at(0, k));
    }
  }
}
