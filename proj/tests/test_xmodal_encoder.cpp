#include <gtest/gtest.h>

#include "stcat/encoder.hpp"
#include "stcat/tensor/grad_check.hpp"

using namespace stcat;

namespace {

ModelConfig encoder_config(std::size_t C = 32, std::size_t M = 2) {
  ModelConfig c;
  c.T_sampled = 4;
  c.H = c.W = 32;
  c.patch = 8;
  c.C = C;
  c.M = M;
  c.heads = 2;
  return c;
}

Tensor<double> randn(Shape s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0, 1);
  Tensor<double> t(std::move(s));
  for (auto& v : t.data) v = n(rng);
  return t;
}

struct Fixture {
  ModelConfig cfg;
  ParameterStore<double> store;
  Initializer init{11};
  CrossModalEncoder<double> enc;
  explicit Fixture(ModelConfig c) : cfg(c), enc(store, init, cfg) {}
};

std::vector<double> rows(const Tensor<double>& t, std::size_t first, std::size_t count, std::size_t width) {
  return {t.data.begin() + static_cast<std::ptrdiff_t>(first * width),
          t.data.begin() + static_cast<std::ptrdiff_t>((first + count) * width)};
}

}  // namespace

TEST(SpatialInput, LayoutAndLength) {
  Fixture f(encoder_config());
  Tape<double> tape;
  Graph<double> g(tape, f.store, false);
  auto pv = g.constant(randn(Shape{4, 16, 32}, 1));
  auto ps = g.constant(randn(Shape{5, 32}, 2));
  auto st = f.enc.initial_state(g, pv, ps);
  auto x = f.enc.build_spatial_input(st, 2).value();
  ASSERT_EQ(x.shape, (Shape{22, 32}));
  EXPECT_EQ(rows(x, 0, 1, 32), rows(st.p_l.value(), 2, 1, 32));
  EXPECT_EQ(rows(x, 1, 16, 32), rows(pv.value(), 2 * 16, 16, 32));
  EXPECT_EQ(rows(x, 17, 5, 32), ps.value().data);
  EXPECT_THROW(f.enc.build_spatial_input(st, 4), std::out_of_range);
}

TEST(SpatialInput, PositionTermSkipsLocalToken) {
  Fixture f(encoder_config());
  const auto pos = f.enc.spatial_position(4, 5);
  ASSERT_EQ(pos.shape, (Shape{4, 22, 32}));
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t c = 0; c < 32; ++c) EXPECT_EQ(pos[(t * 22) * 32 + c], 0.0);
}

TEST(SpatialLayer, FramesAreIsolatedAndShapesPreserved) {
  Fixture f(encoder_config());
  auto run = [&](const Tensor<double>& pv) {
    Tape<double> tape;
    Graph<double> g(tape, f.store, false);
    auto st = f.enc.initial_state(g, g.constant(pv), g.constant(randn(Shape{5, 32}, 2)));
    f.enc.spatial_layer(g, 0, st);
    return std::make_tuple(st.p_v.value(), st.p_l.value(), st.text_frames.value());
  };
  auto pv = randn(Shape{4, 16, 32}, 1);
  auto [v0, l0, s0] = run(pv);
  EXPECT_EQ(v0.shape, (Shape{4, 16, 32}));
  EXPECT_EQ(l0.shape, (Shape{4, 32}));
  EXPECT_EQ(s0.shape, (Shape{4, 5, 32}));
  for (std::size_t i = 0; i < 16 * 32; ++i) pv[i] += 0.25;
  auto [v1, l1, s1] = run(pv);
  EXPECT_EQ(rows(v0, 16, 48, 32), rows(v1, 16, 48, 32));
  EXPECT_EQ(rows(l0, 1, 3, 32), rows(l1, 1, 3, 32));
  EXPECT_EQ(rows(s0, 5, 15, 32), rows(s1, 5, 15, 32));
  EXPECT_NE(rows(l0, 0, 1, 32), rows(l1, 0, 1, 32));
}

TEST(SpatialLayer, LocalTokenSeesVisualAndText) {
  Fixture f(encoder_config());
  auto local = [&](const Tensor<double>& pv, const Tensor<double>& ps) {
    Tape<double> tape;
    Graph<double> g(tape, f.store, false);
    auto st = f.enc.initial_state(g, g.constant(pv), g.constant(ps));
    f.enc.spatial_layer(g, 0, st);
    return rows(st.p_l.value(), 1, 1, 32);
  };
  const auto pv = randn(Shape{4, 16, 32}, 1), ps = randn(Shape{5, 32}, 2);
  const auto base = local(pv, ps);
  auto pv2 = pv;
  pv2[(1 * 16 + 3) * 32 + 7] += 1.0;
  auto ps2 = ps;
  ps2[2 * 32 + 5] += 1.0;
  EXPECT_NE(local(pv2, ps), base);
  EXPECT_NE(local(pv, ps2), base);
}

TEST(TemporalInput, LayoutAndPositionTerm) {
  Fixture f(encoder_config());
  Tape<double> tape;
  Graph<double> g(tape, f.store, false);
  auto pg = g.constant(randn(Shape{32}, 3));
  auto pl = g.constant(Tensor<double>::filled(Shape{4, 32}, 0.5));
  auto x = f.enc.build_temporal_input(g, pg, pl).value();
  ASSERT_EQ(x.shape, (Shape{5, 32}));
  EXPECT_EQ(rows(x, 0, 1, 32), pg.value().data);
  EXPECT_NE(rows(x, 1, 1, 32), rows(x, 2, 1, 32));
}

TEST(TemporalLayer, LengthPreservedAndGlobalTokenSeesFrames) {
  Fixture f(encoder_config());
  auto run = [&](const Tensor<double>& pl) {
    Tape<double> tape;
    Graph<double> g(tape, f.store, false);
    EncoderState<double> st;
    st.p_l = g.constant(pl);
    st.p_g = g.constant(randn(Shape{32}, 4));
    f.enc.temporal_layer(g, 0, st);
    return std::make_pair(st.p_g.value(), st.p_l.value());
  };
  auto pl = randn(Shape{4, 32}, 5);
  auto [g0, l0] = run(pl);
  EXPECT_EQ(g0.shape, (Shape{32}));
  EXPECT_EQ(l0.shape, (Shape{4, 32}));
  pl[3] += 0.5;
  auto [g1, l1] = run(pl);
  EXPECT_NE(g0.data, g1.data);
  // Cross-frame sensitivity: frame 2's token reacts to frame 0's input.
  EXPECT_NE(rows(l0, 2, 1, 32), rows(l1, 2, 1, 32));
}

TEST(TemporalLayer, UniformAttentionMixesIdentically) {
  // Zero key map -> equal logits -> uniform weights. With identity value and
  // output maps every token's attention output is the mean input token.
  ParameterStore<double> store;
  Initializer init(1);
  auto attn = MultiHeadAttention<double>::create(store, init, "a", 8, 2);
  store.value(attn.k_proj.weight) = Tensor<double>::zeros(Shape{8, 8});
  for (auto* l : {&attn.v_proj, &attn.out_proj}) {
    auto& w = store.value(l->weight);
    w = Tensor<double>::zeros(Shape{8, 8});
    for (std::size_t i = 0; i < 8; ++i) w.at(i, i) = 1.0;
  }
  Tape<double> tape;
  Graph<double> g(tape, store, false);
  const auto x = randn(Shape{5, 8}, 6);
  auto r = attn(g, g.constant(x), g.constant(x), g.constant(x));
  std::vector<double> mix(8, 0.0);
  for (std::size_t j = 0; j < 5; ++j)
    for (std::size_t c = 0; c < 8; ++c) mix[c] += x.at(j, c) / 5.0;
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t c = 0; c < 8; ++c) EXPECT_NEAR(r.output.value().at(i, c), mix[c], 1e-12);
  for (double w : r.weights->data) EXPECT_NEAR(w, 0.2, 1e-15);
}

TEST(Encode, OutputShapes) {
  Fixture f(encoder_config(32));
  Tape<double> tape;
  Graph<double> g(tape, f.store, false);
  auto ctx = f.enc.encode(g, g.constant(randn(Shape{4, 16, 32}, 1)), g.constant(randn(Shape{5, 32}, 2)));
  EXPECT_EQ(ctx.F_vl.shape(), (Shape{4, 21, 32}));
  EXPECT_EQ(ctx.p_g.shape(), (Shape{32}));
  EXPECT_EQ(ctx.p_l.shape(), (Shape{4, 32}));
}

TEST(Encode, ZeroBlocksIsConfigError) {
  ParameterStore<double> store;
  Initializer init(1);
  auto cfg = encoder_config();
  cfg.M = 0;
  EXPECT_THROW(CrossModalEncoder<double>(store, init, cfg), ConfigError);
}

TEST(Encode, RejectsMismatchedInputs) {
  Fixture f(encoder_config());
  Tape<double> tape;
  Graph<double> g(tape, f.store, false);
  EXPECT_THROW(f.enc.encode(g, g.constant(randn(Shape{4, 15, 32}, 1)), g.constant(randn(Shape{5, 32}, 2))),
               ShapeError);
}

TEST(Encode, WithoutTemporalLayerFramesStayIsolated) {
  // Single block: per-frame text states are not yet averaged across frames.
  auto cfg = encoder_config(32, 1);
  cfg.no_temporal_layer = true;
  Fixture f(cfg);
  auto run = [&](const Tensor<double>& pv) {
    Tape<double> tape;
    Graph<double> g(tape, f.store, false);
    auto ctx = f.enc.encode(g, g.constant(pv), g.constant(randn(Shape{5, 32}, 2)));
    return std::make_pair(ctx.F_vl.value(), ctx.p_l.value());
  };
  auto pv = randn(Shape{4, 16, 32}, 1);
  auto [a, la] = run(pv);
  for (std::size_t i = 0; i < 16 * 32; ++i) pv[i] -= 0.3;
  auto [b, lb] = run(pv);
  EXPECT_EQ(rows(a, 21, 63, 32), rows(b, 21, 63, 32));
  EXPECT_EQ(rows(la, 1, 3, 32), rows(lb, 1, 3, 32));
  EXPECT_NE(rows(a, 0, 21, 32), rows(b, 0, 21, 32));
}

TEST(Encode, WithTemporalLayerFramesInteract) {
  Fixture f(encoder_config(32, 1));
  auto run = [&](const Tensor<double>& pv) {
    Tape<double> tape;
    Graph<double> g(tape, f.store, false);
    return f.enc.encode(g, g.constant(pv), g.constant(randn(Shape{5, 32}, 2))).p_l.value();
  };
  auto pv = randn(Shape{4, 16, 32}, 1);
  const auto a = run(pv);
  for (std::size_t i = 0; i < 16 * 32; ++i) pv[i] -= 0.3;
  EXPECT_NE(rows(a, 3, 1, 32), rows(run(pv), 3, 1, 32));
}

TEST(Encode, GradientMatchesFiniteDifferencesOnMicroShapes) {
  auto cfg = micro_config();
  ParameterStore<double> store;
  Initializer init(3);
  CrossModalEncoder<double> enc(store, init, cfg);
  const auto ps = randn(Shape{5, 16}, 7);
  const auto wf = randn(Shape{4, 21, 16}, 8), wg = randn(Shape{16}, 9);
  auto f = [&](Tape<double>& t, Var<double> pv) {
    Graph<double> g(t, store, false);
    auto ctx = enc.encode(g, pv, g.constant(ps));
    return add(sum(mul(ctx.F_vl, g.constant(wf))), sum(mul(ctx.p_g, g.constant(wg))));
  };
  EXPECT_LT(grad_check(f, randn(Shape{4, 16, 16}, 10)), 1e-4);
}
