#include <gtest/gtest.h>

#include <cmath>

#include "lookupvit/flops.hpp"
#include "lookupvit/gradcheck.hpp"
#include "lookupvit/lookup_block.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace lookupvit;
using M = Tensor<double>;

namespace {

BlockOptions options(std::size_t heads, bool scale = true, bool out_proj = true) {
  BlockOptions o;
  o.heads = heads;
  o.scale_logits = scale;
  o.output_projection = out_proj;
  return o;
}

}  // namespace

TEST(Gather, HandSoftmaxExample) {
  // Q=[[1,0]], K=[[1,0],[0,1]], V=[[10,0],[0,10]], one head, no scaling.
  Tape<double> t;
  auto a = ops::softmax_rows(ops::attention_logits(t.constant(M::matrix({{1, 0}})),
                                                   t.constant(M::matrix({{1, 0}, {0, 1}})), 1, 1.0));
  auto av = ops::attend(a, t.constant(M::matrix({{10, 0}, {0, 10}})));
  const double e = std::exp(1.0);
  EXPECT_NEAR(a.value()[0], e / (e + 1), 1e-15);
  EXPECT_NEAR(a.value()[1], 1 / (e + 1), 1e-15);
  EXPECT_NEAR(av.value()[0], 7.310585786300049, 1e-12);
  EXPECT_NEAR(av.value()[1], 2.689414213699951, 1e-12);
}

TEST(Gather, EqualKeysGiveUniformWeights) {
  std::mt19937_64 rng(1);
  auto q = testutil::random_tensor({3, 4}, rng);
  M k({5, 4});
  for (std::size_t j = 0; j < 5; ++j)
    for (std::size_t e = 0; e < 4; ++e) k.at(j, e) = 0.3 * static_cast<double>(e) - 0.2;
  Tape<double> t;
  auto a = ops::softmax_rows(ops::attention_logits(t.constant(q), t.constant(k), 2, 0.7)).value();
  for (double v : a.data()) EXPECT_NEAR(v, 0.2, 1e-15);
}

TEST(Gather, SelfConsistentIdentityProjections) {
  // N = M, z_l = z_p, identity projections, one head: output = z_p + A * LN(z_p).
  std::mt19937_64 rng(2);
  const auto opt = options(1, true, true);
  auto params = testutil::identity_block(6, opt);
  auto z = testutil::random_tensor({4, 6}, rng);
  Tape<double> t;
  auto res = mhbc_gather(t, t.constant(z), t.constant(z), params, opt);
  auto ref = oracle::gather(oracle::to_mat(z), oracle::to_mat(z), params, opt);
  EXPECT_LT(oracle::max_diff(ref.z_p, res.z_p.value()), 1e-12);
  EXPECT_LT(oracle::max_diff(ref.a, res.attention.weights.value()), 1e-12);
  const auto& a = res.attention.weights.value();
  for (std::size_t i = 0; i < 4; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < 4; ++j) s += a[i * 4 + j];
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Gather, ZeroTokensIsDimensionError) {
  EXPECT_THROW(M({0, 8}), DimensionError);
}

TEST(VitBlock, SingleTokenAttendsToItself) {
  std::mt19937_64 rng(3);
  const auto opt = options(2);
  Rng init(0);
  auto params = init_block<double>(4, opt, init);
  testutil::randomize(params, rng);
  auto z = testutil::random_tensor({1, 4}, rng);
  Tape<double> t;
  auto n = layer_norm(t, t.constant(z), params.vit.attn_norm, opt.eps);
  auto a = ops::softmax_rows(ops::attention_logits(n, n, 2, 0.5)).value();
  EXPECT_EQ(a[0], 1.0);
  EXPECT_EQ(a[1], 1.0);
  auto out = vit_block(t, t.constant(z), params.vit, opt).value();
  EXPECT_LT(oracle::max_diff(oracle::vit_block(oracle::to_mat(z), params.vit, opt), out), 1e-13);
}

TEST(VitBlock, ZeroMlpWeightsLeaveAttentionResidual) {
  std::mt19937_64 rng(4);
  const auto opt = options(2);
  Rng init(0);
  auto params = init_block<double>(8, opt, init);
  params.vit.mlp.w_in.fill(0.0);
  params.vit.mlp.w_out.fill(0.0);
  auto z = testutil::random_tensor({3, 8}, rng);
  Tape<double> t;
  auto out = vit_block(t, t.constant(z), params.vit, opt).value();
  // Residual after attention only.
  auto n = oracle::layer_norm(oracle::to_mat(z), params.vit.attn_norm, opt.eps);
  auto a = oracle::attention(oracle::matmul(n, oracle::w(params.vit.w_q)),
                             oracle::matmul(n, oracle::w(params.vit.w_k)), 2, 0.5);
  auto expected = oracle::add(
      oracle::to_mat(z),
      oracle::matmul(oracle::weigh(a, oracle::matmul(n, oracle::w(params.vit.w_v))),
                     oracle::w(params.vit.w_o)));
  EXPECT_LT(oracle::max_diff(expected, out), 1e-15);
}

TEST(VitBlock, MatchesLoopOracleBothPrecisions) {
  std::mt19937_64 rng(5);
  const auto opt = options(2);
  Rng init(0);
  auto params = init_block<double>(8, opt, init);
  testutil::randomize(params, rng);
  auto z = testutil::random_tensor({3, 8}, rng);
  auto ref = oracle::vit_block(oracle::to_mat(z), params.vit, opt);
  Tape<double> t64;
  EXPECT_LT(oracle::max_diff(ref, vit_block(t64, t64.constant(z), params.vit, opt).value()), 1e-12);

  BlockParams<float> pf;
  Rng init32(0);
  pf = init_block<float>(8, opt, init32);
  std::vector<Tensor<double>*> src;
  params.visit("", [&](const std::string&, Tensor<double>& x) { src.push_back(&x); });
  std::size_t k = 0;
  pf.visit("", [&](const std::string&, Tensor<float>& x) { x = src[k++]->cast<float>(); });
  Tape<float> t32;
  auto out32 = vit_block(t32, t32.constant(z.cast<float>()), pf.vit, opt).value();
  EXPECT_LT(oracle::max_diff(ref, out32), 1e-6);
}

TEST(Infuse, TransposedWeightsByHand) {
  // One head, A=[[0.75, 0.25]], V=[[4, 8]] -> rows [3, 6] and [1, 2].
  Tape<double> t;
  auto u = ops::attend_transposed(t.constant(M({1, 1, 2}, std::vector<double>{0.75, 0.25})),
                                  t.constant(M::matrix({{4, 8}})));
  EXPECT_EQ(u.value(), M::matrix({{3, 6}, {1, 2}}));
}

TEST(Infuse, ZeroCompressedTokensGiveZeroUpdate) {
  std::mt19937_64 rng(6);
  const auto opt = options(2);
  Rng init(0);
  auto params = init_block<double>(4, opt, init);
  Tape<double> t;
  auto a = t.constant(M({2, 3, 5}, 0.2));
  auto u = mhbc_infuse(t, t.constant(testutil::random_tensor({5, 4}, rng)), t.constant(M({3, 4})),
                       AttentionWeights<double>{a}, params, opt);
  for (double v : u.value().data()) EXPECT_EQ(v, 0.0);
}

TEST(Infuse, IdentityAttentionPassesNormalizedTokens) {
  std::mt19937_64 rng(7);
  const auto opt = options(2);
  auto params = testutil::identity_block(4, opt);
  auto zp = testutil::random_tensor({3, 4}, rng);
  M eye({2, 3, 3});
  for (std::size_t h = 0; h < 2; ++h)
    for (std::size_t i = 0; i < 3; ++i) eye[(h * 3 + i) * 3 + i] = 1.0;
  Tape<double> t;
  auto u = mhbc_infuse(t, t.constant(M({3, 4})), t.constant(zp), AttentionWeights<double>{t.constant(eye)},
                       params, opt)
               .value();
  auto expected = oracle::layer_norm(
      oracle::layer_norm(oracle::to_mat(zp), params.infuse_norm_p, opt.eps), params.v_norm, opt.eps);
  EXPECT_LT(oracle::max_diff(expected, u), 1e-15);
}

TEST(Infuse, StaleWeightsAreContractError) {
  const auto opt = options(2);
  Rng init(0);
  auto params = init_block<double>(4, opt, init);
  Tape<double> t;
  auto a = t.constant(M({2, 3, 6}, 0.1));
  EXPECT_THROW(mhbc_infuse(t, t.constant(M({5, 4})), t.constant(M({3, 4})),
                           AttentionWeights<double>{a}, params, opt),
               ContractError);
}

class BlockForward : public ::testing::Test {
 protected:
  std::mt19937_64 rng{8};
  BlockOptions opt = options(2);
  BlockParams<double> params;

  void SetUp() override {
    Rng init(0);
    params = init_block<double>(8, opt, init);
    testutil::randomize(params, rng);
  }

  TokenPair<double> pair(Tape<double>& t, std::size_t m, std::size_t n) {
    std::mt19937_64 r(m * 100 + n);
    TokenPair<double> p;
    p.z_p = t.constant(testutil::random_tensor({m, 8}, r));
    p.z_l = t.constant(testutil::random_tensor({n, 8}, r));
    p.compressed_grid = Grid{1, 1, m};
    p.lookup_grid = Grid{1, 1, n};
    return p;
  }
};

TEST_F(BlockForward, PreservesShapesAndMatchesOracle) {
  for (auto [m, n] : {std::pair<std::size_t, std::size_t>{1, 1}, {2, 7}, {4, 4}, {3, 9}}) {
    Tape<double> t;
    auto in = pair(t, m, n);
    auto out = lookup_block_forward(t, in, params, opt);
    EXPECT_EQ(out.tokens.z_p.shape(), (Shape{m, 8}));
    EXPECT_EQ(out.tokens.z_l.shape(), (Shape{n, 8}));
    auto ref = oracle::lookup_block(oracle::to_mat(in.z_p.value()), oracle::to_mat(in.z_l.value()),
                                    params, opt);
    EXPECT_LT(oracle::max_diff(ref.z_p, out.tokens.z_p.value()), 1e-12);
    EXPECT_LT(oracle::max_diff(ref.z_l, out.tokens.z_l.value()), 1e-12);
  }
}

TEST_F(BlockForward, NoInfuseLeavesOnlyLookupMlp) {
  opt.infuse = false;
  Tape<double> t;
  auto in = pair(t, 3, 6);
  auto out = lookup_block_forward(t, in, params, opt);
  auto expected = mlp_residual(t, in.z_l, params.lookup_mlp, opt.eps, instrument::Term::mlp_lookup);
  EXPECT_EQ(out.tokens.z_l.value(), expected.value());
}

TEST_F(BlockForward, StackedBlocksAreDeterministic) {
  auto run = [&] {
    Tape<double> t;
    auto tokens = pair(t, 4, 9);
    for (int i = 0; i < 2; ++i) tokens = lookup_block_forward(t, tokens, params, opt).tokens;
    return std::pair{tokens.z_p.value(), tokens.z_l.value()};
  };
  auto a = run();
  auto b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
}

TEST_F(BlockForward, AttentionIsComputedOnceAndReused) {
  instrument::Counters c;
  Tape<double> t;
  auto in = pair(t, 3, 7);
  BlockOutput<double> out;
  {
    instrument::Recorder rec(c);
    out = lookup_block_forward(t, in, params, opt);
  }
  EXPECT_EQ(c.softmax(instrument::Term::attention_cross), 1u);
  EXPECT_EQ(c.softmax(instrument::Term::attention_quadratic), 1u);  // the ViT block's own
  EXPECT_EQ(c.total_softmax(), 2u);
  const auto& a = out.attention.weights.value();
  ASSERT_EQ(a.shape(), (Shape{2, 3, 7}));
  for (std::size_t r = 0; r < a.rows(); ++r) {
    double s = 0;
    for (double v : a.row(r)) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST_F(BlockForward, MacsMatchAnalyticFormula) {
  for (bool out_proj : {true, false}) {
    opt.output_projection = out_proj;
    Rng init(0);
    auto p = init_block<float>(16, opt, init);
    for (auto [m, n] : {std::pair<std::size_t, std::size_t>{4, 16}, {1, 1}, {9, 25}}) {
      instrument::Counters c;
      {
        instrument::Recorder rec(c);
        Tape<float> t;
        TokenPair<float> in;
        in.z_p = t.constant(Tensor<float>({m, 16}, 0.5f));
        in.z_l = t.constant(Tensor<float>({n, 16}, 0.25f));
        lookup_block_forward(t, in, p, opt);
      }
      const auto expected = flops::lookup_block_macs(n, m, 16);
      const std::uint64_t missing = out_proj ? 0 : (m + n) * 16 * 16;
      EXPECT_EQ(c.modeled() + missing, expected) << "M=" << m << " N=" << n;
    }
  }
}

TEST_F(BlockForward, GradientsMatchFiniteDifferences) {
  std::mt19937_64 r(9);
  auto zp = testutil::random_tensor({3, 8}, r);
  auto zl = testutil::random_tensor({5, 8}, r);
  auto probe_w = testutil::random_tensor({8, 8}, r);
  NamedTensors inputs{{"z_p", &zp}, {"z_l", &zl}};
  params.visit("", [&](const std::string& name, Tensor<double>& x) { inputs.emplace_back(name, &x); });
  auto res = check_gradients(inputs, [&](Tape<double>& t) {
    TokenPair<double> in;
    in.z_p = t.param(zp);
    in.z_l = t.param(zl);
    auto out = lookup_block_forward(t, in, params, opt).tokens;
    auto mix = ops::add(ops::mean_rows(out.z_p), ops::mean_rows(out.z_l));
    return ops::sum(ops::mul(ops::matmul(ops::reshape(mix, {1, 8}), t.constant(probe_w)),
                             ops::reshape(mix, {1, 8})));
  });
  EXPECT_TRUE(res.passed(1e-4)) << res.worst << " rel=" << res.max_rel_error;
}
