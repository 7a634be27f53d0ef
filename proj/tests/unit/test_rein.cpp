#include <cmath>
#include <cstring>

#include <gtest/gtest.h>

#include "oracle.hpp"
#include "reinlab/errors.hpp"
#include "reinlab/ops.hpp"
#include "reinlab/param_audit.hpp"
#include "reinlab/rein.hpp"
#include "reinlab/rng.hpp"

namespace reinlab {
namespace {

ReinConfig toy(std::size_t layers = 3) {
  ReinConfig c;
  c.tokens = 5;
  c.rank = 2;
  c.dim = 6;
  c.query_dim = 3;
  c.layers = layers;
  return c;
}

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<Scalar>(rng.uniform(lo, hi));
  return t;
}

void randomize(Tensor t, Rng& rng) {
  for (auto& v : t.data()) v = static_cast<Scalar>(rng.uniform(-0.5, 0.5));
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(Scalar)) == 0;
}

// Numerical rank by Gaussian elimination with full pivoting.
std::size_t numerical_rank(const Tensor& t, double tol) {
  oracle::Mat a = oracle::from(t);
  std::size_t rank = 0;
  std::vector<bool> row_used(a.rows, false), col_used(a.cols, false);
  for (std::size_t step = 0; step < std::min(a.rows, a.cols); ++step) {
    double best = 0;
    std::size_t br = 0, bc = 0;
    for (std::size_t i = 0; i < a.rows; ++i) {
      if (row_used[i]) continue;
      for (std::size_t j = 0; j < a.cols; ++j) {
        if (!col_used[j] && std::abs(a(i, j)) > best) {
          best = std::abs(a(i, j));
          br = i;
          bc = j;
        }
      }
    }
    if (best <= tol) break;
    row_used[br] = col_used[bc] = true;
    ++rank;
    for (std::size_t i = 0; i < a.rows; ++i) {
      if (row_used[i]) continue;
      const double f = a(i, bc) / a(br, bc);
      for (std::size_t j = 0; j < a.cols; ++j) a(i, j) -= f * a(br, j);
    }
  }
  return rank;
}

TEST(ReinConfigTest, Validation) {
  ReinConfig c = toy();
  EXPECT_NO_THROW(c.validate());
  c.tokens = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(init_parameters(c, 0), ConfigError);
  c = toy();
  c.rank = c.dim;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(ReinConfigTest, VariantsAndLabels) {
  ReinConfig c;
  c.apply_variant(ReinVariant::core);
  EXPECT_FALSE(c.use_link || c.use_share || c.use_lora);
  c.apply_variant(ReinVariant::link);
  EXPECT_TRUE(c.use_link && !c.use_share && !c.use_lora);
  c.apply_variant(ReinVariant::share);
  EXPECT_TRUE(c.use_link && c.use_share && !c.use_lora);
  c.apply_variant(ReinVariant::lora);
  EXPECT_TRUE(c.use_link && c.use_share && c.use_lora);
  EXPECT_EQ(c.label(), "rein-lora");
  EXPECT_EQ(parse_variant("rein-share"), ReinVariant::share);
  EXPECT_EQ(parse_variant("link"), ReinVariant::link);
  EXPECT_THROW(parse_variant("rein-turbo"), ConfigError);
}

TEST(InitTest, ZeroAndUniformSplit) {
  for (auto v : {ReinVariant::core, ReinVariant::link, ReinVariant::share, ReinVariant::lora}) {
    ReinConfig c = toy();
    c.apply_variant(v);
    const auto p = init_parameters(c, 4);
    for (const auto& np : p.named_parameters()) {
      const bool zero = np.name.find("W_f") != std::string::npos ||
                        np.name.find(".b_") != std::string::npos;
      bool all_zero = true;
      for (auto x : np.tensor.data()) all_zero = all_zero && x == 0;
      EXPECT_EQ(all_zero, zero) << np.name;
      EXPECT_TRUE(np.tensor.requires_grad()) << np.name;
    }
  }
}

TEST(InitTest, LowRankFactorsWithinBoundAndSeeded) {
  ReinConfig c = toy();
  const auto p1 = init_parameters(c, 1);
  const auto p2 = init_parameters(c, 2);
  const double bound = std::sqrt(1.0 / static_cast<double>(c.rank));
  for (std::size_t i = 0; i < c.layers; ++i) {
    for (std::size_t k = 0; k < p1.lora_a[i].size(); ++k) {
      EXPECT_LT(std::abs(p1.lora_a[i].data()[k]), bound);
      EXPECT_NE(p1.lora_a[i].data()[k], p2.lora_a[i].data()[k]);
    }
  }
  EXPECT_TRUE(bitwise_equal(init_parameters(c, 1).lora_b[0], p1.lora_b[0]));
}

TEST(InitTest, SharedModeHasOneSlotPerMap) {
  ReinConfig c = toy(4);
  const auto p = init_parameters(c, 0);
  EXPECT_EQ(p.token_mlp.size(), 1u);
  EXPECT_EQ(p.feature_mlp.size(), 1u);
  EXPECT_EQ(p.query_mlp.size(), 1u);
  for (std::size_t i = 1; i <= 4; ++i) {
    EXPECT_TRUE(p.token_mlp_for(i).weight.same_storage(p.token_mlp[0].weight));
    EXPECT_TRUE(p.query_mlp_for(i).bias.same_storage(p.query_mlp[0].bias));
  }
  c.use_share = false;
  EXPECT_EQ(init_parameters(c, 0).feature_mlp.size(), 4u);
}

TEST(TokensTest, RankOneOuterProduct) {
  ReinConfig c;
  c.tokens = 2;
  c.rank = 1;
  c.dim = 4;
  c.layers = 1;
  c.use_link = false;
  const auto p = init_parameters(c, 3);
  EXPECT_LE(numerical_rank(materialize_tokens(p, 1), 1e-4), 1u);
}

TEST(TokensTest, HandMultiplication) {
  ReinConfig c;
  c.tokens = 2;
  c.rank = 1;
  c.dim = 2;
  c.layers = 1;
  c.use_link = false;
  auto p = init_parameters(c, 0);
  std::copy_n(std::vector<Scalar>{1, 0}.begin(), 2, p.lora_a[0].data().begin());
  std::copy_n(std::vector<Scalar>{2, 3}.begin(), 2, p.lora_b[0].data().begin());
  Tensor t = materialize_tokens(p, 1);
  EXPECT_EQ(std::vector<Scalar>(t.data().begin(), t.data().end()), (std::vector<Scalar>{2, 3, 0, 0}));
}

TEST(TokensTest, CachedCallIsBitwiseIdentical) {
  auto p = init_parameters(toy(), 5);
  Tensor plain = materialize_tokens(p, 2);
  p.enable_precompute();
  Tensor cached = materialize_tokens(p, 2);
  EXPECT_TRUE(bitwise_equal(plain, cached));
  EXPECT_TRUE(cached.same_storage(materialize_tokens(p, 2)));
}

TEST(TokensTest, LargeScaleRankBound) {
  ReinConfig c;
  c.layers = 1;
  const auto p = init_parameters(c, 9);  // m=100, r=16, c=1024
  EXPECT_LE(numerical_rank(materialize_tokens(p, 1), 1e-4), 16u);
}

TEST(SimilarityTest, ZeroFeaturesGiveUniformRows) {
  Rng rng(1);
  Tensor s = similarity_map(Tensor({3, 6}), random_tensor({5, 6}, rng), 6);
  for (auto v : s.data()) EXPECT_NEAR(v, 0.2, 1e-7);
}

TEST(SimilarityTest, ScalarExample) {
  Tensor s = similarity_map(Tensor({1, 1}, std::vector<Scalar>{1}), Tensor({2, 1}, {1, -1}), 1);
  EXPECT_NEAR(s.at(0, 0), 0.8808, 1e-3);
  EXPECT_NEAR(s.at(0, 1), 0.1192, 1e-3);
}

TEST(SimilarityTest, OrthogonalDirectionLeavesMapUnchanged) {
  // Tokens live in the first three coordinates; moving f along e_4 changes no
  // dot product.
  Rng rng(2);
  Tensor t = random_tensor({4, 4}, rng);
  for (std::size_t j = 0; j < 4; ++j) t.data()[j * 4 + 3] = 0;
  Tensor f = random_tensor({3, 4}, rng);
  Tensor g = f.detach();
  for (std::size_t i = 0; i < 3; ++i) g.data()[i * 4 + 3] += 7.5f;
  Tensor a = similarity_map(f, t, 4), b = similarity_map(g, t, 4);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a.data()[i], b.data()[i], 1e-6);
}

TEST(SimilarityTest, WidthMismatchIsShapeError) {
  EXPECT_THROW(similarity_map(Tensor({2, 3}), Tensor({4, 5}), 3), ShapeError);
}

TEST(TokenDeltaTest, FirstTokenExcludedExample) {
  Tensor d = token_delta(Tensor({1, 2}, {0.8808f, 0.1192f}), Tensor({2, 1}, {5, -1}), Tensor({1, 1}, std::vector<Scalar>{1}),
                         Tensor({1}, std::vector<Scalar>{0}));
  EXPECT_NEAR(d.item(), -0.1192, 1e-3);
}

TEST(TokenDeltaTest, ZeroMapGivesZero) {
  Rng rng(3);
  Tensor s = softmax_rows(random_tensor({4, 5}, rng));
  Tensor d = token_delta(s, random_tensor({5, 6}, rng), Tensor({6, 6}), Tensor({6}));
  for (auto v : d.data()) EXPECT_EQ(v, 0);
}

TEST(TokenDeltaTest, AllMassOnExcludedTokenGivesZero) {
  Rng rng(4);
  Tensor s({2, 3}, {1, 0, 0, 1, 0, 0});
  Tensor d = token_delta(s, random_tensor({3, 4}, rng), random_tensor({4, 4}, rng), random_tensor({4}, rng));
  for (auto v : d.data()) EXPECT_EQ(v, 0);
}

TEST(TokenDeltaTest, SingleTokenIsConfigError) {
  EXPECT_THROW(token_delta(Tensor({1, 1}, std::vector<Scalar>{1}), Tensor({1, 2}), Tensor({2, 2}), Tensor({2})), ConfigError);
}

TEST(FeatureDeltaTest, ZeroMapGivesZero) {
  Rng rng(5);
  Tensor d = feature_delta(random_tensor({3, 4}, rng), random_tensor({3, 4}, rng), Tensor({4, 4}), Tensor({4}));
  for (auto v : d.data()) EXPECT_EQ(v, 0);
}

TEST(FeatureDeltaTest, IdentityMapReturnsFeatures) {
  Rng rng(6);
  Tensor f = random_tensor({3, 4}, rng);
  Tensor eye({4, 4});
  for (std::size_t i = 0; i < 4; ++i) eye.data()[i * 5] = 1;
  Tensor d = feature_delta(Tensor({3, 4}), f, eye, Tensor({4}));
  EXPECT_TRUE(bitwise_equal(d, f));
  EXPECT_THROW(feature_delta(Tensor({2, 4}), f, eye, Tensor({4})), ShapeError);
}

TEST(QueryTest, LayerQueries) {
  Rng rng(7);
  Tensor t = random_tensor({3, 3}, rng);
  Tensor zero = layer_queries(t, Tensor({3, 2}), Tensor({2}));
  for (auto v : zero.data()) EXPECT_EQ(v, 0);

  Tensor eye({3, 3});
  for (std::size_t i = 0; i < 3; ++i) eye.data()[i * 4] = 1;
  Tensor w = random_tensor({3, 2}, rng), b = random_tensor({2}, rng);
  Tensor q = layer_queries(eye, w, b);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j) EXPECT_FLOAT_EQ(q.at(i, j), w.at(i, j) + b.data()[j]);

  Tensor tr = random_tensor({4, 3}, rng);
  EXPECT_LT(oracle::max_abs_diff(oracle::affine(oracle::from(tr), oracle::from(w), oracle::from(b)),
                                 layer_queries(tr, w, b)),
            1e-6);
}

TEST(QueryTest, AggregationHandExample) {
  // W_cat picks out the max, mean and last components in turn.
  const Tensor qs[] = {Tensor({1, 1}, std::vector<Scalar>{1}), Tensor({1, 1}, std::vector<Scalar>{3})};
  Tensor w({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor q = aggregate_queries(qs, w, Tensor({3}));
  EXPECT_EQ(std::vector<Scalar>(q.data().begin(), q.data().end()), (std::vector<Scalar>{3, 2, 3}));
}

TEST(QueryTest, SingleLayerCollapses) {
  Rng rng(8);
  Tensor q1 = random_tensor({4, 2}, rng);
  Tensor w = random_tensor({6, 2}, rng), b = random_tensor({2}, rng);
  const Tensor qs[] = {q1};
  Tensor got = aggregate_queries(qs, w, b);
  const Tensor parts[] = {q1, q1, q1};
  Tensor want = affine(concat_cols(parts), w, b);
  EXPECT_TRUE(bitwise_equal(got, want));
  EXPECT_THROW(aggregate_queries(std::span<const Tensor>{}, w, b), ContractError);
}

TEST(RefineTest, FreshParametersGiveZeroDelta) {
  Rng rng(9);
  for (auto v : {ReinVariant::core, ReinVariant::lora}) {
    ReinConfig c = toy();
    c.apply_variant(v);
    const auto p = init_parameters(c, 10);
    for (std::size_t i = 1; i <= c.layers; ++i) {
      Tensor d = rein_refine(i, random_tensor({7, 6}, rng), p).delta;
      for (auto x : d.data()) ASSERT_EQ(x, 0);
    }
  }
}

// Eqs. 4 to 8 written out with plain loops.
TEST(RefineTest, MatchesStraightLineTranscription) {
  ReinConfig c = toy();
  auto p = init_parameters(c, 11);
  Rng rng(12);
  for (const auto& np : p.named_parameters()) randomize(np.tensor, rng);
  Tensor f = random_tensor({7, 6}, rng);
  for (std::size_t layer = 1; layer <= c.layers; ++layer) {
    const auto r = rein_refine(layer, f, p);
    const oracle::Mat fo = oracle::from(f);
    const oracle::Mat t = oracle::matmul(oracle::from(p.lora_a[layer - 1]), oracle::from(p.lora_b[layer - 1]));
    oracle::Mat s = oracle::matmul(fo, oracle::transpose(t));
    for (auto& v : s.v) v /= std::sqrt(6.0);
    s = oracle::softmax_rows(s);
    const auto& tm = p.token_mlp_for(layer);
    const auto& fm = p.feature_mlp_for(layer);
    const auto& qm = p.query_mlp_for(layer);
    oracle::Mat delta_bar(7, 6);
    for (std::size_t i = 0; i < 7; ++i)
      for (std::size_t k = 0; k < 6; ++k) {
        double acc = 0;
        for (std::size_t j = 1; j < c.tokens; ++j) {
          double mapped = tm.bias.data()[k];
          for (std::size_t q = 0; q < 6; ++q) mapped += t(j, q) * tm.weight.at(q, k);
          acc += s(i, j) * mapped;
        }
        delta_bar(i, k) = acc;
      }
    const oracle::Mat delta = oracle::affine(oracle::add(delta_bar, fo), oracle::from(fm.weight), oracle::from(fm.bias));
    const oracle::Mat query = oracle::affine(t, oracle::from(qm.weight), oracle::from(qm.bias));
    EXPECT_LT(oracle::max_abs_diff(delta, r.delta), 1e-6) << layer;
    EXPECT_LT(oracle::max_abs_diff(query, r.query), 1e-6) << layer;
  }
}

// Shared parameters, and an unshared copy whose per-layer MLPs all equal the
// shared ones.
struct TiedPair {
  ReinAdapterParams shared, untied;
};

TiedPair tied_pair(std::uint64_t seed) {
  ReinConfig c = toy();
  TiedPair out{init_parameters(c, seed), {}};
  Rng rng(seed + 100);
  for (const auto& np : out.shared.named_parameters()) randomize(np.tensor, rng);
  c.use_share = false;
  out.untied = init_parameters(c, seed);
  auto copy = [](const Tensor& from, Tensor to) { std::copy(from.data().begin(), from.data().end(), to.data().begin()); };
  for (std::size_t i = 0; i < c.layers; ++i) {
    copy(out.shared.lora_a[i], out.untied.lora_a[i]);
    copy(out.shared.lora_b[i], out.untied.lora_b[i]);
    for (auto [src, dst] : {std::pair{&out.shared.token_mlp, &out.untied.token_mlp},
                            std::pair{&out.shared.feature_mlp, &out.untied.feature_mlp},
                            std::pair{&out.shared.query_mlp, &out.untied.query_mlp}}) {
      copy((*src)[0].weight, (*dst)[i].weight);
      copy((*src)[0].bias, (*dst)[i].bias);
    }
  }
  copy(out.shared.query_merge.weight, out.untied.query_merge.weight);
  copy(out.shared.query_merge.bias, out.untied.query_merge.bias);
  return out;
}

TEST(ShareTest, TiedWeightsGiveIdenticalOutput) {
  auto pair = tied_pair(13);
  Rng rng(14);
  Tensor f = random_tensor({7, 6}, rng);
  for (std::size_t layer = 1; layer <= 3; ++layer) {
    EXPECT_TRUE(bitwise_equal(rein_refine(layer, f, pair.shared).delta, rein_refine(layer, f, pair.untied).delta));
  }
}

TEST(ShareTest, SharedGradientIsSumOfPerLayerGradients) {
  auto pair = tied_pair(15);
  Rng rng(16);
  std::vector<Tensor> fs, rs;
  for (std::size_t i = 0; i < 3; ++i) {
    fs.push_back(random_tensor({7, 6}, rng));
    rs.push_back(random_tensor({7, 6}, rng));
  }
  auto run = [&](const ReinAdapterParams& p) {
    Tape tape;
    Tensor loss;
    for (std::size_t i = 0; i < 3; ++i) {
      Tensor term = sum(mul(rein_refine(i + 1, fs[i], p).delta, rs[i]));
      loss = loss.defined() ? add(loss, term) : term;
    }
    tape.backward(loss);
  };
  run(pair.shared);
  run(pair.untied);
  for (auto pick : {&ReinAdapterParams::token_mlp, &ReinAdapterParams::feature_mlp}) {
    const auto& shared = (pair.shared.*pick)[0].weight;
    const auto& per_layer = pair.untied.*pick;
    for (std::size_t k = 0; k < shared.size(); ++k) {
      double total = 0;
      for (const auto& m : per_layer) total += m.weight.grad()[k];
      EXPECT_NEAR(shared.grad()[k], total, 1e-4);
    }
  }
}

TEST(PrecomputeTest, FoldedPathMatchesPlainPath) {
  for (auto v : {ReinVariant::core, ReinVariant::lora}) {
    ReinConfig c = toy();
    c.apply_variant(v);
    auto p = init_parameters(c, 17);
    Rng rng(18);
    for (const auto& np : p.named_parameters()) randomize(np.tensor, rng);
    Tensor f = random_tensor({7, 6}, rng);
    for (std::size_t layer = 1; layer <= c.layers; ++layer) {
      p.disable_precompute();
      Tensor plain = rein_refine(layer, f, p).delta;
      p.enable_precompute();
      Tensor cached = rein_refine(layer, f, p).delta;
      for (std::size_t k = 0; k < plain.size(); ++k) EXPECT_NEAR(plain.data()[k], cached.data()[k], 1e-6);
    }
  }
}

TEST(VariantTest, LatticeOrdering) {
  auto count = [](ReinVariant v) {
    ViTConfig arch;
    arch.dim = 1024;
    arch.depth = 24;
    ReinConfig c;
    c.apply_variant(v);
    return count_trainable(arch, c, FineTuneMode::rein).total;
  };
  EXPECT_LT(count(ReinVariant::core), count(ReinVariant::link));
  EXPECT_LT(count(ReinVariant::share), count(ReinVariant::core));
  EXPECT_LT(count(ReinVariant::lora), count(ReinVariant::share));
}

}  // namespace
}  // namespace reinlab
