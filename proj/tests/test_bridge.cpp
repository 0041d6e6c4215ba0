#include <gtest/gtest.h>

#include <cmath>

#include "bridgegcs/bridge/bridge.hpp"
#include "bridgegcs/bridge/views.hpp"
#include "bridgegcs/env/dataset.hpp"
#include "support.hpp"

namespace bridgegcs {
namespace {

using testing::finite_difference_check;

TEST(Interpolate, Endpoints) {
  const std::vector<double> z0{0.1, -3.0, 7.7}, zT{2.5, 0.3, -1.0};
  EXPECT_EQ(bridge_interpolate(z0, zT, 0, 9), z0);
  EXPECT_EQ(bridge_interpolate(z0, zT, 9, 9), zT);
}

TEST(Interpolate, MidpointAndArithmetic) {
  const std::vector<double> z0{0.0, 0.0}, zT{4.0, 8.0};
  EXPECT_EQ(bridge_interpolate(z0, zT, 1, 4), (std::vector<double>{1.0, 2.0}));
  EXPECT_EQ(bridge_interpolate(z0, zT, 2, 4), (std::vector<double>{2.0, 4.0}));
}

TEST(Interpolate, AffineInT) {
  Rng rng(1);
  std::vector<double> z0(8), zT(8);
  for (auto& v : z0) v = uniform(rng, -5, 5);
  for (auto& v : zT) v = uniform(rng, -5, 5);
  const std::size_t T = 37;
  for (std::size_t t = 1; t + 1 <= T; ++t) {
    const auto a = bridge_interpolate(z0, zT, t - 1, T), b = bridge_interpolate(z0, zT, t, T),
               c = bridge_interpolate(z0, zT, t + 1, T);
    for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(a[i] - 2 * b[i] + c[i], 0.0, 1e-12);
  }
}

TEST(Interpolate, RejectsBadArguments) {
  const std::vector<double> z{1.0}, z2{1.0, 2.0};
  EXPECT_THROW(bridge_interpolate(z, z, 5, 4), RejectedInput);
  EXPECT_THROW(bridge_interpolate(z, z, 0, 0), RejectedInput);
  EXPECT_THROW(bridge_interpolate(z, z2, 1, 4), RejectedInput);
}

TEST(Sample, VarianceFormula) {
  EXPECT_EQ(bridge_variance(60, 120), 30.0);
  EXPECT_EQ(bridge_variance(1, 4), 0.75);
  EXPECT_EQ(bridge_variance(0, 4), 0.0);
  EXPECT_EQ(bridge_variance(4, 4), 0.0);
}

TEST(Sample, EndpointsHaveNoNoise) {
  Rng rng(3);
  const std::vector<double> z0{1.0, 2.0}, zT{-1.0, 5.0};
  EXPECT_EQ(bridge_sample(z0, zT, 0, 10, rng), z0);
  EXPECT_EQ(bridge_sample(z0, zT, 10, 10, rng), zT);
}

TEST(Sample, EmpiricalVarianceAtQuarterPoint) {
  Rng rng(4);
  const std::vector<double> z0(4, 0.0), zT(4, 4.0);
  const int n = 10000;
  std::vector<double> sum(4, 0.0), sq(4, 0.0);
  for (int k = 0; k < n; ++k) {
    const auto z = bridge_sample(z0, zT, 1, 4, rng);
    for (std::size_t i = 0; i < 4; ++i) {
      sum[i] += z[i];
      sq[i] += z[i] * z[i];
    }
  }
  for (std::size_t i = 0; i < 4; ++i) {
    const double m = sum[i] / n, v = sq[i] / n - m * m;
    EXPECT_NEAR(m, 1.0, 0.05);
    EXPECT_NEAR(v, 0.75, 0.05 * 0.75);
  }
}

std::vector<Sequence> ramp_sequences(std::size_t n, std::size_t T, std::size_t dim) {
  std::vector<Sequence> out(n);
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t t = 0; t < T; ++t) {
      std::vector<double> x(dim);
      for (std::size_t c = 0; c < dim; ++c) x[c] = static_cast<double>(k) + 0.1 * static_cast<double>(t * (c + 1));
      out[k].push_back(x);
    }
  return out;
}

TEST(Augment, ZeroAlphaIsSliceExact) {
  const auto seqs = ramp_sequences(3, 12, 2);
  Rng rng(5);
  const auto sigma = channel_std(seqs);
  const auto r = augment(seqs, sigma, AugmentConfig{5, 4, 0.0, 0}, rng);
  ASSERT_EQ(r.items.size(), 12u);
  for (const auto& sub : r.items) {
    ASSERT_EQ(sub.steps.size(), 5u);
    for (std::size_t t = 0; t < 5; ++t) EXPECT_EQ(sub.steps[t], seqs[sub.source][sub.start + t]);
  }
}

TEST(Augment, FullLengthSingleSampleIsIdentity) {
  const auto seqs = ramp_sequences(2, 6, 3);
  Rng rng(6);
  const auto r = augment(seqs, channel_std(seqs), AugmentConfig{6, 1, 0.0, 0}, rng);
  ASSERT_EQ(r.items.size(), 2u);
  EXPECT_EQ(r.items[0].steps, seqs[0]);
  EXPECT_EQ(r.items[1].steps, seqs[1]);
}

TEST(Augment, NoiseScalesWithChannelStd) {
  // Channel 0 is constant at 1.0 within the sliced sequence; sigma comes from varied data.
  const double sigma_c = 2.0;
  std::vector<Sequence> seqs{Sequence(2, std::vector<double>{1.0})};
  const std::vector<double> sigma{sigma_c};
  Rng rng(7);
  const auto r = augment(seqs, sigma, AugmentConfig{2, 5000, 0.1, 0}, rng);
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (const auto& sub : r.items)
    for (const auto& x : sub.steps) {
      sum += x[0];
      sq += x[0] * x[0];
      ++n;
    }
  ASSERT_EQ(n, 10000u);
  const double m = sum / n, sd = std::sqrt(sq / n - m * m);
  EXPECT_NEAR(sd, 0.1 * sigma_c, 0.1 * 0.1 * sigma_c);
}

TEST(Augment, ShortTrajectoriesAreSkipped) {
  const auto seqs = ramp_sequences(2, 3, 1);
  Rng rng(8);
  const auto r = augment(seqs, channel_std(seqs), AugmentConfig{4, 2, 0.0, 0}, rng);
  EXPECT_TRUE(r.items.empty());
  EXPECT_EQ(r.skipped, 2u);
  EXPECT_THROW(augment(seqs, channel_std(seqs), AugmentConfig{1, 2, 0.0, 0}, rng), ConfigError);
}

BridgeModel identity_bridge(std::size_t d) {
  BridgeModel m;
  m.latent_dim = d;
  m.encoder.input_dim = d;
  m.decoder.input_dim = d;
  m.norm = Standardizer::identity(d);
  m.trained = true;
  return m;
}

TEST(Model, IdentityDecoderReturnsLatent) {
  const auto m = identity_bridge(3);
  const std::vector<double> z{0.25, -4.0, 9.5};
  EXPECT_EQ(decode(m, z), z);
  EXPECT_EQ(encode(m, z), z);
}

TEST(Model, UntrainedEncoderIsFiniteAndPure) {
  Rng rng(9);
  const std::vector<std::size_t> hidden{16, 16};
  const auto m = make_bridge(BridgeVariant::state, 40, 8, hidden, rng);
  std::vector<double> x(40);
  for (auto& v : x) v = uniform(rng, -100, 100);
  const auto z = encode(m, x);
  ASSERT_EQ(z.size(), 8u);
  for (double v : z) EXPECT_TRUE(std::isfinite(v));
  EXPECT_EQ(encode(m, x), z);
  EXPECT_EQ(decode(m, z), decode(m, z));
  EXPECT_THROW(encode(m, std::vector<double>(39)), RejectedInput);
  EXPECT_THROW(decode(m, std::vector<double>(7)), RejectedInput);
}

TEST(InfoNce, ClosedFormValue) {
  const std::vector<double> neg{-1.0};
  EXPECT_NEAR(info_nce(1.0, neg, 1.0).value, std::log1p(std::exp(-2.0)), 1e-15);
  EXPECT_NEAR(info_nce(1.0, neg, 1.0).value, 0.126928, 1e-6);
  EXPECT_THROW(info_nce(1.0, neg, 0.0), ConfigError);
}

TEST(InfoNce, DerivativesMatchFiniteDifferences) {
  Tensor s({4}, {0.3, -0.2, 0.9, 0.1});
  const auto r = info_nce(s[0], std::vector<double>{s[1], s[2], s[3]}, 0.5);
  Tensor g({4}, {r.d_positive, r.d_negatives[0], r.d_negatives[1], r.d_negatives[2]});
  std::vector<Tensor*> ps{&s};
  std::vector<const Tensor*> gs{&g};
  EXPECT_LT(finite_difference_check(ps, gs,
                                    [&] { return info_nce(s[0], std::vector<double>{s[1], s[2], s[3]}, 0.5).value; })
                .max_rel_error,
            1e-4);
}

TEST(Loss, PerfectAutoencoderOnLinearSequenceHasZeroReconstruction) {
  const auto m = identity_bridge(3);
  Subsequence sub;
  for (std::size_t t = 0; t < 6; ++t)
    sub.steps.push_back({1.0 + 0.5 * t, -2.0 + 0.25 * t, 3.0 - 1.0 * t});
  const std::vector<Subsequence> batch{sub};
  const auto loss = bridge_loss(m, batch, BridgeTrainConfig{}, {});
  EXPECT_NEAR(loss.reconstruction, 0.0, 1e-28);
  EXPECT_TRUE(loss.contrastive_skipped);
}

TEST(Loss, ContrastiveNeedsTwoSources) {
  Rng rng(10);
  std::vector<Subsequence> batch(2);
  for (auto& b : batch) b.steps = Sequence(4, std::vector<double>{1.0});
  EXPECT_TRUE(sample_contrastive(batch, 3, rng).empty());
  batch[1].source = 1;
  const auto terms = sample_contrastive(batch, 3, rng);
  ASSERT_EQ(terms.size(), 8u);
  for (const auto& t : terms) {
    EXPECT_NE(t.anchor, t.positive);
    EXPECT_EQ(t.anchor / 4, t.positive / 4);
    for (std::size_t n : t.negatives) EXPECT_NE(n / 4, t.anchor / 4);
  }
}

// Reduced-size bridge with a random batch spanning several sources.
struct BridgeFixture {
  BridgeModel m;
  std::vector<Subsequence> batch;
  std::vector<ContrastiveTerm> terms;
  BridgeTrainConfig cfg;

  explicit BridgeFixture(std::uint64_t seed) {
    Rng rng(seed);
    const std::vector<std::size_t> hidden{5};
    m = make_bridge(BridgeVariant::utility, 4, 3, hidden, rng);
    for (auto& l : m.encoder.layers)
      for (auto& b : l.bias.values()) b = uniform(rng, -0.3, 0.3);
    for (auto& l : m.decoder.layers)
      for (auto& b : l.bias.values()) b = uniform(rng, -0.3, 0.3);
    m.norm = {{0.1, -0.2, 0.3, 0.0}, {1.5, 0.5, 2.0, 1.0}};
    for (std::size_t b = 0; b < 3; ++b) {
      Subsequence s;
      s.source = b;
      for (std::size_t t = 0; t < 4; ++t) {
        std::vector<double> x(4);
        for (auto& v : x) v = uniform(rng, -2, 2);
        s.steps.push_back(x);
      }
      batch.push_back(s);
    }
    cfg.temperature = 0.5;
    cfg.contrastive_weight = 0.7;
    terms = sample_contrastive(batch, 2, rng);
  }
};

TEST(Loss, GradientsMatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    BridgeFixture f(seed);
    const auto loss = bridge_loss(f.m, f.batch, f.cfg, f.terms);
    ASSERT_FALSE(loss.contrastive_skipped);
    auto params = collect_tensors({&f.m.encoder, &f.m.decoder});
    const auto grads = collect_const_tensors({&loss.d_encoder, &loss.d_decoder});
    const auto rep = finite_difference_check(params, grads, [&] { return bridge_loss(f.m, f.batch, f.cfg, f.terms).total; });
    EXPECT_LT(rep.max_rel_error, 1e-4) << "seed " << seed;
  }
}

TEST(Loss, TotalIsReconstructionPlusWeightedContrastive) {
  BridgeFixture f(3);
  const auto loss = bridge_loss(f.m, f.batch, f.cfg, f.terms);
  EXPECT_NEAR(loss.total, loss.reconstruction + 0.7 * loss.contrastive, 1e-15);
  EXPECT_GT(loss.contrastive, 0.0);
}

EnvConfig small_env() {
  EnvConfig c;
  c.grid_nx = 6;
  c.grid_ny = 6;
  c.horizon = 16;
  return c;
}

BridgeTrainConfig small_train(std::uint64_t seed) {
  BridgeTrainConfig t;
  t.hidden = {24};
  t.epochs = 15;
  t.batch_size = 16;
  t.learning_rate = 3e-3;
  t.seed = seed;
  return t;
}

TEST(Train, DeterministicAndDecreasing) {
  const auto data = generate_dataset(small_env(), 10, ExplorationPolicy::mixed, 2);
  const auto seqs = bridge_sequences(data, BridgeVariant::state);
  const AugmentConfig aug{8, 4, 0.5, 1};
  const auto a = train_bridge(seqs, BridgeVariant::state, aug, small_train(4));
  const auto b = train_bridge(seqs, BridgeVariant::state, aug, small_train(4));
  EXPECT_EQ(a.loss_curve, b.loss_curve);
  EXPECT_EQ(a.encoder, b.encoder);
  ASSERT_EQ(a.loss_curve.size(), 15u);
  EXPECT_LT(a.loss_curve.back(), a.loss_curve.front());
  EXPECT_TRUE(a.trained);
  EXPECT_EQ(a.input_dim(), 72u);
}

TEST(Train, UtilityVariantUsesFiveChannels) {
  const auto data = generate_dataset(small_env(), 10, ExplorationPolicy::mixed, 2);
  const auto m =
      train_bridge(bridge_sequences(data, BridgeVariant::utility), BridgeVariant::utility, AugmentConfig{8, 4, 0.5, 1},
                   small_train(5));
  EXPECT_EQ(m.input_dim(), StorageUtility::kDim);
  EXPECT_EQ(m.variant, BridgeVariant::utility);
  EXPECT_EQ(encode(m, data[0].utilities[3].values).size(), 8u);
}

TEST(Train, RejectsBadConfigs) {
  const auto seqs = ramp_sequences(3, 6, 2);
  BridgeTrainConfig cfg = small_train(1);
  EXPECT_THROW(train_bridge(seqs, BridgeVariant::state, AugmentConfig{8, 2, 0.0, 0}, cfg), ConfigError);
  cfg.temperature = 0.0;
  EXPECT_THROW(train_bridge(seqs, BridgeVariant::state, AugmentConfig{4, 2, 0.0, 0}, cfg), ConfigError);
  EXPECT_THROW(train_bridge(std::vector<Sequence>{}, BridgeVariant::state, AugmentConfig{}, small_train(1)),
               ConfigError);
}

TEST(Train, PositivesSeparateFromNegativesOnHeldOut) {
  const auto data = generate_dataset(small_env(), 16, ExplorationPolicy::mixed, 3);
  const Dataset train(data.begin(), data.begin() + 12), held(data.begin() + 12, data.end());
  BridgeTrainConfig cfg = small_train(6);
  cfg.epochs = 25;
  const auto m =
      train_bridge(bridge_sequences(train, BridgeVariant::state), BridgeVariant::state, AugmentConfig{8, 4, 0.5, 1}, cfg);
  const auto sep = contrastive_separation(m, bridge_sequences(held, BridgeVariant::state), 2000, 1);
  EXPECT_GT(sep.positive, sep.negative);
}

TEST(Persistence, CheckpointRoundTripPreservesEncoding) {
  Rng rng(12);
  const std::vector<std::size_t> hidden{8, 8};
  BridgeModel m = make_bridge(BridgeVariant::state, 6, 3, hidden, rng);
  m.norm = {{1, 2, 3, 4, 5, 6}, {0.5, 1, 2, 1, 1, 3}};
  m.trained = true;
  m.loss_curve = {3.0, 2.0};
  testing::TempDir dir("bridge_ckpt");
  save_checkpoint(to_checkpoint(m), dir.path() / "b");
  const BridgeModel back = bridge_from_checkpoint(load_checkpoint(dir.path() / "b"));
  for (int k = 0; k < 100; ++k) {
    std::vector<double> x(6);
    for (auto& v : x) v = uniform(rng, -10, 10);
    EXPECT_EQ(encode(back, x), encode(m, x));
  }
  EXPECT_EQ(checkpoint_hash(to_checkpoint(back)), checkpoint_hash(to_checkpoint(m)));
  EXPECT_EQ(back.loss_curve, m.loss_curve);

  Checkpoint wrong = to_checkpoint(m);
  wrong.kind = "surrogate";
  EXPECT_THROW(bridge_from_checkpoint(wrong), CorruptionError);
}

}  // namespace
}  // namespace bridgegcs
