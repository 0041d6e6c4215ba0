#include <gtest/gtest.h>

#include <cmath>

#include "bridgegcs/bridge/views.hpp"
#include "bridgegcs/planner/planner.hpp"
#include "support.hpp"

namespace bridgegcs {
namespace {

using testing::finite_difference_check;

BridgeModel identity_bridge(std::size_t d, BridgeVariant v = BridgeVariant::utility) {
  BridgeModel m;
  m.variant = v;
  m.latent_dim = d;
  m.encoder.input_dim = d;
  m.decoder.input_dim = d;
  m.norm = Standardizer::identity(d);
  m.trained = true;
  return m;
}

StorageUtility util(double a, double b, double c, double d, double e) { return StorageUtility{{a, b, c, d, e}}; }

LifecycleTrajectory constant_traj(const StorageUtility& u, std::size_t T) {
  LifecycleTrajectory t;
  t.utilities.assign(T, u);
  return t;
}

TEST(Target, ConstantDatasetGivesConstant) {
  const auto c = util(0.5, 0.01, 3.0, 0.2, 1.3);
  const Dataset d{constant_traj(c, 5), constant_traj(c, 7)};
  const auto r = compute_target(d).r_star;
  for (std::size_t k = 0; k < StorageUtility::kDim; ++k) EXPECT_DOUBLE_EQ(r.values[k], c.values[k]);
}

TEST(Target, ExtremaPerComponent) {
  Dataset d{constant_traj(util(1, 0.3, 3, 0.5, 2), 2), constant_traj(util(2, 0.1, 7, 0.9, 4), 2)};
  const auto r = compute_target(d).r_star;
  EXPECT_EQ(r.values[StorageUtility::FGIT], 7.0);
  EXPECT_EQ(r.values[StorageUtility::FGIR], 2.0);
  EXPECT_EQ(r.values[StorageUtility::FGPR], 0.1);
  EXPECT_EQ(r.values[StorageUtility::FGPT], 0.5);
  EXPECT_EQ(r.values[StorageUtility::FPR], 3.0);
  EXPECT_THROW(compute_target(Dataset{}), ConfigError);
}

BridgeModel random_utility_bridge(std::uint64_t seed) {
  Rng rng(seed);
  const std::vector<std::size_t> hidden{6};
  BridgeModel m = make_bridge(BridgeVariant::utility, 5, 3, hidden, rng);
  m.norm = {{0.5, 0.05, 10, 1, 1.2}, {0.3, 0.02, 8, 0.7, 0.1}};
  m.trained = true;
  return m;
}

TEST(Guidance, AtHorizonEveryEntryIsGoal) {
  const auto ub = random_utility_bridge(1);
  const UtilityTarget target{util(1, 0.01, 30, 0.5, 1.4)};
  const auto w = guidance_window(ub, util(0.4, 0.05, 3, 0.2, 1.1), target, 20, 20, 6);
  ASSERT_EQ(w.size(), 6u);
  const auto goal = encode(ub, target.r_star.values);
  for (const auto& z : w) EXPECT_EQ(z, goal);
}

TEST(Guidance, ClampsPastHorizon) {
  const auto ub = random_utility_bridge(2);
  const UtilityTarget target{util(1, 0.01, 30, 0.5, 1.4)};
  const auto w = guidance_window(ub, util(0.2, 0.05, 2, 0.1, 1.0), target, 17, 20, 8);
  const auto goal = encode(ub, target.r_star.values);
  for (std::size_t k = 3; k < 8; ++k) EXPECT_EQ(w[k], goal);
  EXPECT_NE(w[0], goal);
  EXPECT_THROW(guidance_window(ub, target.r_star, target, 21, 20, 2), RejectedInput);
}

TEST(Guidance, GoalConsistentWindowIsConstant) {
  const auto ub = random_utility_bridge(3);
  const UtilityTarget target{util(0.8, 0.02, 25, 0.4, 1.3)};
  const auto goal = encode(ub, target.r_star.values);
  for (std::size_t t : {0u, 5u, 19u}) {
    for (const auto& z : guidance_window(ub, target.r_star, target, t, 20, 8)) EXPECT_EQ(z, goal);
  }
}

TEST(Guidance, EntriesAtQuarterFractions) {
  const auto ub = identity_bridge(5);
  const auto r0 = util(0, 0, 0, 0, 0);
  const UtilityTarget target{util(4, 8, 12, -4, 2)};
  const auto w = guidance_window(ub, r0, target, 0, 4, 5);
  for (std::size_t k = 0; k < 5; ++k)
    for (std::size_t i = 0; i < 5; ++i) EXPECT_DOUBLE_EQ(w[k][i], 0.25 * k * target.r_star.values[i]);
}

TEST(Guidance, DesiredUtilityAtHorizonIsTarget) {
  const auto ub = identity_bridge(5);
  const auto c = util(0.7, 0.03, 12, 1.1, 1.25);
  const UtilityTarget target{c};
  EXPECT_EQ(desired_utility(ub, c, target, 30, 30), c);
  BridgeModel untrained = ub;
  untrained.trained = false;
  EXPECT_THROW(desired_utility(untrained, c, target, 3, 30), RejectedInput);
}

PlannerConfig small_cfg(std::uint64_t seed) {
  PlannerConfig c;
  c.window = 3;
  c.hidden = {8};
  c.epochs = 3;
  c.episodes_per_epoch = 2;
  c.batch_size = 4;
  c.rollout_steps = 4;
  c.seed = seed;
  return c;
}

TEST(Plan, InputLayout) {
  Rng rng(1);
  const UtilityTarget target{};
  PlannerModel p = make_planner(4, 2, 3, 10, 1.0, target, small_cfg(0), rng);
  EXPECT_EQ(p.input_dim(), 4u + 3u * 3u + 1u);
  Tensor x = Tensor::matrix(1, p.input_dim());
  const std::vector<LatentEmbedding> w{{1, 2, 3}, {4, 5, 6}, {7, 8, 9}};
  planner_input_into(p, std::vector<double>{1, 1, 1, 1}, w, 5, x, 0);
  EXPECT_EQ(x[4], 1.0);
  EXPECT_EQ(x[12], 9.0);
  EXPECT_EQ(x[13], 0.5);
  p.guided = false;
  planner_input_into(p, std::vector<double>{1, 1, 1, 1}, w, 5, x, 0);
  for (std::size_t i = 4; i < 13; ++i) EXPECT_EQ(x[i], 0.0);
  EXPECT_THROW(planner_input_into(p, std::vector<double>{1, 1, 1, 1}, std::span(w).first(2), 5, x, 0),
               RejectedInput);
}

TEST(Plan, AlwaysWithinBoundsAndPure) {
  Rng rng(2);
  PlannerModel p = make_planner(6, 3, 2, 20, 0.8, UtilityTarget{}, small_cfg(0), rng);
  for (auto& l : p.net.layers)
    for (auto& w : l.weight.values()) w *= 30.0;  // push pre-activations into saturation
  for (int k = 0; k < 10000; ++k) {
    std::vector<double> o(6);
    for (auto& v : o) v = uniform(rng, -1e3, 1e3);
    std::vector<LatentEmbedding> w(3, LatentEmbedding(2));
    for (auto& z : w)
      for (auto& v : z) v = uniform(rng, -50, 50);
    const auto a = plan(p, o, w, k % 21);
    for (double r : a.rates) {
      ASSERT_GE(r, 0.0);
      ASSERT_LE(r, 0.8);
      ASSERT_TRUE(std::isfinite(r));
    }
    if (k < 10) {
      EXPECT_EQ(plan(p, o, w, k % 21), a);
    }
  }
}

// Reduced-size planner against a random frozen surrogate and utility bridge.
struct LossFixture {
  SurrogateModel sur;
  BridgeModel ub;
  PlannerModel p;
  std::vector<std::vector<double>> obs;
  std::vector<PlannerSample> batch;

  explicit LossFixture(std::uint64_t seed) {
    Rng rng(seed);
    SurrogateConfig sc;
    sc.hidden = {6};
    sur = make_surrogate(2, 1, 2, 3, sc, rng);
    sur.state_norm = {{1.0, 0.2, 0.5, 0.5}, {0.5, 0.3, 1.0, 2.0}};
    sur.plan_norm = {{0.5, 0.4}, {0.3, 0.2}};
    sur.utility_norm = {{0.5, 0.05, 10, 1, 1.2}, {0.3, 0.02, 8, 0.7, 0.1}};
    for (auto& b : sur.trunk.layers[0].bias.values()) b = uniform(rng, -0.2, 0.2);
    ub = random_utility_bridge(seed + 100);
    PlannerConfig pc = small_cfg(seed);
    pc.hidden = {5};
    p = make_planner(4, 2, 3, 12, 0.9, UtilityTarget{util(0.9, 0.01, 20, 0.5, 1.3)}, pc, rng);
    p.state_norm = sur.state_norm;
    for (auto& l : p.net.layers)
      for (auto& b : l.bias.values()) b = uniform(rng, -0.3, 0.3);
    for (int b = 0; b < 3; ++b) {
      std::vector<double> o(4);
      for (auto& v : o) v = uniform(rng, 0, 2);
      obs.push_back(o);
    }
    for (std::size_t b = 0; b < 3; ++b)
      batch.push_back({obs[b], util(uniform(rng, 0, 1), 0.02, uniform(rng, 0, 10), 0.3, 1.1), 3 * b + 1});
  }
};

TEST(Loss, GradientsMatchFiniteDifferencesAndUpstreamIsUntouched) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    LossFixture f(seed);
    const SurrogateModel sur_before = f.sur;
    const BridgeModel ub_before = f.ub;
    const auto l = planner_loss(f.p, f.sur, f.ub, f.batch);
    auto params = parameter_tensors(f.p.net);
    const auto grads = parameter_tensors(std::as_const(l.d_net));
    const auto rep = finite_difference_check(params, grads, [&] { return planner_loss(f.p, f.sur, f.ub, f.batch).value; });
    EXPECT_LT(rep.max_rel_error, 1e-4) << "seed " << seed;
    EXPECT_EQ(f.sur.trunk, sur_before.trunk);
    EXPECT_EQ(f.sur.utility_head, sur_before.utility_head);
    EXPECT_EQ(f.ub.encoder, ub_before.encoder);
    EXPECT_EQ(f.ub.decoder, ub_before.decoder);
  }
}

TEST(Loss, ZeroWhenSurrogateHitsDesiredUtility) {
  LossFixture f(4);
  const auto c = util(0.6, 0.02, 9, 0.4, 1.2);
  f.ub = identity_bridge(5);
  f.p.latent_dim = 5;
  Rng rng(5);
  PlannerConfig pc = small_cfg(1);
  f.p = make_planner(4, 2, 5, 12, 0.9, UtilityTarget{c}, pc, rng);
  f.sur.utility_norm = Standardizer::identity(5);
  f.sur.utility_head.layers[0].weight.fill(0.0);
  f.sur.utility_head.layers[0].bias = Tensor::vector(c.vec());
  for (auto& s : f.batch) s.r_prev = c;
  const auto l = planner_loss(f.p, f.sur, f.ub, f.batch);
  EXPECT_EQ(l.value, 0.0);
  for (const auto& u : l.predicted) EXPECT_EQ(u, c);
}

TEST(Loss, RejectsMismatchedStack) {
  LossFixture f(6);
  const auto ub5 = identity_bridge(5);
  EXPECT_THROW(planner_loss(f.p, f.sur, ub5, f.batch), RejectedInput);
  EXPECT_THROW(planner_loss(f.p, f.sur, f.ub, {}), RejectedInput);
}

EnvConfig small_env() {
  EnvConfig c;
  c.grid_nx = 6;
  c.grid_ny = 6;
  c.horizon = 12;
  return c;
}

struct Stack {
  EnvConfig env = small_env();
  Dataset data;
  BridgeModel sb, ub;
  SurrogateModel sur;
  UtilityTarget target;

  Stack() {
    data = generate_dataset(env, 8, ExplorationPolicy::mixed, 9);
    BridgeTrainConfig bt;
    bt.hidden = {16};
    bt.epochs = 3;
    bt.seed = 2;
    const AugmentConfig aug{6, 2, 0.5, 3};
    sb = train_bridge(bridge_sequences(data, BridgeVariant::state), BridgeVariant::state, aug, bt);
    ub = train_bridge(bridge_sequences(data, BridgeVariant::utility), BridgeVariant::utility, aug, bt);
    SurrogateConfig sc;
    sc.hidden = {16};
    sc.epochs = 3;
    sc.seed = 4;
    sur = train_surrogate(transitions(data), {}, sb, env.grid_nx, env.grid_ny, sc);
    target = compute_target(data);
  }
};

const Stack& stack() {
  static const Stack s;
  return s;
}

TEST(Stack, ProvenanceChecks) {
  const auto& s = stack();
  EXPECT_NO_THROW(check_planner_stack(s.sur, s.sb, s.ub));
  EXPECT_THROW(check_planner_stack(s.sur, s.ub, s.ub), RejectedInput);
  EXPECT_THROW(check_planner_stack(s.sur, s.sb, s.sb), RejectedInput);
  BridgeModel other = s.sb;
  other.encoder.layers[0].weight[0] += 1e-9;
  EXPECT_THROW(check_planner_stack(s.sur, other, s.ub), CorruptionError);
  EXPECT_THROW(train_planner(s.data, s.sur, other, s.ub, s.target, s.env, small_cfg(1)), CorruptionError);
}

TEST(Train, SurrogateModeIsEnvFreeDeterministicAndFrozen) {
  const auto& s = stack();
  const SurrogateModel sur_before = s.sur;
  const BridgeModel sb_before = s.sb, ub_before = s.ub;
  const auto calls = env_step_calls().load();
  const auto a = train_planner(s.data, s.sur, s.sb, s.ub, s.target, s.env, small_cfg(3));
  EXPECT_EQ(env_step_calls().load(), calls);
  const auto b = train_planner(s.data, s.sur, s.sb, s.ub, s.target, s.env, small_cfg(3));
  EXPECT_EQ(a.loss_curve, b.loss_curve);
  EXPECT_EQ(a.net, b.net);
  ASSERT_EQ(a.loss_curve.size(), 3u);
  EXPECT_EQ(checkpoint_hash(to_checkpoint(s.sur)), checkpoint_hash(to_checkpoint(sur_before)));
  EXPECT_EQ(checkpoint_hash(to_checkpoint(s.sb)), checkpoint_hash(to_checkpoint(sb_before)));
  EXPECT_EQ(checkpoint_hash(to_checkpoint(s.ub)), checkpoint_hash(to_checkpoint(ub_before)));
  EXPECT_EQ(a.surrogate_hash, checkpoint_hash(to_checkpoint(s.sur)));
  EXPECT_EQ(a.utility_bridge_hash, checkpoint_hash(to_checkpoint(s.ub)));
  EXPECT_EQ(a.state_bridge_hash, s.sur.bridge_hash);
}

TEST(Train, EnvModeUsesSimulator) {
  const auto& s = stack();
  PlannerConfig cfg = small_cfg(3);
  cfg.mode = RolloutMode::env;
  const auto calls = env_step_calls().load();
  const auto p = train_planner(s.data, s.sur, s.sb, s.ub, s.target, s.env, cfg);
  EXPECT_GT(env_step_calls().load(), calls);
  EXPECT_EQ(p.mode, RolloutMode::env);
}

TEST(Train, GuidanceAblationSharesEverythingElse) {
  const auto& s = stack();
  PlannerConfig cfg = small_cfg(5);
  const auto guided = train_planner(s.data, s.sur, s.sb, s.ub, s.target, s.env, cfg);
  cfg.guided = false;
  const auto blind = train_planner(s.data, s.sur, s.sb, s.ub, s.target, s.env, cfg);
  EXPECT_FALSE(blind.guided);
  EXPECT_EQ(blind.net.layer_sizes(), guided.net.layer_sizes());
  EXPECT_EQ(blind.target, guided.target);
  EXPECT_EQ(blind.surrogate_hash, guided.surrogate_hash);
}

TEST(Rollout, ZeroOutputPlannerMatchesZeroPlanEnvTrajectory) {
  const auto& s = stack();
  Rng rng(7);
  PlannerModel p = make_planner(s.env.state_dim(), s.env.plan_dim(), s.ub.latent_dim, s.env.horizon, s.env.max_rate,
                                s.target, small_cfg(0), rng);
  auto& out = p.net.layers.back();
  out.weight.fill(0.0);
  out.bias.fill(-1e3);
  const auto life = rollout(p, RolloutMode::env, s.sur, s.sb, s.ub, s.env);
  const auto expected =
      rollout_open_loop(s.env, std::vector<InjectionPlan>(s.env.horizon, InjectionPlan{std::vector<double>(4, 0.0)}));
  EXPECT_FALSE(life.truncated);
  EXPECT_EQ(life.trajectory, expected);
}

TEST(Rollout, DeterministicInBothModes) {
  const auto& s = stack();
  const auto p = train_planner(s.data, s.sur, s.sb, s.ub, s.target, s.env, small_cfg(8));
  for (auto mode : {RolloutMode::env, RolloutMode::surrogate}) {
    const auto a = rollout(p, mode, s.sur, s.sb, s.ub, s.env);
    const auto b = rollout(p, mode, s.sur, s.sb, s.ub, s.env);
    EXPECT_EQ(a.trajectory, b.trajectory);
    EXPECT_EQ(a.trajectory.length(), s.env.horizon);
    for (const auto& a_t : a.trajectory.plans)
      for (double r : a_t.rates) {
        EXPECT_GE(r, 0.0);
        EXPECT_LE(r, s.env.max_rate);
      }
  }
  const auto calls = env_step_calls().load();
  rollout(p, RolloutMode::surrogate, s.sur, s.sb, s.ub, s.env);
  EXPECT_EQ(env_step_calls().load(), calls);
}

TEST(Persistence, CheckpointRoundTrip) {
  const auto& s = stack();
  const auto p = train_planner(s.data, s.sur, s.sb, s.ub, s.target, s.env, small_cfg(9));
  testing::TempDir dir("planner_ckpt");
  const auto hash = save_checkpoint(to_checkpoint(p), dir.path() / "p");
  const auto back = planner_from_checkpoint(load_checkpoint(dir.path() / "p"));
  EXPECT_EQ(checkpoint_hash(to_checkpoint(back)), hash);
  EXPECT_EQ(back.target, p.target);
  EXPECT_EQ(rollout(back, RolloutMode::env, s.sur, s.sb, s.ub, s.env).trajectory,
            rollout(p, RolloutMode::env, s.sur, s.sb, s.ub, s.env).trajectory);
  EXPECT_THROW(planner_from_checkpoint(to_checkpoint(s.sur)), CorruptionError);
}

TEST(Modes, Names) {
  EXPECT_EQ(rollout_mode_from_string("env"), RolloutMode::env);
  EXPECT_EQ(to_string(RolloutMode::surrogate), "surrogate");
  EXPECT_THROW(rollout_mode_from_string("replay"), ConfigError);
}

}  // namespace
}  // namespace bridgegcs
