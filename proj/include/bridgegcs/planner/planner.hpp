#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "bridgegcs/bridge/bridge.hpp"
#include "bridgegcs/core/checkpoint.hpp"
#include "bridgegcs/core/mlp.hpp"
#include "bridgegcs/core/optimizer.hpp"
#include "bridgegcs/core/standardizer.hpp"
#include "bridgegcs/env/dataset.hpp"
#include "bridgegcs/env/reservoir.hpp"
#include "bridgegcs/surrogate/surrogate.hpp"

namespace bridgegcs {

enum class RolloutMode { surrogate, env };

inline std::string_view to_string(RolloutMode m) { return m == RolloutMode::surrogate ? "surrogate" : "env"; }

inline RolloutMode rollout_mode_from_string(std::string_view s) {
  if (s == "surrogate") return RolloutMode::surrogate;
  if (s == "env") return RolloutMode::env;
  throw ConfigError("unknown rollout mode '" + std::string(s) + "'");
}

struct UtilityTarget {
  StorageUtility r_star;
  friend bool operator==(const UtilityTarget&, const UtilityTarget&) = default;
};

/// r*: maximum FGIR and FGIT, minimum FGPR and FGPT, mean FPR over all training steps.
inline UtilityTarget compute_target(const Dataset& train) {
  std::size_t steps = 0;
  UtilityTarget u;
  auto& r = u.r_star.values;
  for (const auto& traj : train) {
    for (const auto& x : traj.utilities) {
      if (steps == 0) {
        r = x.values;
        r[StorageUtility::FPR] = 0.0;
      }
      r[StorageUtility::FGIR] = std::max(r[StorageUtility::FGIR], x.values[StorageUtility::FGIR]);
      r[StorageUtility::FGIT] = std::max(r[StorageUtility::FGIT], x.values[StorageUtility::FGIT]);
      r[StorageUtility::FGPR] = std::min(r[StorageUtility::FGPR], x.values[StorageUtility::FGPR]);
      r[StorageUtility::FGPT] = std::min(r[StorageUtility::FGPT], x.values[StorageUtility::FGPT]);
      r[StorageUtility::FPR] += x.values[StorageUtility::FPR];
      ++steps;
    }
  }
  if (steps == 0) throw ConfigError("compute_target: training dataset has no steps");
  r[StorageUtility::FPR] /= static_cast<double>(steps);
  for (double v : r)
    if (!std::isfinite(v)) throw ConfigError("compute_target: non-finite target");
  return u;
}

/// W latent waypoints from encode(r_prev) towards encode(r_star) at t' = t .. t+W-1,
/// with t' clamped to T.
inline std::vector<LatentEmbedding> guidance_window(const BridgeModel& utility_bridge, const StorageUtility& r_prev,
                                                    const UtilityTarget& target, std::size_t t, std::size_t T,
                                                    std::size_t W) {
  if (!utility_bridge.trained) throw RejectedInput("guidance_window: utility bridge is not trained");
  if (t > T) throw RejectedInput("guidance_window: t outside [0, T]");
  const auto z_start = encode(utility_bridge, r_prev.values);
  const auto z_goal = encode(utility_bridge, target.r_star.values);
  std::vector<LatentEmbedding> out;
  out.reserve(W);
  for (std::size_t k = 0; k < W; ++k) out.push_back(bridge_interpolate(z_start, z_goal, std::min(t + k, T), T));
  return out;
}

/// Utility the planner is asked to reach at step t: the decoded first waypoint.
inline StorageUtility desired_utility(const BridgeModel& utility_bridge, const StorageUtility& r_prev,
                                      const UtilityTarget& target, std::size_t t, std::size_t T) {
  const auto w = guidance_window(utility_bridge, r_prev, target, t, T, 1);
  return StorageUtility::from(decode(utility_bridge, w.front()));
}

struct PlannerConfig {
  std::size_t window = 8;
  std::vector<std::size_t> hidden{64, 64};
  std::size_t epochs = 30;
  std::size_t episodes_per_epoch = 8;
  std::size_t batch_size = 32;
  std::size_t rollout_steps = 16;
  double learning_rate = 1e-3;
  RolloutMode mode = RolloutMode::surrogate;
  bool guided = true;
  std::uint64_t seed = 0;
};

/// [standardized o_t, W guidance latents, t/T] -> max_rate * sigmoid(net) per well.
/// An unguided planner sees a zero window everywhere; everything else is shared.
struct PlannerModel {
  std::size_t window = 0;
  std::size_t latent_dim = 0;
  std::size_t state_dim = 0;
  std::size_t plan_dim = 0;
  std::size_t horizon = 0;
  double max_rate = 0.0;
  bool guided = true;
  RolloutMode mode = RolloutMode::surrogate;
  UtilityTarget target;
  MlpParams net;
  Standardizer state_norm;
  std::string surrogate_hash, state_bridge_hash, utility_bridge_hash;
  std::vector<double> loss_curve;

  std::size_t input_dim() const { return state_dim + window * latent_dim + 1; }
};

inline PlannerModel make_planner(std::size_t state_dim, std::size_t plan_dim, std::size_t latent_dim,
                                 std::size_t horizon, double max_rate, const UtilityTarget& target,
                                 const PlannerConfig& cfg, Rng& rng) {
  if (cfg.window < 1) throw ConfigError("planner: window must be >= 1");
  if (horizon < 1) throw ConfigError("planner: horizon must be >= 1");
  PlannerModel p;
  p.window = cfg.window;
  p.latent_dim = latent_dim;
  p.state_dim = state_dim;
  p.plan_dim = plan_dim;
  p.horizon = horizon;
  p.max_rate = max_rate;
  p.guided = cfg.guided;
  p.mode = cfg.mode;
  p.target = target;
  p.net = make_mlp(p.input_dim(), cfg.hidden, plan_dim, Activation::tanh, Activation::identity, rng);
  p.state_norm = Standardizer::identity(state_dim);
  return p;
}

/// Writes one planner input row. `window` is ignored (zeros) for an unguided planner.
inline void planner_input_into(const PlannerModel& p, std::span<const double> o,
                               std::span<const LatentEmbedding> window, std::size_t t, Tensor& x, std::size_t row) {
  if (o.size() != p.state_dim) throw RejectedInput("planner: observation dimension mismatch");
  if (window.size() != p.window) throw RejectedInput("planner: guidance window length mismatch");
  p.state_norm.apply_into(o, x, row, 0);
  double* dst = x.data() + row * x.cols() + p.state_dim;
  for (std::size_t k = 0; k < p.window; ++k) {
    if (window[k].size() != p.latent_dim) throw RejectedInput("planner: guidance latent dimension mismatch");
    for (std::size_t j = 0; j < p.latent_dim; ++j) *dst++ = p.guided ? window[k][j] : 0.0;
  }
  *dst = static_cast<double>(t) / static_cast<double>(p.horizon);
}

namespace detail {

inline double sigmoid(double a) { return 1.0 / (1.0 + std::exp(-a)); }

}  // namespace detail

inline InjectionPlan plan(const PlannerModel& p, std::span<const double> o, std::span<const LatentEmbedding> window,
                          std::size_t t) {
  Tensor x = Tensor::matrix(1, p.input_dim());
  planner_input_into(p, o, window, t, x, 0);
  const Tensor a = forward(p.net, x);
  InjectionPlan s{std::vector<double>(p.plan_dim)};
  for (std::size_t j = 0; j < p.plan_dim; ++j) s.rates[j] = p.max_rate * detail::sigmoid(a[j]);
  return s;
}

/// One planner training input: the state at step t and the realized utility of step t-1.
struct PlannerSample {
  std::span<const double> o;
  StorageUtility r_prev;
  std::size_t t = 0;
};

struct PlannerLoss {
  double value = 0.0;  // mean over batch of ||r_hat - r_tilde||^2, surrogate-standardized units
  MlpParams d_net;
  std::vector<InjectionPlan> plans;
  std::vector<StorageUtility> predicted;  // surrogate utilities in raw units
};

/// Tracking loss through the frozen surrogate; only planner gradients are produced.
inline PlannerLoss planner_loss(const PlannerModel& p, const SurrogateModel& sur, const BridgeModel& utility_bridge,
                                std::span<const PlannerSample> batch) {
  if (batch.empty()) throw RejectedInput("planner_loss: empty batch");
  if (sur.state_dim() != p.state_dim || sur.plan_dim != p.plan_dim) {
    throw RejectedInput("planner_loss: surrogate dimensions do not match planner");
  }
  if (utility_bridge.latent_dim != p.latent_dim) throw RejectedInput("planner_loss: utility bridge latent mismatch");
  const std::size_t B = batch.size(), S = p.plan_dim, R = StorageUtility::kDim;

  Tensor x = Tensor::matrix(B, p.input_dim());
  Tensor target = Tensor::matrix(B, R);
  for (std::size_t b = 0; b < B; ++b) {
    const auto w = guidance_window(utility_bridge, batch[b].r_prev, p.target, batch[b].t, p.horizon, p.window);
    planner_input_into(p, batch[b].o, w, batch[b].t, x, b);
    const auto desired = decode(utility_bridge, w.front());
    sur.utility_norm.apply_into(desired, target, b);
  }

  MlpTrace pt = forward_trace(p.net, x);
  const Tensor& a = pt.output();
  Tensor sig = Tensor::matrix(B, S);
  Tensor xs = Tensor::matrix(B, sur.input_dim());
  PlannerLoss out;
  out.plans.resize(B);
  for (std::size_t b = 0; b < B; ++b) {
    out.plans[b].rates.resize(S);
    for (std::size_t j = 0; j < S; ++j) {
      sig.at(b, j) = detail::sigmoid(a.at(b, j));
      out.plans[b].rates[j] = p.max_rate * sig.at(b, j);
    }
    sur.state_norm.apply_into(batch[b].o, xs, b, 0);
    sur.plan_norm.apply_into(out.plans[b].rates, xs, b, sur.state_dim());
  }

  MlpTrace trunk = forward_trace(sur.trunk, xs);
  MlpTrace head = forward_trace(sur.utility_head, trunk.output());
  const Tensor& u = head.output();
  Tensor du = Tensor::matrix(B, R);
  const double inv_b = 1.0 / static_cast<double>(B);
  out.predicted.resize(B);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t k = 0; k < R; ++k) {
      const double d = u.at(b, k) - target.at(b, k);
      out.value += d * d;
      du.at(b, k) = 2.0 * d * inv_b;
    }
    out.predicted[b] = StorageUtility::from(sur.utility_norm.invert(u.row(b)));
  }
  out.value *= inv_b;
  if (!std::isfinite(out.value)) throw DivergenceError("planner_loss: non-finite loss");

  Tensor dh = backward(sur.utility_head, head, std::move(du), nullptr);
  Tensor dxs = backward(sur.trunk, trunk, std::move(dh), nullptr);
  Tensor da = Tensor::matrix(B, S);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t j = 0; j < S; ++j) {
      const double d_rate = dxs.at(b, sur.state_dim() + j) / sur.plan_norm.scale[j];
      const double g = sig.at(b, j);
      da.at(b, j) = d_rate * p.max_rate * g * (1.0 - g);
    }
  }
  out.d_net = zeros_like(p.net);
  backward(p.net, pt, std::move(da), &out.d_net);
  return out;
}

/// Provenance and shape checks shared by training and rollout.
inline void check_planner_stack(const SurrogateModel& sur, const BridgeModel& state_bridge,
                                const BridgeModel& utility_bridge) {
  if (!state_bridge.trained || state_bridge.variant != BridgeVariant::state) {
    throw RejectedInput("planner: a trained state bridge is required");
  }
  if (!utility_bridge.trained || utility_bridge.variant != BridgeVariant::utility) {
    throw RejectedInput("planner: a trained utility bridge is required");
  }
  if (sur.bridge_hash != checkpoint_hash(to_checkpoint(state_bridge))) {
    throw CorruptionError("planner: surrogate was trained against a different state bridge (hash " + sur.bridge_hash +
                          ")");
  }
}

namespace detail {

// Advances one closed-loop step in the chosen dynamics. Surrogate mode carries the
// predicted utility forward as r_{t}; env mode uses the simulator's.
inline std::pair<ReservoirState, StorageUtility> advance(RolloutMode mode, const ReservoirState& s,
                                                         const InjectionPlan& a, const SurrogateModel& sur,
                                                         const BridgeModel& state_bridge, const EnvConfig& env) {
  if (mode == RolloutMode::env) {
    StepResult r = env_step(s, a, env);
    return {std::move(r.state), r.utility};
  }
  const auto o = s.observation();
  const SimulateResult r = simulate(sur, o, a.rates);
  ReservoirState next = latent_to_state(sur, state_bridge, r.next_latent);
  next.injected_total = r.utility.injected_total();
  next.produced_total = r.utility.produced_total();
  return {std::move(next), r.utility};
}

}  // namespace detail

/// Trains the planner against the frozen surrogate. Each episode starts a batch of
/// lifecycles at random training-set steps and rolls them forward `rollout_steps`
/// steps with the planner's own plans, taking one optimizer step per rollout step.
inline PlannerModel train_planner(const Dataset& train, const SurrogateModel& sur, const BridgeModel& state_bridge,
                                  const BridgeModel& utility_bridge, const UtilityTarget& target,
                                  const EnvConfig& env, const PlannerConfig& cfg) {
  check_planner_stack(sur, state_bridge, utility_bridge);
  if (train.empty()) throw ConfigError("train_planner: empty training dataset");
  if (cfg.batch_size < 1 || cfg.rollout_steps < 1) throw ConfigError("train_planner: batch and rollout must be >= 1");
  const std::size_t T = env.horizon;
  for (const auto& traj : train)
    if (traj.length() != T) throw ConfigError("train_planner: trajectory length differs from env horizon");

  Rng rng(derive_seed(cfg.seed, 0x91a7ULL));
  PlannerModel p = make_planner(sur.state_dim(), sur.plan_dim, utility_bridge.latent_dim, T, env.max_rate, target,
                                cfg, rng);
  p.state_norm = sur.state_norm;
  p.surrogate_hash = checkpoint_hash(to_checkpoint(sur));
  p.state_bridge_hash = sur.bridge_hash;
  p.utility_bridge_hash = checkpoint_hash(to_checkpoint(utility_bridge));

  OptimizerState opt = make_optimizer(cfg.learning_rate);
  const auto params = parameter_tensors(p.net);

  struct Lane {
    ReservoirState state;
    std::vector<double> obs;
    StorageUtility r_prev;
    std::size_t t = 0;
  };

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t e = 0; e < cfg.episodes_per_epoch; ++e) {
      std::vector<Lane> lanes(cfg.batch_size);
      for (auto& lane : lanes) {
        const auto& traj = train[uniform_index(rng, train.size())];
        lane.t = uniform_index(rng, T);
        lane.r_prev = lane.t == 0 ? StorageUtility{} : traj.utilities[lane.t - 1];
        lane.state = ReservoirState::from_observation(env.grid_nx, env.grid_ny, traj.states[lane.t]);
        lane.state.injected_total = lane.r_prev.injected_total();
        lane.state.produced_total = lane.r_prev.produced_total();
        lane.obs = traj.states[lane.t];
      }
      for (std::size_t k = 0; k < cfg.rollout_steps; ++k) {
        std::vector<std::size_t> active;
        for (std::size_t i = 0; i < lanes.size(); ++i)
          if (lanes[i].t < T) active.push_back(i);
        if (active.empty()) break;
        std::vector<PlannerSample> batch;
        for (std::size_t i : active) batch.push_back({lanes[i].obs, lanes[i].r_prev, lanes[i].t});
        PlannerLoss loss;
        try {
          loss = planner_loss(p, sur, utility_bridge, batch);
        } catch (const DivergenceError&) {
          throw DivergenceError("train_planner: non-finite loss at epoch " + std::to_string(epoch));
        }
        optimizer_step(opt, params, parameter_tensors(std::as_const(loss.d_net)));
        sum += loss.value;
        ++count;
        for (std::size_t a = 0; a < active.size(); ++a) {
          Lane& lane = lanes[active[a]];
          auto [next, r] = detail::advance(cfg.mode, lane.state, loss.plans[a], sur, state_bridge, env);
          lane.state = std::move(next);
          lane.obs = lane.state.observation();
          lane.r_prev = r;
          ++lane.t;
        }
      }
    }
    p.loss_curve.push_back(count ? sum / static_cast<double>(count) : 0.0);
  }
  return p;
}

struct PlannedLifecycle {
  LifecycleTrajectory trajectory;
  bool truncated = false;
  std::string reason;
};

/// Closed-loop lifecycle from env_init. The window is rebuilt each step from the
/// realized r_{t-1}, with r_{-1} the zero utility.
inline PlannedLifecycle rollout(const PlannerModel& p, RolloutMode mode, const SurrogateModel& sur,
                                const BridgeModel& state_bridge, const BridgeModel& utility_bridge,
                                const EnvConfig& env) {
  if (mode == RolloutMode::surrogate && !state_bridge.trained) {
    throw RejectedInput("rollout: surrogate mode needs a trained state bridge");
  }
  if (env.state_dim() != p.state_dim || env.plan_dim() != p.plan_dim) {
    throw RejectedInput("rollout: environment dimensions do not match planner");
  }
  PlannedLifecycle out;
  ReservoirState s = env_init(env);
  StorageUtility r_prev{};
  for (std::size_t t = 0; t < env.horizon; ++t) {
    const auto o = s.observation();
    const auto w = guidance_window(utility_bridge, r_prev, p.target, t, p.horizon, p.window);
    const InjectionPlan a = plan(p, o, w, t);
    try {
      auto [next, r] = detail::advance(mode, s, a, sur, state_bridge, env);
      out.trajectory.states.push_back(o);
      out.trajectory.plans.push_back(a);
      out.trajectory.utilities.push_back(r);
      s = std::move(next);
      r_prev = r;
    } catch (const PhysicsDivergence& e) {
      out.truncated = true;
      out.reason = e.what();
      break;
    }
  }
  return out;
}

inline Checkpoint to_checkpoint(const PlannerModel& p) {
  Checkpoint c;
  c.kind = "planner";
  c.meta = {{"window", p.window},
            {"latent_dim", p.latent_dim},
            {"state_dim", p.state_dim},
            {"plan_dim", p.plan_dim},
            {"horizon", p.horizon},
            {"max_rate", p.max_rate},
            {"guided", p.guided},
            {"rollout_mode", to_string(p.mode)},
            {"surrogate_hash", p.surrogate_hash},
            {"state_bridge_hash", p.state_bridge_hash},
            {"utility_bridge_hash", p.utility_bridge_hash},
            {"loss_curve", p.loss_curve}};
  c.networks = {{"net", p.net}};
  c.arrays = {{"r_star", p.target.r_star.vec()},
              {"state_mean", p.state_norm.mean},
              {"state_scale", p.state_norm.scale}};
  return c;
}

inline PlannerModel planner_from_checkpoint(const Checkpoint& c) {
  if (c.kind != "planner") throw CorruptionError("checkpoint kind '" + c.kind + "' is not a planner");
  PlannerModel p;
  try {
    p.window = c.meta.at("window");
    p.latent_dim = c.meta.at("latent_dim");
    p.state_dim = c.meta.at("state_dim");
    p.plan_dim = c.meta.at("plan_dim");
    p.horizon = c.meta.at("horizon");
    p.max_rate = c.meta.at("max_rate");
    p.guided = c.meta.at("guided");
    p.mode = rollout_mode_from_string(c.meta.at("rollout_mode").get<std::string>());
    p.surrogate_hash = c.meta.at("surrogate_hash");
    p.state_bridge_hash = c.meta.at("state_bridge_hash");
    p.utility_bridge_hash = c.meta.at("utility_bridge_hash");
    p.loss_curve = c.meta.at("loss_curve").get<std::vector<double>>();
    p.target.r_star = StorageUtility::from(c.array("r_star"));
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError(std::string("planner checkpoint meta: ") + e.what());
  } catch (const RejectedInput& e) {
    throw CorruptionError(e.what());
  }
  p.net = c.network("net");
  p.state_norm = {c.array("state_mean"), c.array("state_scale")};
  if (p.net.in_dim() != p.input_dim() || p.net.out_dim() != p.plan_dim || p.state_norm.dim() != p.state_dim) {
    throw CorruptionError("planner checkpoint: network widths disagree with manifest");
  }
  return p;
}

}  // namespace bridgegcs
