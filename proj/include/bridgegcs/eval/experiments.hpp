#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bridgegcs/bridge/bridge.hpp"
#include "bridgegcs/bridge/views.hpp"
#include "bridgegcs/core/parallel.hpp"
#include "bridgegcs/core/rng.hpp"
#include "bridgegcs/env/dataset.hpp"
#include "bridgegcs/eval/metrics.hpp"
#include "bridgegcs/planner/planner.hpp"
#include "bridgegcs/surrogate/surrogate.hpp"

namespace bridgegcs {

/// Rates drawn i.i.d. uniform on [0, max_rate] per well and step, rolled in the
/// environment. Lifecycle k of the n * repeats total uses seed derive_seed(seed, k).
inline SpiReport random_policy_eval(const EnvConfig& env, std::size_t n_lifecycles, std::size_t repeats,
                                    std::uint64_t seed) {
  env.validate();
  if (n_lifecycles < 1 || repeats < 1) throw ConfigError("random_policy_eval: n_lifecycles and repeats must be >= 1");
  const std::size_t total = n_lifecycles * repeats;
  std::vector<std::vector<StorageUtility>> lifecycles(total);
  std::vector<char> diverged(total, 0);
  parallel_for(total, [&](std::size_t k) {
    Rng rng(derive_seed(seed, k));
    ReservoirState s = env_init(env);
    try {
      for (std::size_t t = 0; t < env.horizon; ++t) {
        InjectionPlan a{std::vector<double>(env.n_wells)};
        for (auto& r : a.rates) r = uniform(rng, 0.0, env.max_rate);
        StepResult step = env_step(s, a, env);
        lifecycles[k].push_back(step.utility);
        s = std::move(step.state);
      }
    } catch (const PhysicsDivergence&) {
      diverged[k] = 1;
    }
  });
  std::vector<std::vector<StorageUtility>> kept;
  std::size_t n_div = 0;
  for (std::size_t k = 0; k < total; ++k) {
    if (diverged[k]) {
      ++n_div;
    } else {
      kept.push_back(std::move(lifecycles[k]));
    }
  }
  return make_spi_report(kept, n_div);
}

enum class AblationKind { surrogate_eta0, planner_no_guidance };

inline std::string_view to_string(AblationKind k) {
  return k == AblationKind::surrogate_eta0 ? "surrogate_eta0" : "planner_no_guidance";
}

inline AblationKind ablation_kind_from_string(std::string_view s) {
  if (s == "surrogate_eta0") return AblationKind::surrogate_eta0;
  if (s == "planner_no_guidance") return AblationKind::planner_no_guidance;
  throw ConfigError("unknown ablation kind '" + std::string(s) + "'");
}

struct AblationRow {
  std::uint64_t seed = 0;
  double treatment = std::nan("");
  double control = std::nan("");
  std::optional<double> reference;  // random-policy SPI for the planner ablation
  bool win = false;
  std::string failure;
};

struct AblationReport {
  AblationKind kind = AblationKind::surrogate_eta0;
  std::string metric;
  bool lower_is_better = true;
  std::vector<AblationRow> rows;

  std::size_t wins() const {
    std::size_t n = 0;
    for (const auto& r : rows) n += r.win ? 1 : 0;
    return n;
  }
  std::size_t reference_wins() const {
    std::size_t n = 0;
    for (const auto& r : rows) n += (r.reference && r.failure.empty() && r.treatment > *r.reference) ? 1 : 0;
    return n;
  }
};

/// Paired surrogates per seed: the configured eta against eta = 0, same seed and data.
/// Metric is held-out utility MSE on the test split; a win is treatment <= control.
inline AblationReport surrogate_eta_ablation(const DatasetSplit& split, const BridgeModel& state_bridge,
                                             const EnvConfig& env, const SurrogateConfig& base,
                                             std::span<const std::uint64_t> seeds) {
  if (seeds.empty()) throw ConfigError("ablation: no seeds");
  const auto tr = transitions(split.train), va = transitions(split.val), te = transitions(split.test);
  AblationReport rep;
  rep.kind = AblationKind::surrogate_eta0;
  rep.metric = "test_utility_mse";
  rep.lower_is_better = true;
  rep.rows.resize(seeds.size());
  parallel_for(2 * seeds.size(), [&](std::size_t job) {
    const std::size_t i = job / 2;
    const bool treatment = job % 2 == 0;
    SurrogateConfig cfg = base;
    cfg.seed = seeds[i];
    if (!treatment) cfg.eta = 0.0;
    try {
      const auto m = train_surrogate(tr, va, state_bridge, env.grid_nx, env.grid_ny, cfg);
      (treatment ? rep.rows[i].treatment : rep.rows[i].control) = held_out_utility_mse(m, te);
    } catch (const DivergenceError& e) {
      rep.rows[i].failure = std::string(treatment ? "treatment: " : "control: ") + e.what();
    }
  });
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    auto& r = rep.rows[i];
    r.seed = seeds[i];
    r.win = r.failure.empty() && r.treatment <= r.control;
  }
  return rep;
}

/// Paired planners per seed: bridge-guided against a zero guidance window, plus the
/// random policy with `random_repeats` lifecycles. Metric is env-rollout SPI.
inline AblationReport planner_guidance_ablation(const Dataset& train, const SurrogateModel& sur,
                                                const BridgeModel& state_bridge, const BridgeModel& utility_bridge,
                                                const UtilityTarget& target, const EnvConfig& env,
                                                const PlannerConfig& base, std::size_t random_repeats,
                                                std::span<const std::uint64_t> seeds) {
  if (seeds.empty()) throw ConfigError("ablation: no seeds");
  AblationReport rep;
  rep.kind = AblationKind::planner_no_guidance;
  rep.metric = "env_spi";
  rep.lower_is_better = false;
  rep.rows.resize(seeds.size());
  parallel_for(2 * seeds.size(), [&](std::size_t job) {
    const std::size_t i = job / 2;
    const bool treatment = job % 2 == 0;
    PlannerConfig cfg = base;
    cfg.seed = seeds[i];
    cfg.guided = treatment;
    try {
      const auto p = train_planner(train, sur, state_bridge, utility_bridge, target, env, cfg);
      const auto life = rollout(p, RolloutMode::env, sur, state_bridge, utility_bridge, env);
      const auto v = life.truncated ? std::nullopt : spi(life.trajectory.utilities);
      if (!v) throw DivergenceError(life.truncated ? "env rollout truncated" : "SPI undefined (nothing injected)");
      (treatment ? rep.rows[i].treatment : rep.rows[i].control) = *v;
    } catch (const DivergenceError& e) {
      rep.rows[i].failure = std::string(treatment ? "treatment: " : "control: ") + e.what();
    }
  });
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    auto& r = rep.rows[i];
    r.seed = seeds[i];
    r.reference = random_policy_eval(env, 1, random_repeats, derive_seed(seeds[i], 0x7a2dULL)).mean;
    r.win = r.failure.empty() && r.treatment > r.control;
  }
  return rep;
}

struct SweepPoint {
  double value = 0.0;
  double metric = std::nan("");
  std::string failure;
};

struct SweepReport {
  std::string param;
  std::string metric;
  bool lower_is_better = true;
  std::vector<SweepPoint> points;
  std::optional<std::size_t> argbest;
};

namespace detail {

inline void finish_sweep(SweepReport& rep) {
  for (std::size_t i = 0; i < rep.points.size(); ++i) {
    const auto& p = rep.points[i];
    if (!p.failure.empty()) continue;
    if (!rep.argbest) {
      rep.argbest = i;
      continue;
    }
    const double best = rep.points[*rep.argbest].metric;
    if (rep.lower_is_better ? p.metric < best : p.metric > best) rep.argbest = i;
  }
}

}  // namespace detail

/// Held-out utility MSE per eta, all points sharing the surrogate seed.
inline SweepReport eta_sweep(const DatasetSplit& split, const BridgeModel& state_bridge, const EnvConfig& env,
                             const SurrogateConfig& base, std::span<const double> grid, std::uint64_t seed) {
  if (grid.empty()) throw ConfigError("sweep: empty grid");
  const auto tr = transitions(split.train), va = transitions(split.val), te = transitions(split.test);
  SweepReport rep{"eta", "test_utility_mse", true, std::vector<SweepPoint>(grid.size()), std::nullopt};
  parallel_for(grid.size(), [&](std::size_t i) {
    rep.points[i].value = grid[i];
    SurrogateConfig cfg = base;
    cfg.eta = grid[i];
    cfg.seed = seed;
    try {
      if (grid[i] < 0.0) throw ConfigError("eta must be >= 0");
      const auto m = train_surrogate(tr, va, state_bridge, env.grid_nx, env.grid_ny, cfg);
      rep.points[i].metric = held_out_utility_mse(m, te);
    } catch (const Error& e) {
      rep.points[i].failure = e.what();
    }
  });
  detail::finish_sweep(rep);
  return rep;
}

/// Interpolation similarity on test trajectories for a bridge trained at each alpha.
inline SweepReport alpha_sweep(const DatasetSplit& split, BridgeVariant variant, const AugmentConfig& aug_base,
                               const BridgeTrainConfig& train_base, std::span<const double> grid,
                               std::uint64_t seed) {
  if (grid.empty()) throw ConfigError("sweep: empty grid");
  const auto train_seqs = bridge_sequences(split.train, variant);
  const auto test_seqs = bridge_sequences(split.test, variant);
  SweepReport rep{"alpha", "test_interpolation_cosine", false, std::vector<SweepPoint>(grid.size()), std::nullopt};
  parallel_for(grid.size(), [&](std::size_t i) {
    rep.points[i].value = grid[i];
    AugmentConfig aug = aug_base;
    aug.alpha = grid[i];
    aug.seed = seed;
    BridgeTrainConfig cfg = train_base;
    cfg.seed = seed;
    try {
      const auto m = train_bridge(train_seqs, variant, aug, cfg);
      rep.points[i].metric = interpolation_similarity(m, test_seqs, aug.subseq_len);
    } catch (const Error& e) {
      rep.points[i].failure = e.what();
    }
  });
  detail::finish_sweep(rep);
  return rep;
}

}  // namespace bridgegcs
