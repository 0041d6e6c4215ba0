#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "bridgegcs/core/io.hpp"
#include "bridgegcs/core/parallel.hpp"
#include "bridgegcs/core/rng.hpp"
#include "bridgegcs/env/reservoir.hpp"
#include "bridgegcs/error.hpp"

namespace bridgegcs {

/// One lifecycle: o_t, s_t, r_t for t = 0..T-1, where r_t results from applying s_t in o_t.
struct LifecycleTrajectory {
  std::vector<std::vector<double>> states;
  std::vector<InjectionPlan> plans;
  std::vector<StorageUtility> utilities;

  std::size_t length() const { return states.size(); }
  bool consistent() const { return states.size() == plans.size() && plans.size() == utilities.size(); }
  std::vector<std::vector<double>> utility_vectors() const {
    std::vector<std::vector<double>> out;
    out.reserve(utilities.size());
    for (const auto& u : utilities) out.push_back(u.vec());
    return out;
  }
  friend bool operator==(const LifecycleTrajectory&, const LifecycleTrajectory&) = default;
};

using Dataset = std::vector<LifecycleTrajectory>;

enum class ExplorationPolicy { random, sinusoid, mixed };

inline std::string_view to_string(ExplorationPolicy p) {
  switch (p) {
    case ExplorationPolicy::random: return "random";
    case ExplorationPolicy::sinusoid: return "sinusoid";
    case ExplorationPolicy::mixed: return "mixed";
  }
  return "mixed";
}

inline ExplorationPolicy policy_from_string(std::string_view s) {
  if (s == "random") return ExplorationPolicy::random;
  if (s == "sinusoid") return ExplorationPolicy::sinusoid;
  if (s == "mixed") return ExplorationPolicy::mixed;
  throw ConfigError("unknown exploration policy '" + std::string(s) + "'");
}

/// Full open-loop plan schedule for one lifecycle under an exploration policy.
/// random: each well holds a uniform rate for 4..15 steps, then redraws.
/// sinusoid: per-well phase-shifted sinusoid with random period and amplitude.
inline std::vector<InjectionPlan> exploration_schedule(const EnvConfig& cfg, ExplorationPolicy policy,
                                                       std::size_t index, Rng& rng) {
  if (policy == ExplorationPolicy::mixed) {
    policy = index % 2 == 0 ? ExplorationPolicy::random : ExplorationPolicy::sinusoid;
  }
  const std::size_t T = cfg.horizon, W = cfg.n_wells;
  std::vector<InjectionPlan> plans(T, InjectionPlan{std::vector<double>(W, 0.0)});
  for (std::size_t w = 0; w < W; ++w) {
    if (policy == ExplorationPolicy::random) {
      std::size_t t = 0;
      while (t < T) {
        const double rate = uniform(rng, 0.0, cfg.max_rate);
        const std::size_t hold = 4 + uniform_index(rng, 12);
        for (std::size_t k = 0; k < hold && t < T; ++k, ++t) plans[t].rates[w] = rate;
      }
    } else {
      const double period = uniform(rng, 10.0, 40.0);
      const double phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
      const double amp = uniform(rng, 0.3, 0.5);
      const double centre = uniform(rng, amp, 1.0 - amp);
      for (std::size_t t = 0; t < T; ++t) {
        const double v = centre + amp * std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / period + phase);
        plans[t].rates[w] = std::clamp(v, 0.0, 1.0) * cfg.max_rate;
      }
    }
  }
  return plans;
}

/// Rolls `plans` forward from env_init and records the lifecycle.
inline LifecycleTrajectory rollout_open_loop(const EnvConfig& cfg, const std::vector<InjectionPlan>& plans) {
  LifecycleTrajectory traj;
  ReservoirState s = env_init(cfg);
  for (const auto& plan : plans) {
    StepResult r = env_step(s, plan, cfg);
    traj.states.push_back(s.observation());
    traj.plans.push_back(plan);
    traj.utilities.push_back(r.utility);
    s = std::move(r.state);
  }
  return traj;
}

/// n_traj independent lifecycles; trajectory i uses seed derived from (seed, i).
inline Dataset generate_dataset(const EnvConfig& cfg, std::size_t n_traj, ExplorationPolicy policy,
                                std::uint64_t seed) {
  cfg.validate();
  if (n_traj < 1) throw ConfigError("generate_dataset: n_traj must be >= 1");
  Dataset out(n_traj);
  parallel_for(n_traj, [&](std::size_t i) {
    Rng rng(derive_seed(seed, i));
    try {
      out[i] = rollout_open_loop(cfg, exploration_schedule(cfg, policy, i, rng));
    } catch (const PhysicsDivergence& e) {
      throw PhysicsDivergence("generate_dataset: trajectory " + std::to_string(i) + ": " + e.what());
    }
  });
  return out;
}

struct DatasetSplit {
  Dataset train, val, test;
  std::vector<std::size_t> train_ids, val_ids, test_ids;
};

/// Shuffled whole-trajectory split with sizes floor(0.8n), floor(0.1n), remainder.
inline DatasetSplit split_dataset(const Dataset& data, std::uint64_t seed) {
  const std::size_t n = data.size();
  if (n < 10) throw ConfigError("split_dataset: need at least 10 trajectories, got " + std::to_string(n));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, 0x5911ULL));
  for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[uniform_index(rng, i + 1)]);
  const std::size_t n_train = (8 * n) / 10, n_val = n / 10;
  DatasetSplit s;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t id = order[k];
    if (k < n_train) {
      s.train.push_back(data[id]);
      s.train_ids.push_back(id);
    } else if (k < n_train + n_val) {
      s.val.push_back(data[id]);
      s.val_ids.push_back(id);
    } else {
      s.test.push_back(data[id]);
      s.test_ids.push_back(id);
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// On-disk layout: <dir>/meta.json and <dir>/traj_NNNNN.bin. Each record holds
// T rows of (o_t, s_t, r_t) as little-endian float64, in time order.
// ---------------------------------------------------------------------------

inline constexpr int kDatasetSchemaVersion = 1;

inline nlohmann::json env_config_to_json(const EnvConfig& c) {
  return {{"grid", {c.grid_nx, c.grid_ny}},
          {"n_wells", c.n_wells},
          {"well_cells", c.wells()},
          {"dt", c.dt},
          {"diffusivity", c.diffusivity},
          {"mobility", c.mobility},
          {"max_rate", c.max_rate},
          {"leak_coeff", c.leak_coeff},
          {"horizon", c.horizon}};
}

inline std::string trajectory_file_name(std::size_t i) {
  std::string digits = std::to_string(i);
  return "traj_" + std::string(digits.size() < 5 ? 5 - digits.size() : 0, '0') + digits + ".bin";
}

inline std::string encode_trajectory(const LifecycleTrajectory& t) {
  std::string bytes;
  for (std::size_t k = 0; k < t.length(); ++k) {
    io::append_f64_le(bytes, t.states[k]);
    io::append_f64_le(bytes, t.plans[k].rates);
    io::append_f64_le(bytes, t.utilities[k].values);
  }
  return bytes;
}

struct DatasetMeta {
  EnvConfig env;
  std::size_t n_traj = 0;
  ExplorationPolicy policy = ExplorationPolicy::mixed;
  std::uint64_t seed = 0;
  std::string content_hash;
};

/// Writes the dataset and returns the content hash recorded in meta.json.
inline std::string save_dataset(const std::filesystem::path& dir, const Dataset& data, const EnvConfig& env,
                                ExplorationPolicy policy, std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  std::string all;
  nlohmann::json files = nlohmann::json::array();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::string bytes = encode_trajectory(data[i]);
    io::write_file_atomic(dir / trajectory_file_name(i), bytes);
    files.push_back({{"file", trajectory_file_name(i)}, {"sha1", io::git_blob_hash(bytes)}});
    all += bytes;
  }
  const std::string hash = io::git_blob_hash(all);
  nlohmann::json meta{{"schema_version", kDatasetSchemaVersion},
                      {"env", env_config_to_json(env)},
                      {"n_traj", data.size()},
                      {"T", env.horizon},
                      {"policy", to_string(policy)},
                      {"seed", seed},
                      {"record_layout", {{"per_step", {"o", "s", "r"}},
                                         {"o_dim", env.state_dim()},
                                         {"s_dim", env.plan_dim()},
                                         {"r_dim", StorageUtility::kDim},
                                         {"dtype", "float64-le"}}},
                      {"files", files},
                      {"content_sha1", hash}};
  io::write_file_atomic(dir / "meta.json", meta.dump(2) + "\n");
  return hash;
}

inline EnvConfig env_config_from_meta(const nlohmann::json& j) {
  EnvConfig c;
  c.grid_nx = j.at("grid").at(0);
  c.grid_ny = j.at("grid").at(1);
  c.n_wells = j.at("n_wells");
  c.well_cells = j.at("well_cells").get<std::vector<std::size_t>>();
  c.dt = j.at("dt");
  c.diffusivity = j.at("diffusivity");
  c.mobility = j.at("mobility");
  c.max_rate = j.at("max_rate");
  c.leak_coeff = j.at("leak_coeff");
  c.horizon = j.at("horizon");
  return c;
}

inline Dataset load_dataset(const std::filesystem::path& dir, DatasetMeta* meta_out = nullptr) {
  if (!std::filesystem::exists(dir / "meta.json")) throw MissingArtifact("no dataset at " + dir.string());
  DatasetMeta m;
  Dataset data;
  try {
    const auto meta = nlohmann::json::parse(io::read_file(dir / "meta.json"));
    if (meta.at("schema_version") != kDatasetSchemaVersion) throw CorruptionError("dataset schema version mismatch");
    m.env = env_config_from_meta(meta.at("env"));
    m.n_traj = meta.at("n_traj");
    m.policy = policy_from_string(meta.at("policy").get<std::string>());
    m.seed = meta.at("seed");
    m.content_hash = meta.at("content_sha1");
    const std::size_t T = meta.at("T");
    const std::size_t od = m.env.state_dim(), sd = m.env.plan_dim(), rd = StorageUtility::kDim;
    const std::size_t row = od + sd + rd;
    std::string all;
    for (std::size_t i = 0; i < m.n_traj; ++i) {
      const std::string bytes = io::read_file(dir / trajectory_file_name(i));
      if (bytes.size() != T * row * 8) {
        throw CorruptionError("dataset record " + trajectory_file_name(i) + " has wrong size");
      }
      const auto v = io::read_f64_le(bytes, 0, T * row);
      LifecycleTrajectory t;
      for (std::size_t k = 0; k < T; ++k) {
        const double* r = v.data() + k * row;
        t.states.emplace_back(r, r + od);
        t.plans.push_back(InjectionPlan{{r + od, r + od + sd}});
        t.utilities.push_back(StorageUtility::from({r + od + sd, rd}));
      }
      data.push_back(std::move(t));
      all += bytes;
    }
    if (io::git_blob_hash(all) != m.content_hash) throw CorruptionError("dataset content hash mismatch");
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError(std::string("dataset meta.json: ") + e.what());
  }
  if (meta_out) *meta_out = m;
  return data;
}

}  // namespace bridgegcs
