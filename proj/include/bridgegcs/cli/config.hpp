#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <type_traits>
#include <vector>

#include <nlohmann/json.hpp>

#include "bridgegcs/bridge/bridge.hpp"
#include "bridgegcs/core/io.hpp"
#include "bridgegcs/env/dataset.hpp"
#include "bridgegcs/env/reservoir.hpp"
#include "bridgegcs/error.hpp"
#include "bridgegcs/planner/planner.hpp"
#include "bridgegcs/surrogate/surrogate.hpp"

namespace bridgegcs::cli {

inline constexpr int kConfigSchemaVersion = 1;

struct DataSection {
  std::size_t n_traj = 64;
  ExplorationPolicy policy = ExplorationPolicy::mixed;
};

struct BridgeSection {
  AugmentConfig augment;
  BridgeTrainConfig train;
};

struct EvalSection {
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::size_t random_repeats = 10;
  std::size_t random_lifecycles = 1;
  std::vector<double> eta_grid{0.0, 1e-4, 1e-3, 1e-2, 1e-1};
  std::vector<double> alpha_grid{0.0, 0.25, 0.5, 1.0};
  BridgeVariant alpha_variant = BridgeVariant::state;
};

/// Everything one pipeline run needs. Per-stage seeds are derived from `seed`.
struct RunConfig {
  int schema_version = kConfigSchemaVersion;
  std::uint64_t seed = 7;
  std::string out_dir = "runs/default";
  EnvConfig env;
  DataSection data;
  BridgeSection state_bridge;
  BridgeSection utility_bridge;
  SurrogateConfig surrogate;
  PlannerConfig planner;
  EvalSection eval;
};

namespace detail {

// Reads optional keys of one JSON object, recording every type error and every
// key it was not asked about.
class Reader {
 public:
  Reader(const nlohmann::json& j, std::string path, std::vector<std::string>& errors)
      : j_(j), path_(std::move(path)), errors_(errors) {
    if (!j_.is_object()) error(path_, "must be an object");
  }

  template <class T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.is_object() || !j_.contains(key)) return;
    const auto& v = j_.at(key);
    const std::string where = path_.empty() ? key : path_ + "." + key;
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) return error(where, "must be a boolean");
      out = v.get<bool>();
    } else if constexpr (std::is_same_v<T, int> || std::is_same_v<T, std::size_t> ||
                         std::is_same_v<T, std::uint64_t>) {
      if (!non_negative_integer(v)) return error(where, "must be a non-negative integer");
      out = v.get<T>();
    } else if constexpr (std::is_same_v<T, double>) {
      if (!v.is_number()) return error(where, "must be a number");
      out = v.get<double>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) return error(where, "must be a string");
      out = v.get<std::string>();
    } else {
      using E = typename T::value_type;
      if (!v.is_array()) return error(where, "must be an array");
      T tmp;
      for (const auto& x : v) {
        if constexpr (std::is_same_v<E, double>) {
          if (!x.is_number()) return error(where, "must contain only numbers");
        } else {
          if (!non_negative_integer(x)) return error(where, "must contain only non-negative integers");
        }
        tmp.push_back(x.get<E>());
      }
      out = std::move(tmp);
    }
  }

  template <class Enum, class Parse>
  void get_enum(const std::string& key, Enum& out, Parse parse) {
    std::string s;
    bool had = j_.is_object() && j_.contains(key) && j_.at(key).is_string();
    get(key, s);
    if (!had) return;
    try {
      out = parse(s);
    } catch (const ConfigError& e) {
      error(path_.empty() ? key : path_ + "." + key, e.what());
    }
  }

  /// A nested object; absent sections read as empty.
  Reader section(const std::string& key) {
    seen_.insert(key);
    const std::string where = path_.empty() ? key : path_ + "." + key;
    if (j_.is_object() && j_.contains(key)) return Reader(j_.at(key), where, errors_);
    return Reader(empty(), where, errors_);
  }

  ~Reader() {
    if (moved_ || !j_.is_object()) return;
    for (const auto& [k, _] : j_.items())
      if (!seen_.count(k)) error(path_.empty() ? k : path_ + "." + k, "unknown key");
  }

  Reader(const Reader&) = delete;
  Reader& operator=(const Reader&) = delete;
  Reader(Reader&& o) noexcept : j_(o.j_), path_(std::move(o.path_)), errors_(o.errors_), seen_(std::move(o.seen_)) {
    o.moved_ = true;
  }

 private:
  // Parsed text yields unsigned numbers, but json built in code stores signed ones.
  static bool non_negative_integer(const nlohmann::json& v) {
    return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
  }

  static const nlohmann::json& empty() {
    static const nlohmann::json e = nlohmann::json::object();
    return e;
  }
  void error(const std::string& where, const std::string& what) { errors_.push_back(where + ": " + what); }

  const nlohmann::json& j_;
  std::string path_;
  std::vector<std::string>& errors_;
  std::set<std::string> seen_;
  bool moved_ = false;
};

inline void read_bridge(Reader&& r, BridgeSection& b) {
  r.get("latent_dim", b.train.latent_dim);
  r.get("hidden", b.train.hidden);
  r.get("temperature", b.train.temperature);
  r.get("contrastive_weight", b.train.contrastive_weight);
  r.get("batch_size", b.train.batch_size);
  r.get("epochs", b.train.epochs);
  r.get("learning_rate", b.train.learning_rate);
  r.get("negatives", b.train.negatives);
  r.get("subseq_len", b.augment.subseq_len);
  r.get("samples_per_traj", b.augment.samples_per_traj);
  r.get("alpha", b.augment.alpha);
}

inline nlohmann::json bridge_json(const BridgeSection& b) {
  return {{"latent_dim", b.train.latent_dim},
          {"hidden", b.train.hidden},
          {"temperature", b.train.temperature},
          {"contrastive_weight", b.train.contrastive_weight},
          {"batch_size", b.train.batch_size},
          {"epochs", b.train.epochs},
          {"learning_rate", b.train.learning_rate},
          {"negatives", b.train.negatives},
          {"subseq_len", b.augment.subseq_len},
          {"samples_per_traj", b.augment.samples_per_traj},
          {"alpha", b.augment.alpha}};
}

inline void check_hidden(const std::vector<std::size_t>& h, const std::string& where, std::vector<std::string>& v) {
  if (h.empty()) v.push_back(where + ".hidden: need at least one layer");
  for (std::size_t w : h)
    if (w == 0) v.push_back(where + ".hidden: layer widths must be >= 1");
}

inline void check_bridge(const BridgeSection& b, const std::string& where, std::size_t horizon,
                         std::vector<std::string>& v) {
  if (b.train.latent_dim < 1) v.push_back(where + ".latent_dim: must be >= 1");
  check_hidden(b.train.hidden, where, v);
  if (!(b.train.temperature > 0.0)) v.push_back(where + ".temperature: must be > 0");
  if (!(b.train.contrastive_weight >= 0.0)) v.push_back(where + ".contrastive_weight: must be >= 0");
  if (b.train.batch_size < 1) v.push_back(where + ".batch_size: must be >= 1");
  if (b.train.epochs < 1) v.push_back(where + ".epochs: must be >= 1");
  if (!(b.train.learning_rate > 0.0)) v.push_back(where + ".learning_rate: must be > 0");
  if (b.train.negatives < 1) v.push_back(where + ".negatives: must be >= 1");
  if (b.augment.subseq_len < 2) v.push_back(where + ".subseq_len: must be >= 2");
  if (b.augment.subseq_len > horizon) v.push_back(where + ".subseq_len: must not exceed env.horizon");
  if (b.augment.samples_per_traj < 1) v.push_back(where + ".samples_per_traj: must be >= 1");
  if (!(b.augment.alpha >= 0.0)) v.push_back(where + ".alpha: must be >= 0");
}

}  // namespace detail

/// Every semantic violation of an already-parsed config.
inline std::vector<std::string> violations(const RunConfig& c) {
  std::vector<std::string> v;
  if (c.schema_version != kConfigSchemaVersion) {
    v.push_back("schema_version: expected " + std::to_string(kConfigSchemaVersion) + ", got " +
                std::to_string(c.schema_version));
  }
  if (c.out_dir.empty()) v.emplace_back("out_dir: must be non-empty");
  for (const auto& e : c.env.violations()) v.push_back(e);
  if (c.data.n_traj < 10) v.emplace_back("data.n_traj: must be >= 10 for an 8:1:1 split");
  detail::check_bridge(c.state_bridge, "bridge.state", c.env.horizon, v);
  detail::check_bridge(c.utility_bridge, "bridge.utility", c.env.horizon, v);
  if (c.state_bridge.train.latent_dim != c.utility_bridge.train.latent_dim) {
    v.emplace_back("bridge: state and utility latent_dim must match");
  }
  if (!(c.surrogate.eta >= 0.0)) v.emplace_back("surrogate.eta: must be >= 0");
  detail::check_hidden(c.surrogate.hidden, "surrogate", v);
  if (c.surrogate.epochs < 1) v.emplace_back("surrogate.epochs: must be >= 1");
  if (c.surrogate.batch_size < 1) v.emplace_back("surrogate.batch_size: must be >= 1");
  if (!(c.surrogate.learning_rate > 0.0)) v.emplace_back("surrogate.learning_rate: must be > 0");
  if (c.planner.window < 1) v.emplace_back("planner.window: must be >= 1");
  detail::check_hidden(c.planner.hidden, "planner", v);
  if (c.planner.epochs < 1) v.emplace_back("planner.epochs: must be >= 1");
  if (c.planner.episodes_per_epoch < 1) v.emplace_back("planner.episodes_per_epoch: must be >= 1");
  if (c.planner.batch_size < 1) v.emplace_back("planner.batch_size: must be >= 1");
  if (c.planner.rollout_steps < 1) v.emplace_back("planner.rollout_steps: must be >= 1");
  if (!(c.planner.learning_rate > 0.0)) v.emplace_back("planner.learning_rate: must be > 0");
  if (c.eval.seeds.empty()) v.emplace_back("eval.seeds: must be non-empty");
  if (c.eval.random_repeats < 1) v.emplace_back("eval.random_repeats: must be >= 1");
  if (c.eval.random_lifecycles < 1) v.emplace_back("eval.random_lifecycles: must be >= 1");
  if (c.eval.eta_grid.empty()) v.emplace_back("eval.eta_grid: must be non-empty");
  for (double e : c.eval.eta_grid)
    if (!(e >= 0.0)) v.emplace_back("eval.eta_grid: values must be >= 0");
  if (c.eval.alpha_grid.empty()) v.emplace_back("eval.alpha_grid: must be non-empty");
  for (double a : c.eval.alpha_grid)
    if (!(a >= 0.0)) v.emplace_back("eval.alpha_grid: values must be >= 0");
  return v;
}

inline std::string join_errors(const std::vector<std::string>& errors) {
  std::string msg = std::to_string(errors.size()) + " configuration error(s):";
  for (const auto& e : errors) msg += "\n  - " + e;
  return msg;
}

/// Parses and validates; the ConfigError lists every problem found.
inline RunConfig config_from_json(const nlohmann::json& j) {
  RunConfig c;
  std::vector<std::string> errors;
  {
    detail::Reader root(j, "", errors);
    root.get("schema_version", c.schema_version);
    root.get("seed", c.seed);
    root.get("out_dir", c.out_dir);
    {
      auto env = root.section("env");
      std::vector<std::size_t> grid{c.env.grid_nx, c.env.grid_ny};
      env.get("grid", grid);
      if (grid.size() == 2) {
        c.env.grid_nx = grid[0];
        c.env.grid_ny = grid[1];
      } else {
        errors.emplace_back("env.grid: must be [nx, ny]");
      }
      env.get("n_wells", c.env.n_wells);
      env.get("well_cells", c.env.well_cells);
      env.get("dt", c.env.dt);
      env.get("diffusivity", c.env.diffusivity);
      env.get("mobility", c.env.mobility);
      env.get("max_rate", c.env.max_rate);
      env.get("leak_coeff", c.env.leak_coeff);
      env.get("horizon", c.env.horizon);
    }
    {
      auto data = root.section("data");
      data.get("n_traj", c.data.n_traj);
      data.get_enum("policy", c.data.policy, policy_from_string);
    }
    {
      auto bridge = root.section("bridge");
      detail::read_bridge(bridge.section("state"), c.state_bridge);
      detail::read_bridge(bridge.section("utility"), c.utility_bridge);
    }
    {
      auto s = root.section("surrogate");
      s.get("eta", c.surrogate.eta);
      s.get("hidden", c.surrogate.hidden);
      s.get("epochs", c.surrogate.epochs);
      s.get("batch_size", c.surrogate.batch_size);
      s.get("learning_rate", c.surrogate.learning_rate);
    }
    {
      auto p = root.section("planner");
      p.get("window", c.planner.window);
      p.get("hidden", c.planner.hidden);
      p.get("epochs", c.planner.epochs);
      p.get("episodes_per_epoch", c.planner.episodes_per_epoch);
      p.get("batch_size", c.planner.batch_size);
      p.get("rollout_steps", c.planner.rollout_steps);
      p.get("learning_rate", c.planner.learning_rate);
      p.get_enum("rollout_mode", c.planner.mode, rollout_mode_from_string);
    }
    {
      auto e = root.section("eval");
      e.get("seeds", c.eval.seeds);
      e.get("random_repeats", c.eval.random_repeats);
      e.get("random_lifecycles", c.eval.random_lifecycles);
      e.get("eta_grid", c.eval.eta_grid);
      e.get("alpha_grid", c.eval.alpha_grid);
      e.get_enum("alpha_variant", c.eval.alpha_variant, bridge_variant_from_string);
    }
  }
  for (const auto& v : violations(c)) errors.push_back(v);
  if (!errors.empty()) throw ConfigError(join_errors(errors));
  return c;
}

/// Fully explicit form: every field, defaults included.
inline nlohmann::json config_to_json(const RunConfig& c) {
  return {{"schema_version", c.schema_version},
          {"seed", c.seed},
          {"out_dir", c.out_dir},
          {"env",
           {{"grid", {c.env.grid_nx, c.env.grid_ny}},
            {"n_wells", c.env.n_wells},
            {"well_cells", c.env.well_cells},
            {"dt", c.env.dt},
            {"diffusivity", c.env.diffusivity},
            {"mobility", c.env.mobility},
            {"max_rate", c.env.max_rate},
            {"leak_coeff", c.env.leak_coeff},
            {"horizon", c.env.horizon}}},
          {"data", {{"n_traj", c.data.n_traj}, {"policy", to_string(c.data.policy)}}},
          {"bridge", {{"state", detail::bridge_json(c.state_bridge)}, {"utility", detail::bridge_json(c.utility_bridge)}}},
          {"surrogate",
           {{"eta", c.surrogate.eta},
            {"hidden", c.surrogate.hidden},
            {"epochs", c.surrogate.epochs},
            {"batch_size", c.surrogate.batch_size},
            {"learning_rate", c.surrogate.learning_rate}}},
          {"planner",
           {{"window", c.planner.window},
            {"hidden", c.planner.hidden},
            {"epochs", c.planner.epochs},
            {"episodes_per_epoch", c.planner.episodes_per_epoch},
            {"batch_size", c.planner.batch_size},
            {"rollout_steps", c.planner.rollout_steps},
            {"learning_rate", c.planner.learning_rate},
            {"rollout_mode", to_string(c.planner.mode)}}},
          {"eval",
           {{"seeds", c.eval.seeds},
            {"random_repeats", c.eval.random_repeats},
            {"random_lifecycles", c.eval.random_lifecycles},
            {"eta_grid", c.eval.eta_grid},
            {"alpha_grid", c.eval.alpha_grid},
            {"alpha_variant", to_string(c.eval.alpha_variant)}}}};
}

inline RunConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

}  // namespace bridgegcs::cli
