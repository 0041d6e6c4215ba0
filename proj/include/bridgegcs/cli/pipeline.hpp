#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bridgegcs/bridge/bridge.hpp"
#include "bridgegcs/bridge/views.hpp"
#include "bridgegcs/cli/config.hpp"
#include "bridgegcs/cli/manifest.hpp"
#include "bridgegcs/core/checkpoint.hpp"
#include "bridgegcs/env/dataset.hpp"
#include "bridgegcs/eval/experiments.hpp"
#include "bridgegcs/eval/metrics.hpp"
#include "bridgegcs/eval/report.hpp"
#include "bridgegcs/planner/planner.hpp"
#include "bridgegcs/surrogate/surrogate.hpp"

namespace bridgegcs::cli {

namespace fs = std::filesystem;

/// Stream ids for derive_seed(config.seed, id); one per stage so stages can be
/// rerun independently without shifting each other's randomness.
enum SeedStream : std::uint64_t {
  kSplitSeed = 1,
  kStateAugmentSeed = 11,
  kStateBridgeSeed = 12,
  kUtilityAugmentSeed = 21,
  kUtilityBridgeSeed = 22,
  kSurrogateSeed = 31,
  kPlannerSeed = 41,
  kRandomPolicySeed = 51,
  kSweepSeed = 61,
};

inline std::uint64_t stage_seed(const RunConfig& c, SeedStream s) { return derive_seed(c.seed, s); }

/// Loaded upstream artifacts, each checked against the manifest that produced it.
struct Artifacts {
  Dataset data;
  DatasetSplit split;
  std::string data_hash;
  BridgeModel state_bridge, utility_bridge;
  std::string state_hash, utility_hash;
  SurrogateModel surrogate;
  std::string surrogate_hash;
  PlannerModel planner;
  std::string planner_hash;
};

class Pipeline {
 public:
  Pipeline(RunConfig cfg, bool force) : cfg_(std::move(cfg)), force_(force), root_(cfg_.out_dir) {}

  const RunConfig& config() const { return cfg_; }
  fs::path dir(const std::string& stage) const { return root_ / stage; }

  void run(const std::string& stage) {
    if (stage == "gen-data") return gen_data();
    if (stage == "train-bridge") return train_bridges();
    if (stage == "train-surrogate") return train_surrogate_stage();
    if (stage == "train-planner") return train_planner_stage();
    if (stage == "evaluate") return evaluate();
    if (stage == "ablate") return ablate();
    if (stage == "sweep") return sweep();
    if (stage == "report") return report_stage();
    throw ConfigError("unknown stage '" + stage + "'");
  }

  void gen_data() {
    stage("data", [&](RunManifest& m, const fs::path& out) {
      const Dataset d = generate_dataset(cfg_.env, cfg_.data.n_traj, cfg_.data.policy, cfg_.seed);
      m.outputs["dataset"] = save_dataset(out, d, cfg_.env, cfg_.data.policy, cfg_.seed);
      m.results = {{"n_traj", d.size()}, {"horizon", cfg_.env.horizon}};
    });
  }

  void train_bridges() {
    Artifacts a;
    load_data(a);
    stage("bridge", [&](RunManifest& m, const fs::path& out) {
      m.inputs["dataset"] = a.data_hash;
      nlohmann::json res;
      for (const BridgeVariant v : {BridgeVariant::state, BridgeVariant::utility}) {
        const bool state = v == BridgeVariant::state;
        const BridgeSection& sec = state ? cfg_.state_bridge : cfg_.utility_bridge;
        AugmentConfig aug = sec.augment;
        aug.seed = stage_seed(cfg_, state ? kStateAugmentSeed : kUtilityAugmentSeed);
        BridgeTrainConfig tc = sec.train;
        tc.seed = stage_seed(cfg_, state ? kStateBridgeSeed : kUtilityBridgeSeed);
        const auto seqs = bridge_sequences(a.split.train, v);
        const BridgeModel b = train_bridge(seqs, v, aug, tc);
        const std::string name(to_string(v));
        m.outputs[name] = save_checkpoint(to_checkpoint(b), out / name);
        const auto test = bridge_sequences(a.split.test, v);
        res[name] = {{"loss_first", b.loss_curve.front()},
                     {"loss_last", b.loss_curve.back()},
                     {"test_interpolation_cosine", interpolation_similarity(b, test, aug.subseq_len)}};
        if (test.size() >= 2) {
          const Separation sep = contrastive_separation(b, test, 256, tc.seed);
          res[name]["test_positive_cosine"] = sep.positive;
          res[name]["test_negative_cosine"] = sep.negative;
        }
      }
      m.results = res;
    });
  }

  void train_surrogate_stage() {
    Artifacts a;
    load_data(a);
    load_bridges(a);
    stage("surrogate", [&](RunManifest& m, const fs::path& out) {
      m.inputs = {{"dataset", a.data_hash}, {"state", a.state_hash}};
      SurrogateConfig sc = cfg_.surrogate;
      sc.seed = stage_seed(cfg_, kSurrogateSeed);
      const auto tr = transitions(a.split.train), va = transitions(a.split.val), te = transitions(a.split.test);
      const SurrogateModel s = train_surrogate(tr, va, a.state_bridge, cfg_.env.grid_nx, cfg_.env.grid_ny, sc);
      m.outputs["surrogate"] = save_checkpoint(to_checkpoint(s), out / "surrogate");
      m.results = {{"eta", s.eta},
                   {"best_val_mse", *std::min_element(s.val_curve.begin(), s.val_curve.end())},
                   {"test_utility_mse", held_out_utility_mse(s, te)}};
    });
  }

  void train_planner_stage() {
    Artifacts a;
    load_data(a);
    load_bridges(a);
    load_surrogate(a);
    stage("planner", [&](RunManifest& m, const fs::path& out) {
      m.inputs = {{"dataset", a.data_hash}, {"state", a.state_hash}, {"utility", a.utility_hash},
                  {"surrogate", a.surrogate_hash}};
      PlannerConfig pc = cfg_.planner;
      pc.seed = stage_seed(cfg_, kPlannerSeed);
      const UtilityTarget target = compute_target(a.split.train);
      const std::uint64_t calls_before = env_step_calls();
      const PlannerModel p =
          train_planner(a.split.train, a.surrogate, a.state_bridge, a.utility_bridge, target, cfg_.env, pc);
      m.outputs["planner"] = save_checkpoint(to_checkpoint(p), out / "planner");
      nlohmann::json r_star;
      for (std::size_t k = 0; k < StorageUtility::kDim; ++k) r_star[StorageUtility::kNames[k]] = target.r_star.values[k];
      m.results = {{"r_star", r_star},
                   {"window", p.window},
                   {"rollout_mode", to_string(p.mode)},
                   {"loss_first", p.loss_curve.front()},
                   {"loss_last", p.loss_curve.back()},
                   {"env_step_calls", env_step_calls() - calls_before}};
    });
  }

  void evaluate() {
    Artifacts a;
    load_all(a);
    stage("eval", [&](RunManifest& m, const fs::path& out) {
      m.inputs = {{"dataset", a.data_hash}, {"state", a.state_hash}, {"utility", a.utility_hash},
                  {"surrogate", a.surrogate_hash}, {"planner", a.planner_hash}};
      const auto env_life = rollout(a.planner, RolloutMode::env, a.surrogate, a.state_bridge, a.utility_bridge, cfg_.env);
      const auto sur_life =
          rollout(a.planner, RolloutMode::surrogate, a.surrogate, a.state_bridge, a.utility_bridge, cfg_.env);
      // A truncated lifecycle counts as diverged and is left out of the SPI mean.
      std::vector<std::vector<StorageUtility>> env_u, sur_u;
      if (!env_life.truncated) env_u.push_back(env_life.trajectory.utilities);
      if (!sur_life.truncated) sur_u.push_back(sur_life.trajectory.utilities);
      const SpiReport env_rep = make_spi_report(env_u, env_life.truncated ? 1 : 0);
      const SpiReport sur_rep = make_spi_report(sur_u, sur_life.truncated ? 1 : 0);
      const SpiReport rnd = random_policy_eval(cfg_.env, cfg_.eval.random_lifecycles, cfg_.eval.random_repeats,
                                               stage_seed(cfg_, kRandomPolicySeed));

      report::Csv spi_csv(report::spi_header());
      report::add_spi_rows(spi_csv, "planner_env", env_rep);
      report::add_spi_rows(spi_csv, "planner_surrogate", sur_rep);
      report::add_spi_rows(spi_csv, "random_policy", rnd);
      spi_csv.write(out / "spi.csv");
      report::trajectory_csv(env_life.trajectory).write(out / "planner_env_trajectory.csv");
      report::trajectory_csv(sur_life.trajectory).write(out / "planner_surrogate_trajectory.csv");

      const auto te = transitions(a.split.test);
      nlohmann::json summary{{"planner_env", report::to_json(env_rep)},
                             {"planner_surrogate", report::to_json(sur_rep)},
                             {"random_policy", report::to_json(rnd)},
                             {"surrogate_test_utility_mse", held_out_utility_mse(a.surrogate, te)},
                             {"mse_units", "training-set standardized utilities"},
                             {"scale_note",
                              "Reference SPI values from a full-scale simulator study are not comparable with "
                              "this toy environment and are never used as thresholds."}};
      io::write_file_atomic(out / "summary.json", summary.dump(2) + "\n");
      m.results = summary;
      m.outputs["spi.csv"] = io::git_blob_hash(spi_csv.str());
    });
  }

  void ablate() {
    Artifacts a;
    load_data(a);
    load_bridges(a);
    load_surrogate(a);
    stage("ablate", [&](RunManifest& m, const fs::path& out) {
      m.inputs = {{"dataset", a.data_hash}, {"state", a.state_hash}, {"utility", a.utility_hash},
                  {"surrogate", a.surrogate_hash}};
      const auto& seeds = cfg_.eval.seeds;
      const AblationReport sur = surrogate_eta_ablation(a.split, a.state_bridge, cfg_.env, cfg_.surrogate, seeds);
      const UtilityTarget target = compute_target(a.split.train);
      const AblationReport pl =
          planner_guidance_ablation(a.split.train, a.surrogate, a.state_bridge, a.utility_bridge, target, cfg_.env,
                                    cfg_.planner, cfg_.eval.random_repeats, seeds);
      const auto c1 = report::ablation_csv(sur), c2 = report::ablation_csv(pl);
      c1.write(out / "surrogate_eta0.csv");
      c2.write(out / "planner_no_guidance.csv");
      nlohmann::json summary{{"surrogate_eta0", report::to_json(sur)},
                             {"planner_no_guidance", report::to_json(pl)},
                             {"planner_random_policy_wins", pl.reference_wins()}};
      io::write_file_atomic(out / "summary.json", summary.dump(2) + "\n");
      m.outputs["surrogate_eta0.csv"] = io::git_blob_hash(c1.str());
      m.outputs["planner_no_guidance.csv"] = io::git_blob_hash(c2.str());
      m.results = summary;
    });
  }

  void sweep() {
    Artifacts a;
    load_data(a);
    load_bridges(a);
    stage("sweep", [&](RunManifest& m, const fs::path& out) {
      m.inputs = {{"dataset", a.data_hash}, {"state", a.state_hash}};
      const std::uint64_t seed = stage_seed(cfg_, kSweepSeed);
      const SweepReport eta = eta_sweep(a.split, a.state_bridge, cfg_.env, cfg_.surrogate, cfg_.eval.eta_grid, seed);
      const BridgeSection& sec =
          cfg_.eval.alpha_variant == BridgeVariant::state ? cfg_.state_bridge : cfg_.utility_bridge;
      const SweepReport alpha =
          alpha_sweep(a.split, cfg_.eval.alpha_variant, sec.augment, sec.train, cfg_.eval.alpha_grid, seed);
      const auto c1 = report::sweep_csv(eta), c2 = report::sweep_csv(alpha);
      c1.write(out / "eta.csv");
      c2.write(out / "alpha.csv");
      nlohmann::json summary{{"eta", report::to_json(eta)},
                             {"alpha", report::to_json(alpha)},
                             {"alpha_similarity_space", "decoded, standardized per channel"}};
      io::write_file_atomic(out / "summary.json", summary.dump(2) + "\n");
      m.outputs["eta.csv"] = io::git_blob_hash(c1.str());
      m.outputs["alpha.csv"] = io::git_blob_hash(c2.str());
      m.results = summary;
    });
  }

  /// Merges the evaluation, ablation and sweep summaries. Only evaluation is required.
  void report_stage() {
    const RunManifest ev = read_manifest(dir("eval"));
    const auto eval_sum = read_summary("eval", ev);
    std::optional<nlohmann::json> abl, swp;
    RunManifest am, sm;
    if (fs::exists(dir("ablate") / kManifestName)) {
      am = read_manifest(dir("ablate"));
      abl = read_summary("ablate", am);
    }
    if (fs::exists(dir("sweep") / kManifestName)) {
      sm = read_manifest(dir("sweep"));
      swp = read_summary("sweep", sm);
    }
    stage("report", [&](RunManifest& m, const fs::path& out) {
      m.inputs["eval"] = io::git_blob_hash(ev.results.dump());
      report::Csv spi({"method", "source", "mean_spi", "lifecycles", "missing", "planner_guided_wins"});
      auto mean_of = [](const nlohmann::json& j) { return j.at("mean").is_null() ? std::nan("") : j.at("mean").get<double>(); };
      for (const char* k : {"planner_env", "planner_surrogate", "random_policy"}) {
        const auto& r = eval_sum.at(k);
        spi.add({k, "evaluate", report::number(mean_of(r)), std::to_string(r.at("per_lifecycle").size()),
                 std::to_string(r.at("missing").get<std::size_t>()), ""});
      }
      nlohmann::json summary{{"evaluate", eval_sum}};
      if (abl) {
        m.inputs["ablate"] = io::git_blob_hash(am.results.dump());
        const auto& rows = abl->at("planner_no_guidance").at("rows");
        double g = 0, u = 0, r = 0;
        std::size_t n = 0;
        for (const auto& row : rows) {
          if (row.at("treatment").is_null() || row.at("control").is_null()) continue;
          g += row.at("treatment").get<double>();
          u += row.at("control").get<double>();
          r += row.at("random_policy").is_null() ? 0.0 : row.at("random_policy").get<double>();
          ++n;
        }
        const double dn = n ? static_cast<double>(n) : std::nan("");
        const std::size_t seeds = rows.size();
        spi.add({"planner_guided", "ablate", report::number(g / dn), std::to_string(seeds), std::to_string(seeds - n), ""});
        spi.add({"planner_no_guidance", "ablate", report::number(u / dn), std::to_string(seeds),
                 std::to_string(seeds - n), std::to_string(abl->at("planner_no_guidance").at("wins").get<std::size_t>())});
        spi.add({"random_policy", "ablate", report::number(r / dn), std::to_string(seeds), std::to_string(seeds - n),
                 std::to_string(abl->at("planner_random_policy_wins").get<std::size_t>())});
        report::Csv mse({"arm", "mean_test_utility_mse", "seeds", "treatment_wins"});
        double t = 0, c = 0;
        std::size_t k = 0;
        for (const auto& row : abl->at("surrogate_eta0").at("rows")) {
          if (row.at("treatment").is_null() || row.at("control").is_null()) continue;
          t += row.at("treatment").get<double>();
          c += row.at("control").get<double>();
          ++k;
        }
        const double dk = k ? static_cast<double>(k) : std::nan("");
        const std::string wins = std::to_string(abl->at("surrogate_eta0").at("wins").get<std::size_t>());
        mse.add({"eta=" + report::number(cfg_.surrogate.eta), report::number(t / dk), std::to_string(k), wins});
        mse.add({"eta=0", report::number(c / dk), std::to_string(k), ""});
        mse.write(out / "surrogate_mse.csv");
        m.outputs["surrogate_mse.csv"] = io::git_blob_hash(mse.str());
        summary["ablate"] = *abl;
      }
      if (swp) {
        m.inputs["sweep"] = io::git_blob_hash(sm.results.dump());
        summary["sweep"] = *swp;
      }
      spi.write(out / "spi_comparison.csv");
      m.outputs["spi_comparison.csv"] = io::git_blob_hash(spi.str());
      io::write_file_atomic(out / "summary.json", summary.dump(2) + "\n");
      m.results = {{"stages", {{"evaluate", true}, {"ablate", abl.has_value()}, {"sweep", swp.has_value()}}}};
    });
  }

  void load_data(Artifacts& a) const {
    const RunManifest m = read_manifest(dir("data"));
    DatasetMeta meta;
    a.data = load_dataset(dir("data"), &meta);
    expect_hash(m, "dataset", meta.content_hash);
    if (env_config_to_json(meta.env) != env_config_to_json(cfg_.env)) {
      throw CorruptionError("dataset in " + dir("data").string() +
                            " was generated with a different env config; rerun gen-data --force");
    }
    a.data_hash = meta.content_hash;
    a.split = split_dataset(a.data, derive_seed(cfg_.seed, kSplitSeed));
  }

  void load_bridges(Artifacts& a) const {
    const RunManifest m = read_manifest(dir("bridge"));
    if (m.inputs.at("dataset") != a.data_hash) throw CorruptionError("bridges were trained on a different dataset");
    a.state_bridge = bridge_from_checkpoint(load_checkpoint(dir("bridge") / "state"));
    a.utility_bridge = bridge_from_checkpoint(load_checkpoint(dir("bridge") / "utility"));
    a.state_hash = checkpoint_hash(to_checkpoint(a.state_bridge));
    a.utility_hash = checkpoint_hash(to_checkpoint(a.utility_bridge));
    expect_hash(m, "state", a.state_hash);
    expect_hash(m, "utility", a.utility_hash);
  }

  void load_surrogate(Artifacts& a) const {
    const RunManifest m = read_manifest(dir("surrogate"));
    a.surrogate = surrogate_from_checkpoint(load_checkpoint(dir("surrogate") / "surrogate"));
    a.surrogate_hash = checkpoint_hash(to_checkpoint(a.surrogate));
    expect_hash(m, "surrogate", a.surrogate_hash);
    if (a.surrogate.bridge_hash != a.state_hash) {
      throw CorruptionError("surrogate was trained against state bridge " + a.surrogate.bridge_hash +
                            ", configured bridge is " + a.state_hash);
    }
  }

  void load_planner(Artifacts& a) const {
    const RunManifest m = read_manifest(dir("planner"));
    a.planner = planner_from_checkpoint(load_checkpoint(dir("planner") / "planner"));
    a.planner_hash = checkpoint_hash(to_checkpoint(a.planner));
    expect_hash(m, "planner", a.planner_hash);
    if (a.planner.surrogate_hash != a.surrogate_hash || a.planner.utility_bridge_hash != a.utility_hash ||
        a.planner.state_bridge_hash != a.state_hash) {
      throw CorruptionError("planner was trained against different upstream checkpoints");
    }
  }

  void load_all(Artifacts& a) const {
    load_data(a);
    load_bridges(a);
    load_surrogate(a);
    load_planner(a);
  }

 private:
  nlohmann::json read_summary(const std::string& stage_dir, const RunManifest& m) const {
    try {
      const auto j = nlohmann::json::parse(io::read_file(dir(stage_dir) / "summary.json"));
      if (j != m.results) throw CorruptionError(stage_dir + "/summary.json does not match its manifest");
      return j;
    } catch (const nlohmann::json::exception& e) {
      throw CorruptionError(stage_dir + "/summary.json: " + e.what());
    }
  }

  // Runs one stage into a fresh directory and writes its manifest last.
  void stage(const std::string& name, const std::function<void(RunManifest&, const fs::path&)>& body) {
    const fs::path out = dir(name);
    if (fs::exists(out / kManifestName) && !force_) {
      throw ConfigError("stage output " + out.string() + " already exists; pass --force to overwrite");
    }
    if (fs::exists(out)) fs::remove_all(out);
    fs::create_directories(out);
    RunManifest m;
    m.stage = name;
    m.config = config_to_json(cfg_);
    const auto t0 = std::chrono::steady_clock::now();
    body(m, out);
    m.timings_s["total"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_manifest(out, m);
  }

  RunConfig cfg_;
  bool force_ = false;
  fs::path root_;
};

}  // namespace bridgegcs::cli
