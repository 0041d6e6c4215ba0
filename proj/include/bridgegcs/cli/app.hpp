#pragma once

#include <algorithm>
#include <cstdint>
#include <exception>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "bridgegcs/cli/config.hpp"
#include "bridgegcs/cli/pipeline.hpp"
#include "bridgegcs/error.hpp"

namespace bridgegcs::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitInternal = 1,
  kExitConfig = 2,
  kExitArtifact = 3,
  kExitDivergence = 4,
};

inline int exit_code_for(ErrorClass c) {
  switch (c) {
    case ErrorClass::rejected_input:
    case ErrorClass::config: return kExitConfig;
    case ErrorClass::missing_artifact:
    case ErrorClass::corruption: return kExitArtifact;
    case ErrorClass::divergence:
    case ErrorClass::physics_divergence: return kExitDivergence;
  }
  return kExitInternal;
}

inline const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> s{"gen-data", "train-bridge", "train-surrogate", "train-planner",
                                          "evaluate", "ablate",       "sweep",           "report"};
  return s;
}

namespace detail {

inline int report_error(std::ostream& err, const std::string& cls, int code, const std::string& msg) {
  err << nlohmann::json{{"error_class", cls}, {"exit_code", code}, {"message", msg}}.dump() << "\n";
  return code;
}

}  // namespace detail

/// Parses argv, runs one stage, and maps failures to exit codes:
/// 2 bad config or usage, 3 missing or corrupt artifact, 4 divergence.
inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Brownian-bridge surrogate and injection-planning pipeline", "bridgegcs"};
  app.require_subcommand(1, 1);
  std::string config_path, out_dir;
  std::optional<std::uint64_t> seed;
  bool force = false;
  for (const auto& name : subcommands()) {
    auto* sub = app.add_subcommand(name, "run the " + name + " stage");
    sub->add_option("--config", config_path, "JSON run configuration")->required();
    sub->add_option("--seed", seed, "override the configured global seed");
    sub->add_option("--out", out_dir, "override the configured output directory");
    sub->add_flag("--force", force, "overwrite existing stage outputs");
  }
  if (argc >= 2 && argv[1][0] != '-') {
    const std::string first = argv[1];
    if (std::find(subcommands().begin(), subcommands().end(), first) == subcommands().end()) {
      err << app.help();
      return detail::report_error(err, "usage", kExitConfig, "unknown subcommand '" + first + "'");
    }
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << app.help();
    return detail::report_error(err, "usage", kExitConfig, e.what());
  }

  std::string stage;
  for (const auto* sub : app.get_subcommands()) stage = sub->get_name();
  try {
    RunConfig cfg = load_config(config_path);
    if (seed) cfg.seed = *seed;
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    Pipeline(cfg, force).run(stage);
    out << nlohmann::json{{"stage", stage}, {"status", "ok"}, {"out_dir", cfg.out_dir}}.dump() << "\n";
    return kExitOk;
  } catch (const Error& e) {
    const int code = exit_code_for(e.error_class());
    return detail::report_error(err, std::string(to_string(e.error_class())), code, e.what());
  } catch (const std::exception& e) {
    return detail::report_error(err, "internal", kExitInternal, e.what());
  }
}

}  // namespace bridgegcs::cli
