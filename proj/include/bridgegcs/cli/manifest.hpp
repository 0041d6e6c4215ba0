#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "bridgegcs/core/io.hpp"
#include "bridgegcs/error.hpp"

namespace bridgegcs::cli {

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr const char* kManifestName = "manifest.json";

/// Written last in every stage directory; its presence marks the stage complete.
struct RunManifest {
  std::string stage;
  std::string tool_version = kToolVersion;
  nlohmann::json config;
  std::map<std::string, std::string> inputs;   // artifact name -> content hash
  std::map<std::string, std::string> outputs;  // artifact name -> content hash
  std::map<std::string, double> timings_s;
  nlohmann::json results = nlohmann::json::object();
};

inline nlohmann::json to_json(const RunManifest& m) {
  return {{"stage", m.stage},     {"tool_version", m.tool_version}, {"config", m.config}, {"inputs", m.inputs},
          {"outputs", m.outputs}, {"timings_s", m.timings_s},       {"results", m.results}};
}

inline void write_manifest(const std::filesystem::path& dir, const RunManifest& m) {
  io::write_file_atomic(dir / kManifestName, to_json(m).dump(2) + "\n");
}

inline RunManifest read_manifest(const std::filesystem::path& dir) {
  const auto path = dir / kManifestName;
  if (!std::filesystem::exists(path)) throw MissingArtifact("stage output missing: " + path.string());
  try {
    const auto j = nlohmann::json::parse(io::read_file(path));
    RunManifest m;
    m.stage = j.at("stage");
    m.tool_version = j.at("tool_version");
    m.config = j.at("config");
    m.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
    m.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
    m.timings_s = j.at("timings_s").get<std::map<std::string, double>>();
    m.results = j.at("results");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError("manifest " + path.string() + ": " + e.what());
  }
}

/// Throws CorruptionError unless `actual` is what the upstream manifest recorded.
inline void expect_hash(const RunManifest& m, const std::string& name, const std::string& actual) {
  const auto it = m.outputs.find(name);
  if (it == m.outputs.end()) throw CorruptionError(m.stage + " manifest does not list '" + name + "'");
  if (it->second != actual) {
    throw CorruptionError(m.stage + " artifact '" + name + "' hash " + actual + " differs from manifest " + it->second);
  }
}

}  // namespace bridgegcs::cli
