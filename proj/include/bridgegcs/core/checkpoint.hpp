#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "bridgegcs/core/io.hpp"
#include "bridgegcs/core/mlp.hpp"
#include "bridgegcs/core/optimizer.hpp"
#include "bridgegcs/error.hpp"

namespace bridgegcs {

/// On-disk model bundle: `<stem>.json` manifest plus `<stem>.bin` blob of
/// little-endian float64 values. Blob order: every network (per layer weight
/// then bias, weights input-major), then named arrays, then optimizer first
/// and second moments when present.
struct Checkpoint {
  static constexpr int kFormatVersion = 1;

  std::string kind;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, MlpParams>> networks;
  std::vector<std::pair<std::string, std::vector<double>>> arrays;
  std::optional<OptimizerState> optimizer;

  const MlpParams& network(const std::string& name) const {
    for (const auto& [n, p] : networks)
      if (n == name) return p;
    throw CorruptionError("checkpoint has no network '" + name + "'");
  }
  const std::vector<double>& array(const std::string& name) const {
    for (const auto& [n, a] : arrays)
      if (n == name) return a;
    throw CorruptionError("checkpoint has no array '" + name + "'");
  }
};

namespace detail {

inline nlohmann::json checkpoint_header(const Checkpoint& c) {
  nlohmann::json j;
  j["format"] = "bridgegcs-checkpoint";
  j["format_version"] = Checkpoint::kFormatVersion;
  j["kind"] = c.kind;
  j["meta"] = c.meta;
  j["networks"] = nlohmann::json::array();
  for (const auto& [name, p] : c.networks) {
    nlohmann::json acts = nlohmann::json::array();
    for (const auto& l : p.layers) acts.push_back(std::string(to_string(l.activation)));
    j["networks"].push_back({{"name", name}, {"layer_sizes", p.layer_sizes()}, {"activations", acts}});
  }
  j["arrays"] = nlohmann::json::array();
  for (const auto& [name, a] : c.arrays) j["arrays"].push_back({{"name", name}, {"length", a.size()}});
  if (c.optimizer) {
    const auto& o = *c.optimizer;
    j["optimizer"] = {{"rule", "adam"},
                      {"learning_rate", o.learning_rate},
                      {"beta1", o.beta1},
                      {"beta2", o.beta2},
                      {"epsilon", o.epsilon},
                      {"step", o.step},
                      {"has_moments", !o.first_moment.empty()}};
  }
  return j;
}

inline std::string checkpoint_blob(const Checkpoint& c) {
  std::string blob;
  for (const auto& [name, p] : c.networks)
    for (const Tensor* t : parameter_tensors(p)) io::append_f64_le(blob, t->span());
  for (const auto& [name, a] : c.arrays) io::append_f64_le(blob, a);
  if (c.optimizer) {
    for (const auto& m : c.optimizer->first_moment) io::append_f64_le(blob, m.span());
    for (const auto& v : c.optimizer->second_moment) io::append_f64_le(blob, v.span());
  }
  return blob;
}

inline std::string content_hash(const nlohmann::json& header, const std::string& blob) {
  return io::git_blob_hash(header.dump() + '\n' + blob);
}

}  // namespace detail

/// Hash that identifies a checkpoint's parameters and manifest; stable across save/load.
inline std::string checkpoint_hash(const Checkpoint& c) {
  return detail::content_hash(detail::checkpoint_header(c), detail::checkpoint_blob(c));
}

/// Writes `<stem>.json` and `<stem>.bin`; returns the content hash.
inline std::string save_checkpoint(const Checkpoint& c, const std::filesystem::path& stem) {
  nlohmann::json header = detail::checkpoint_header(c);
  const std::string blob = detail::checkpoint_blob(c);
  const std::string hash = detail::content_hash(header, blob);
  auto bin = stem;
  bin += ".bin";
  auto manifest = stem;
  manifest += ".json";
  header["blob"] = {{"file", bin.filename().string()}, {"bytes", blob.size()}};
  header["content_sha1"] = hash;
  io::write_file_atomic(bin, blob);
  io::write_file_atomic(manifest, header.dump(2) + "\n");
  return hash;
}

/// Reads just the stored content hash of a checkpoint.
inline std::string stored_checkpoint_hash(const std::filesystem::path& stem) {
  auto manifest = stem;
  manifest += ".json";
  try {
    return nlohmann::json::parse(io::read_file(manifest)).at("content_sha1").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError("checkpoint manifest " + manifest.string() + ": " + e.what());
  }
}

inline Checkpoint load_checkpoint(const std::filesystem::path& stem) {
  auto manifest_path = stem;
  manifest_path += ".json";
  auto bin_path = stem;
  bin_path += ".bin";
  const std::string text = io::read_file(manifest_path);
  const std::string blob = io::read_file(bin_path);

  Checkpoint c;
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.at("format") != "bridgegcs-checkpoint" || j.at("format_version") != Checkpoint::kFormatVersion) {
      throw CorruptionError("unsupported checkpoint format in " + manifest_path.string());
    }
    if (j.at("blob").at("bytes").get<std::size_t>() != blob.size()) {
      throw CorruptionError("checkpoint blob " + bin_path.string() + " has " + std::to_string(blob.size()) +
                            " bytes, manifest says " + std::to_string(j["blob"]["bytes"].get<std::size_t>()));
    }
    c.kind = j.at("kind").get<std::string>();
    c.meta = j.at("meta");
    std::size_t offset = 0;
    auto take = [&](std::size_t n) {
      auto v = io::read_f64_le(blob, offset, n);
      offset += n * 8;
      return v;
    };
    for (const auto& nj : j.at("networks")) {
      const auto sizes = nj.at("layer_sizes").get<std::vector<std::size_t>>();
      const auto acts = nj.at("activations").get<std::vector<std::string>>();
      if (sizes.empty() || acts.size() + 1 != sizes.size()) throw CorruptionError("bad network layout");
      MlpParams p;
      p.input_dim = sizes[0];
      for (std::size_t l = 0; l < acts.size(); ++l) {
        DenseLayer layer;
        layer.weight = Tensor({sizes[l], sizes[l + 1]}, take(sizes[l] * sizes[l + 1]));
        layer.bias = Tensor({sizes[l + 1]}, take(sizes[l + 1]));
        layer.activation = activation_from_string(acts[l]);
        p.layers.push_back(std::move(layer));
      }
      c.networks.emplace_back(nj.at("name").get<std::string>(), std::move(p));
    }
    for (const auto& aj : j.at("arrays")) {
      c.arrays.emplace_back(aj.at("name").get<std::string>(), take(aj.at("length").get<std::size_t>()));
    }
    if (j.contains("optimizer")) {
      const auto& oj = j["optimizer"];
      OptimizerState o;
      o.learning_rate = oj.at("learning_rate");
      o.beta1 = oj.at("beta1");
      o.beta2 = oj.at("beta2");
      o.epsilon = oj.at("epsilon");
      o.step = oj.at("step");
      if (oj.at("has_moments").get<bool>()) {
        std::vector<std::vector<std::size_t>> shapes;
        for (const auto& [n, p] : c.networks)
          for (const Tensor* t : parameter_tensors(p)) shapes.push_back(t->shape());
        for (const auto& s : shapes) {
          Tensor t(s);
          o.first_moment.emplace_back(s, take(t.size()));
        }
        for (const auto& s : shapes) {
          Tensor t(s);
          o.second_moment.emplace_back(s, take(t.size()));
        }
      }
      c.optimizer = std::move(o);
    }
    if (offset != blob.size()) throw CorruptionError("checkpoint blob has trailing bytes");
    const std::string expected = j.at("content_sha1").get<std::string>();
    const std::string actual = checkpoint_hash(c);
    if (expected != actual) {
      throw CorruptionError("checkpoint " + stem.string() + " hash mismatch: manifest " + expected + ", content " +
                            actual);
    }
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError("checkpoint manifest " + manifest_path.string() + ": " + e.what());
  } catch (const RejectedInput& e) {
    throw CorruptionError(std::string("checkpoint layout: ") + e.what());
  }
  return c;
}

}  // namespace bridgegcs
