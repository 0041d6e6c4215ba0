#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace bridgegcs {

/// Machine-readable failure categories. The CLI maps these onto exit codes.
enum class ErrorClass {
  rejected_input,
  config,
  missing_artifact,
  corruption,
  divergence,
  physics_divergence,
};

inline std::string_view to_string(ErrorClass c) {
  switch (c) {
    case ErrorClass::rejected_input: return "rejected_input";
    case ErrorClass::config: return "config";
    case ErrorClass::missing_artifact: return "missing_artifact";
    case ErrorClass::corruption: return "corruption";
    case ErrorClass::divergence: return "divergence";
    case ErrorClass::physics_divergence: return "physics_divergence";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorClass cls, const std::string& what) : std::runtime_error(what), cls_(cls) {}
  ErrorClass error_class() const noexcept { return cls_; }

 private:
  ErrorClass cls_;
};

struct RejectedInput : Error {
  explicit RejectedInput(const std::string& w) : Error(ErrorClass::rejected_input, w) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error(ErrorClass::config, w) {}
};
struct MissingArtifact : Error {
  explicit MissingArtifact(const std::string& w) : Error(ErrorClass::missing_artifact, w) {}
};
struct CorruptionError : Error {
  explicit CorruptionError(const std::string& w) : Error(ErrorClass::corruption, w) {}
};
struct DivergenceError : Error {
  explicit DivergenceError(const std::string& w) : Error(ErrorClass::divergence, w) {}
};
struct PhysicsDivergence : Error {
  explicit PhysicsDivergence(const std::string& w) : Error(ErrorClass::physics_divergence, w) {}
};

}  // namespace bridgegcs
