#pragma once

#include <vector>

#include "bridgegcs/bridge/bridge.hpp"
#include "bridgegcs/env/dataset.hpp"

namespace bridgegcs {

/// The per-variant vector sequences a bridge trains on.
inline std::vector<Sequence> bridge_sequences(const Dataset& data, BridgeVariant variant) {
  std::vector<Sequence> out;
  out.reserve(data.size());
  for (const auto& t : data) out.push_back(variant == BridgeVariant::state ? t.states : t.utility_vectors());
  return out;
}

}  // namespace bridgegcs
