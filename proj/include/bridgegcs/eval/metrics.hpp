#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "bridgegcs/env/reservoir.hpp"
#include "bridgegcs/error.hpp"

namespace bridgegcs {

struct SpiBreakdown {
  double mean_fgir = 0.0;
  double mean_fgpr = 0.0;
  double retention = 0.0;  // (FGIT - FGPT) / FGIT at the final step
  double sigma_fpr = 0.0;  // population std over the lifecycle
  double value = 0.0;

  friend bool operator==(const SpiBreakdown&, const SpiBreakdown&) = default;
};

/// SPI = mean FGIR - mean FGPR + final retention - std(FPR). Empty when nothing was
/// injected, since the retention ratio is then undefined.
inline std::optional<SpiBreakdown> spi_breakdown(std::span<const StorageUtility> r) {
  if (r.size() < 2) throw RejectedInput("spi: need at least two steps");
  SpiBreakdown b;
  double mean_fpr = 0.0;
  for (const auto& u : r) {
    b.mean_fgir += u.injection_rate();
    b.mean_fgpr += u.production_rate();
    mean_fpr += u.mean_pressure();
  }
  const double n = static_cast<double>(r.size());
  b.mean_fgir /= n;
  b.mean_fgpr /= n;
  mean_fpr /= n;
  for (const auto& u : r) b.sigma_fpr += (u.mean_pressure() - mean_fpr) * (u.mean_pressure() - mean_fpr);
  b.sigma_fpr = std::sqrt(b.sigma_fpr / n);
  const double fgit = r.back().injected_total();
  if (!(fgit > 0.0)) return std::nullopt;
  b.retention = (fgit - r.back().produced_total()) / fgit;
  b.value = b.mean_fgir - b.mean_fgpr + b.retention - b.sigma_fpr;
  return b;
}

inline std::optional<double> spi(std::span<const StorageUtility> r) {
  const auto b = spi_breakdown(r);
  if (!b) return std::nullopt;
  return b->value;
}

/// SPI over many lifecycles. Undefined lifecycles are counted, not averaged.
struct SpiReport {
  std::vector<std::optional<double>> per_lifecycle;
  std::vector<std::optional<SpiBreakdown>> details;
  std::size_t missing = 0;
  std::size_t diverged = 0;
  double mean = std::nan("");
  SpiBreakdown mean_breakdown;

  friend bool operator==(const SpiReport&, const SpiReport&) = default;
};

inline SpiReport make_spi_report(std::span<const std::vector<StorageUtility>> lifecycles, std::size_t diverged = 0) {
  SpiReport rep;
  rep.diverged = diverged;
  std::size_t ok = 0;
  double sum = 0.0;
  for (const auto& l : lifecycles) {
    const auto b = spi_breakdown(l);
    rep.details.push_back(b);
    if (!b) {
      rep.per_lifecycle.push_back(std::nullopt);
      ++rep.missing;
      continue;
    }
    rep.per_lifecycle.push_back(b->value);
    sum += b->value;
    rep.mean_breakdown.mean_fgir += b->mean_fgir;
    rep.mean_breakdown.mean_fgpr += b->mean_fgpr;
    rep.mean_breakdown.retention += b->retention;
    rep.mean_breakdown.sigma_fpr += b->sigma_fpr;
    ++ok;
  }
  if (ok > 0) {
    const double n = static_cast<double>(ok);
    rep.mean = sum / n;
    rep.mean_breakdown.mean_fgir /= n;
    rep.mean_breakdown.mean_fgpr /= n;
    rep.mean_breakdown.retention /= n;
    rep.mean_breakdown.sigma_fpr /= n;
    rep.mean_breakdown.value = rep.mean;
  }
  return rep;
}

/// Mean squared componentwise difference over all steps.
inline double utility_mse(std::span<const std::vector<double>> pred, std::span<const std::vector<double>> truth) {
  if (pred.size() != truth.size() || pred.empty()) throw RejectedInput("utility_mse: sequence lengths differ or empty");
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i].size() != truth[i].size()) throw RejectedInput("utility_mse: component counts differ");
    for (std::size_t k = 0; k < pred[i].size(); ++k) {
      const double d = pred[i][k] - truth[i][k];
      sum += d * d;
    }
    n += pred[i].size();
  }
  if (n == 0) throw RejectedInput("utility_mse: no components");
  return sum / static_cast<double>(n);
}

}  // namespace bridgegcs
