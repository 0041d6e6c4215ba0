#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bridgegcs/core/tensor.hpp"
#include "bridgegcs/error.hpp"

namespace bridgegcs {

/// Toy 2-D reservoir: explicit pressure diffusion with point sources at wells,
/// upwind gas-saturation transport, and leakage through the boundary ring.
struct EnvConfig {
  std::size_t grid_nx = 16;
  std::size_t grid_ny = 16;
  std::size_t n_wells = 4;
  std::vector<std::size_t> well_cells;  // empty -> quarter-point defaults for 4 wells
  double dt = 0.1;
  double diffusivity = 1.0;
  double mobility = 5.0;  // saturation transport speed per unit pressure difference
  double max_rate = 1.0;
  double leak_coeff = 0.05;
  std::size_t horizon = 60;
  std::uint64_t seed = 0;

  std::size_t cells() const { return grid_nx * grid_ny; }
  std::size_t state_dim() const { return 2 * cells(); }
  std::size_t plan_dim() const { return n_wells; }

  /// Explicit well cells, or the four quarter points of the grid.
  std::vector<std::size_t> wells() const {
    if (!well_cells.empty()) return well_cells;
    if (n_wells != 4) return {};
    const std::size_t x0 = grid_nx / 4, x1 = (3 * grid_nx) / 4;
    const std::size_t y0 = grid_ny / 4, y1 = (3 * grid_ny) / 4;
    return {y0 * grid_nx + x0, y0 * grid_nx + x1, y1 * grid_nx + x0, y1 * grid_nx + x1};
  }

  /// Every violated constraint, one message each.
  std::vector<std::string> violations() const {
    std::vector<std::string> v;
    if (grid_nx == 0 || grid_ny == 0) v.emplace_back("env: grid dimensions must be positive");
    if (n_wells < 1) v.emplace_back("env: n_wells must be >= 1");
    if (cells() < n_wells) v.emplace_back("env: grid_nx*grid_ny must be >= n_wells");
    const auto w = wells();
    if (w.size() != n_wells) {
      v.emplace_back("env: well_cells must list exactly n_wells cell indices");
    } else {
      for (std::size_t c : w)
        if (c >= cells()) v.emplace_back("env: well cell " + std::to_string(c) + " outside grid");
    }
    if (!(dt > 0.0)) v.emplace_back("env: dt must be > 0");
    if (!(diffusivity > 0.0)) v.emplace_back("env: diffusivity must be > 0");
    if (!(dt * diffusivity * 4.0 < 1.0)) {
      v.emplace_back("env: stability violation: dt*diffusivity*4 = " + std::to_string(dt * diffusivity * 4.0) +
                     " must be < 1");
    }
    if (!(mobility >= 0.0)) v.emplace_back("env: mobility must be >= 0");
    if (!(max_rate >= 0.0)) v.emplace_back("env: max_rate must be >= 0");
    if (!(leak_coeff >= 0.0)) v.emplace_back("env: leak_coeff must be >= 0");
    if (!(leak_coeff * dt <= 1.0)) v.emplace_back("env: leak_coeff*dt must be <= 1");
    if (horizon < 2) v.emplace_back("env: horizon T must be >= 2");
    return v;
  }

  void validate() const {
    const auto v = violations();
    if (v.empty()) return;
    std::string msg;
    for (const auto& s : v) msg += (msg.empty() ? "" : "; ") + s;
    throw ConfigError(msg);
  }
};

/// Field utility vector r_t, stored in the order FGIR, FGPR, FGIT, FGPT, FPR.
struct StorageUtility {
  static constexpr std::size_t kDim = 5;
  enum Index : std::size_t { FGIR = 0, FGPR = 1, FGIT = 2, FGPT = 3, FPR = 4 };
  static constexpr std::array<const char*, kDim> kNames{"FGIR", "FGPR", "FGIT", "FGPT", "FPR"};

  std::array<double, kDim> values{};

  double injection_rate() const { return values[FGIR]; }
  double production_rate() const { return values[FGPR]; }
  double injected_total() const { return values[FGIT]; }
  double produced_total() const { return values[FGPT]; }
  double mean_pressure() const { return values[FPR]; }

  std::vector<double> vec() const { return {values.begin(), values.end()}; }
  static StorageUtility from(std::span<const double> v) {
    if (v.size() != kDim) throw RejectedInput("storage utility must have 5 components");
    StorageUtility u;
    std::copy(v.begin(), v.end(), u.values.begin());
    return u;
  }
  friend bool operator==(const StorageUtility&, const StorageUtility&) = default;
};

/// Per-well injection rates s_t.
struct InjectionPlan {
  std::vector<double> rates;
  friend bool operator==(const InjectionPlan&, const InjectionPlan&) = default;
};

/// Pressure and gas-saturation fields plus the running cumulatives needed to
/// report FGIT/FGPT. Only the two fields form the observation o_t.
struct ReservoirState {
  std::size_t nx = 0, ny = 0;
  Tensor pressure;
  Tensor saturation;
  double injected_total = 0.0;
  double produced_total = 0.0;

  std::size_t cells() const { return nx * ny; }

  /// o_t: pressure cells followed by saturation cells.
  std::vector<double> observation() const {
    std::vector<double> o(pressure.values());
    o.insert(o.end(), saturation.values().begin(), saturation.values().end());
    return o;
  }

  static ReservoirState from_observation(std::size_t nx, std::size_t ny, std::span<const double> o) {
    const std::size_t n = nx * ny;
    if (o.size() != 2 * n) throw RejectedInput("observation length does not match grid");
    ReservoirState s;
    s.nx = nx;
    s.ny = ny;
    s.pressure = Tensor({ny, nx}, {o.begin(), o.begin() + static_cast<std::ptrdiff_t>(n)});
    s.saturation = Tensor({ny, nx}, {o.begin() + static_cast<std::ptrdiff_t>(n), o.end()});
    return s;
  }

  friend bool operator==(const ReservoirState&, const ReservoirState&) = default;
};

struct StepResult {
  ReservoirState state;
  StorageUtility utility;
};

inline constexpr double kInitialPressure = 1.0;

/// Total env_step invocations in this process; lets callers prove a code path is env-free.
inline std::atomic<std::uint64_t>& env_step_calls() {
  static std::atomic<std::uint64_t> counter{0};
  return counter;
}

inline ReservoirState env_init(const EnvConfig& cfg) {
  cfg.validate();
  ReservoirState s;
  s.nx = cfg.grid_nx;
  s.ny = cfg.grid_ny;
  s.pressure = Tensor({cfg.grid_ny, cfg.grid_nx});
  s.pressure.fill(kInitialPressure);
  s.saturation = Tensor({cfg.grid_ny, cfg.grid_nx});
  return s;
}

/// Clips each rate into [0, max_rate].
inline InjectionPlan clamp_plan(InjectionPlan plan, double max_rate) {
  for (auto& r : plan.rates) r = std::clamp(r, 0.0, max_rate);
  return plan;
}

inline StepResult env_step(const ReservoirState& state, const InjectionPlan& plan, const EnvConfig& cfg) {
  ++env_step_calls();
  const std::size_t nx = cfg.grid_nx, ny = cfg.grid_ny, n = nx * ny;
  if (state.nx != nx || state.ny != ny) throw RejectedInput("env_step: state grid does not match config");
  if (plan.rates.size() != cfg.n_wells) throw RejectedInput("env_step: plan length != n_wells");
  for (double r : plan.rates) {
    if (!std::isfinite(r) || r < 0.0 || r > cfg.max_rate) throw RejectedInput("env_step: plan outside [0, max_rate]");
  }
  if (!state.pressure.all_finite() || !state.saturation.all_finite()) {
    throw PhysicsDivergence("env_step: non-finite reservoir state");
  }
  const auto wells = cfg.wells();
  const double* p = state.pressure.data();
  const double* s = state.saturation.data();

  // Pressure: explicit 5-point diffusion with no-flux walls, then well sources.
  ReservoirState next = state;
  double* pn = next.pressure.data();
  const double k = cfg.dt * cfg.diffusivity;
  for (std::size_t y = 0; y < ny; ++y) {
    for (std::size_t x = 0; x < nx; ++x) {
      const std::size_t i = y * nx + x;
      double lap = 0.0;
      if (x > 0) lap += p[i - 1] - p[i];
      if (x + 1 < nx) lap += p[i + 1] - p[i];
      if (y > 0) lap += p[i - nx] - p[i];
      if (y + 1 < ny) lap += p[i + nx] - p[i];
      pn[i] = p[i] + k * lap;
    }
  }
  double injection_rate = 0.0;
  std::vector<double> sat(s, s + n);
  for (std::size_t w = 0; w < wells.size(); ++w) {
    const double q = plan.rates[w];
    injection_rate += q;
    pn[wells[w]] += q * cfg.dt;
    sat[wells[w]] = std::min(1.0, sat[wells[w]] + q * cfg.dt);
  }

  // Saturation: first-order upwind transport along the new pressure gradient.
  std::vector<double> outflow(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t x = i % nx, y = i / nx;
    double out = 0.0;
    auto edge = [&](std::size_t j) { out += std::max(pn[i] - pn[j], 0.0); };
    if (x > 0) edge(i - 1);
    if (x + 1 < nx) edge(i + 1);
    if (y > 0) edge(i - nx);
    if (y + 1 < ny) edge(i + nx);
    outflow[i] = cfg.mobility * cfg.dt * out;
  }
  std::vector<double> sat_next = sat;
  for (std::size_t i = 0; i < n; ++i) {
    if (sat[i] <= 0.0 || outflow[i] <= 0.0) continue;
    // Limit so a cell never exports more saturation than it holds.
    const double limiter = outflow[i] > 1.0 ? 1.0 / outflow[i] : 1.0;
    const std::size_t x = i % nx, y = i / nx;
    auto send = [&](std::size_t j) {
      const double dp = pn[i] - pn[j];
      if (dp <= 0.0) return;
      const double f = cfg.mobility * cfg.dt * dp * limiter * sat[i];
      sat_next[i] -= f;
      sat_next[j] += f;
    };
    if (x > 0) send(i - 1);
    if (x + 1 < nx) send(i + 1);
    if (y > 0) send(i - nx);
    if (y + 1 < ny) send(i + nx);
  }
  double* sn = next.saturation.data();
  for (std::size_t i = 0; i < n; ++i) sn[i] = std::clamp(sat_next[i], 0.0, 1.0);

  // Leakage through gas-bearing boundary cells with pressure above the initial level.
  double production_rate = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t x = i % nx, y = i / nx;
    if (x != 0 && y != 0 && x + 1 != nx && y + 1 != ny) continue;
    const double leak = cfg.leak_coeff * sn[i] * std::max(pn[i] - kInitialPressure, 0.0);
    production_rate += leak;
    pn[i] -= leak * cfg.dt;
  }

  next.injected_total = state.injected_total + injection_rate * cfg.dt;
  next.produced_total = state.produced_total + production_rate * cfg.dt;
  if (!next.pressure.all_finite() || !next.saturation.all_finite()) {
    throw PhysicsDivergence("env_step: state became non-finite");
  }

  double mean_p = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean_p += pn[i];
  mean_p /= static_cast<double>(n);

  StepResult r{std::move(next), {}};
  r.utility.values = {injection_rate, production_rate, r.state.injected_total, r.state.produced_total, mean_p};
  return r;
}

}  // namespace bridgegcs
