#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bridgegcs/bridge/bridge.hpp"
#include "bridgegcs/core/checkpoint.hpp"
#include "bridgegcs/core/mlp.hpp"
#include "bridgegcs/core/optimizer.hpp"
#include "bridgegcs/core/standardizer.hpp"
#include "bridgegcs/env/dataset.hpp"
#include "bridgegcs/env/reservoir.hpp"

namespace bridgegcs {

struct SurrogateConfig {
  double eta = 1e-3;
  std::vector<std::size_t> hidden{128, 128};
  std::size_t epochs = 40;
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
};

/// (o_t, s_t) -> (r_hat_t, z_hat_{t+1}) through a shared tanh trunk and two linear heads.
/// Utility outputs live in standardized units internally; the public API speaks raw units.
struct SurrogateModel {
  std::size_t grid_nx = 0, grid_ny = 0;
  std::size_t plan_dim = 0;
  std::size_t latent_dim = 0;
  double eta = 0.0;
  MlpParams trunk;
  MlpParams utility_head;
  MlpParams latent_head;
  Standardizer state_norm, plan_norm, utility_norm;
  std::string bridge_hash;
  std::vector<double> train_curve;
  std::vector<double> val_curve;  // held-out utility MSE, standardized units

  std::size_t state_dim() const { return 2 * grid_nx * grid_ny; }
  std::size_t input_dim() const { return state_dim() + plan_dim; }
};

/// One supervised step. Views into dataset storage; the dataset must outlive it.
struct Transition {
  std::span<const double> o;
  std::span<const double> s;
  StorageUtility r;
  std::span<const double> o_next;
};

/// Every (t, t+1) pair; the last step of each lifecycle has no successor and is dropped.
inline std::vector<Transition> transitions(const Dataset& data) {
  std::vector<Transition> out;
  for (const auto& traj : data) {
    for (std::size_t t = 0; t + 1 < traj.length(); ++t) {
      out.push_back({traj.states[t], traj.plans[t].rates, traj.utilities[t], traj.states[t + 1]});
    }
  }
  return out;
}

inline SurrogateModel make_surrogate(std::size_t nx, std::size_t ny, std::size_t plan_dim, std::size_t latent_dim,
                                     const SurrogateConfig& cfg, Rng& rng) {
  if (cfg.hidden.empty()) throw ConfigError("surrogate: need at least one hidden layer");
  if (cfg.eta < 0.0) throw ConfigError("surrogate: eta must be >= 0");
  SurrogateModel m;
  m.grid_nx = nx;
  m.grid_ny = ny;
  m.plan_dim = plan_dim;
  m.latent_dim = latent_dim;
  m.eta = cfg.eta;
  std::vector<std::size_t> sizes{2 * nx * ny + plan_dim};
  sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
  std::vector<Activation> acts(cfg.hidden.size(), Activation::tanh);
  m.trunk = make_mlp(sizes, acts, rng);
  const std::size_t width = cfg.hidden.back();
  const std::vector<std::size_t> no_hidden;
  m.utility_head = make_mlp(width, no_hidden, StorageUtility::kDim, Activation::identity, Activation::identity, rng);
  m.latent_head = make_mlp(width, no_hidden, latent_dim, Activation::identity, Activation::identity, rng);
  m.state_norm = Standardizer::identity(2 * nx * ny);
  m.plan_norm = Standardizer::identity(plan_dim);
  m.utility_norm = Standardizer::identity(StorageUtility::kDim);
  return m;
}

/// Standardized [o, s] rows for a set of (state, plan) pairs.
inline Tensor surrogate_inputs(const SurrogateModel& m, std::span<const Transition> batch) {
  Tensor x = Tensor::matrix(batch.size(), m.input_dim());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    if (batch[b].o.size() != m.state_dim() || batch[b].s.size() != m.plan_dim) {
      throw RejectedInput("surrogate: transition dimensions do not match model");
    }
    m.state_norm.apply_into(batch[b].o, x, b, 0);
    m.plan_norm.apply_into(batch[b].s, x, b, m.state_dim());
  }
  return x;
}

struct SurrogateTargets {
  Tensor utility;  // standardized
  Tensor latent;   // state bridge embedding of o_{t+1}
};

inline SurrogateTargets surrogate_targets(const SurrogateModel& m, const BridgeModel& state_bridge,
                                          std::span<const Transition> batch) {
  if (state_bridge.latent_dim != m.latent_dim) throw RejectedInput("surrogate: bridge latent_dim mismatch");
  SurrogateTargets t{Tensor::matrix(batch.size(), StorageUtility::kDim), Tensor::matrix(batch.size(), m.latent_dim)};
  std::vector<std::vector<double>> next;
  next.reserve(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    m.utility_norm.apply_into(batch[b].r.values, t.utility, b);
    next.emplace_back(batch[b].o_next.begin(), batch[b].o_next.end());
  }
  t.latent = encode_rows(state_bridge, next);
  return t;
}

struct SurrogateLoss {
  double total = 0.0;
  double utility_term = 0.0;  // mean over batch of ||r_hat - r||^2, standardized units
  double latent_term = 0.0;   // mean over batch of ||z_hat - z||^2
  MlpParams d_trunk, d_utility_head, d_latent_head;
};

/// utility_term + eta * latent_term on pre-built standardized inputs and targets.
inline SurrogateLoss surrogate_loss(const SurrogateModel& m, const Tensor& inputs, const SurrogateTargets& targets) {
  const std::size_t B = inputs.rows();
  if (B == 0) throw RejectedInput("surrogate_loss: empty batch");
  MlpTrace trunk = forward_trace(m.trunk, inputs);
  MlpTrace uh = forward_trace(m.utility_head, trunk.output());
  MlpTrace lh = forward_trace(m.latent_head, trunk.output());
  const Tensor& u = uh.output();
  const Tensor& z = lh.output();

  SurrogateLoss out;
  Tensor du = Tensor::matrix(B, u.cols());
  Tensor dz = Tensor::matrix(B, z.cols());
  const double inv_b = 1.0 / static_cast<double>(B);
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double diff = u[i] - targets.utility[i];
    out.utility_term += diff * diff;
    du[i] = 2.0 * diff * inv_b;
  }
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double diff = z[i] - targets.latent[i];
    out.latent_term += diff * diff;
    dz[i] = m.eta * 2.0 * diff * inv_b;
  }
  out.utility_term *= inv_b;
  out.latent_term *= inv_b;
  out.total = out.utility_term + m.eta * out.latent_term;
  if (!std::isfinite(out.total)) throw DivergenceError("surrogate_loss: non-finite loss");

  out.d_trunk = zeros_like(m.trunk);
  out.d_utility_head = zeros_like(m.utility_head);
  out.d_latent_head = zeros_like(m.latent_head);
  Tensor dh = backward(m.utility_head, uh, std::move(du), &out.d_utility_head);
  Tensor dh2 = backward(m.latent_head, lh, std::move(dz), &out.d_latent_head);
  for (std::size_t i = 0; i < dh.size(); ++i) dh[i] += dh2[i];
  backward(m.trunk, trunk, std::move(dh), &out.d_trunk);
  return out;
}

inline SurrogateLoss surrogate_loss(const SurrogateModel& m, const BridgeModel& state_bridge,
                                    std::span<const Transition> batch) {
  return surrogate_loss(m, surrogate_inputs(m, batch), surrogate_targets(m, state_bridge, batch));
}

struct SimulateResult {
  StorageUtility utility;
  LatentEmbedding next_latent;
};

/// Batched forward pass on standardized inputs: standardized utilities and latents.
inline std::pair<Tensor, Tensor> simulate_rows(const SurrogateModel& m, const Tensor& inputs) {
  const Tensor h = forward(m.trunk, inputs);
  return {forward(m.utility_head, h), forward(m.latent_head, h)};
}

inline SimulateResult simulate(const SurrogateModel& m, std::span<const double> o, std::span<const double> s) {
  if (o.size() != m.state_dim() || s.size() != m.plan_dim) throw RejectedInput("simulate: input dimension mismatch");
  Tensor x = Tensor::matrix(1, m.input_dim());
  m.state_norm.apply_into(o, x, 0, 0);
  m.plan_norm.apply_into(s, x, 0, m.state_dim());
  auto [u, z] = simulate_rows(m, x);
  return {StorageUtility::from(m.utility_norm.invert(u.values())), z.values()};
}

/// Decodes a predicted next-state latent through the state bridge and clamps it to
/// the physical box (saturation in [0, 1], pressure >= 0).
inline ReservoirState latent_to_state(const SurrogateModel& m, const BridgeModel& state_bridge,
                                      std::span<const double> latent) {
  if (!state_bridge.trained) throw RejectedInput("state bridge is not trained");
  const auto o = decode(state_bridge, latent);
  ReservoirState s = ReservoirState::from_observation(m.grid_nx, m.grid_ny, o);
  for (auto& p : s.pressure.values()) p = std::max(p, 0.0);
  for (auto& v : s.saturation.values()) v = std::clamp(v, 0.0, 1.0);
  return s;
}

inline ReservoirState simulate_next_state(const SurrogateModel& m, const BridgeModel& state_bridge,
                                          std::span<const double> o, std::span<const double> s) {
  if (!state_bridge.trained) throw RejectedInput("simulate_next_state: state bridge is not trained");
  const SimulateResult r = simulate(m, o, s);
  ReservoirState next = latent_to_state(m, state_bridge, r.next_latent);
  next.injected_total = r.utility.injected_total();
  next.produced_total = r.utility.produced_total();
  return next;
}

/// Mean over steps and components of the squared utility error, in standardized units.
inline double held_out_utility_mse(const SurrogateModel& m, std::span<const Transition> data) {
  if (data.empty()) throw RejectedInput("held_out_utility_mse: no data");
  const Tensor x = surrogate_inputs(m, data);
  const Tensor u = simulate_rows(m, x).first;
  double sum = 0.0;
  for (std::size_t b = 0; b < data.size(); ++b) {
    const auto target = m.utility_norm.apply(data[b].r.values);
    for (std::size_t k = 0; k < target.size(); ++k) {
      const double d = u.at(b, k) - target[k];
      sum += d * d;
    }
  }
  return sum / static_cast<double>(data.size() * StorageUtility::kDim);
}

namespace detail {

inline void gather_rows(const Tensor& src, std::span<const std::size_t> idx, Tensor& dst) {
  const std::size_t c = src.cols();
  for (std::size_t r = 0; r < idx.size(); ++r) {
    std::copy_n(src.data() + idx[r] * c, c, dst.data() + r * c);
  }
}

}  // namespace detail

/// Mini-batch training with the state bridge frozen. The returned model is the
/// epoch with the lowest validation utility MSE (the last epoch when `val` is empty).
inline SurrogateModel train_surrogate(std::span<const Transition> train, std::span<const Transition> val,
                                      const BridgeModel& state_bridge, std::size_t grid_nx, std::size_t grid_ny,
                                      const SurrogateConfig& cfg) {
  if (train.empty()) throw ConfigError("train_surrogate: no training transitions");
  if (!state_bridge.trained) throw RejectedInput("train_surrogate: state bridge is not trained");
  if (cfg.batch_size < 1) throw ConfigError("train_surrogate: batch_size must be >= 1");
  Rng rng(derive_seed(cfg.seed, 0x5a11ULL));
  SurrogateModel m =
      make_surrogate(grid_nx, grid_ny, train.front().s.size(), state_bridge.latent_dim, cfg, rng);
  {
    std::vector<std::vector<double>> os, ss, rs;
    for (const auto& t : train) {
      os.emplace_back(t.o.begin(), t.o.end());
      ss.emplace_back(t.s.begin(), t.s.end());
      rs.push_back(t.r.vec());
    }
    m.state_norm = Standardizer::fit(os);
    m.plan_norm = Standardizer::fit(ss);
    m.utility_norm = Standardizer::fit(rs);
  }
  m.bridge_hash = checkpoint_hash(to_checkpoint(state_bridge));

  const Tensor inputs = surrogate_inputs(m, train);
  const SurrogateTargets targets = surrogate_targets(m, state_bridge, train);
  const std::size_t n = train.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  OptimizerState opt = make_optimizer(cfg.learning_rate);
  const auto params = collect_tensors({&m.trunk, &m.utility_head, &m.latent_head});

  SurrogateModel best = m;
  double best_val = std::numeric_limits<double>::infinity();
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
    double sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t b = std::min(cfg.batch_size, n - start);
      std::span<const std::size_t> idx(order.data() + start, b);
      Tensor x = Tensor::matrix(b, inputs.cols());
      SurrogateTargets tg{Tensor::matrix(b, targets.utility.cols()), Tensor::matrix(b, targets.latent.cols())};
      detail::gather_rows(inputs, idx, x);
      detail::gather_rows(targets.utility, idx, tg.utility);
      detail::gather_rows(targets.latent, idx, tg.latent);
      SurrogateLoss loss;
      try {
        loss = surrogate_loss(m, x, tg);
      } catch (const DivergenceError&) {
        throw DivergenceError("train_surrogate: non-finite loss at epoch " + std::to_string(epoch));
      }
      const auto grads = collect_const_tensors({&std::as_const(loss.d_trunk), &std::as_const(loss.d_utility_head),
                                          &std::as_const(loss.d_latent_head)});
      optimizer_step(opt, params, grads);
      sum += loss.total;
      ++batches;
    }
    m.train_curve.push_back(sum / static_cast<double>(batches));
    if (!val.empty()) {
      const double v = held_out_utility_mse(m, val);
      if (!std::isfinite(v)) throw DivergenceError("train_surrogate: non-finite validation MSE at epoch " + std::to_string(epoch));
      m.val_curve.push_back(v);
      if (v < best_val) {
        best_val = v;
        best = m;
      }
    }
  }
  if (val.empty()) return m;
  best.train_curve = m.train_curve;
  best.val_curve = m.val_curve;
  return best;
}

inline Checkpoint to_checkpoint(const SurrogateModel& m) {
  Checkpoint c;
  c.kind = "surrogate";
  c.meta = {{"grid", {m.grid_nx, m.grid_ny}}, {"plan_dim", m.plan_dim},       {"latent_dim", m.latent_dim},
            {"eta", m.eta},                   {"bridge_hash", m.bridge_hash}, {"train_curve", m.train_curve},
            {"val_curve", m.val_curve}};
  c.networks = {{"trunk", m.trunk}, {"utility_head", m.utility_head}, {"latent_head", m.latent_head}};
  c.arrays = {{"state_mean", m.state_norm.mean},     {"state_scale", m.state_norm.scale},
              {"plan_mean", m.plan_norm.mean},       {"plan_scale", m.plan_norm.scale},
              {"utility_mean", m.utility_norm.mean}, {"utility_scale", m.utility_norm.scale}};
  return c;
}

inline SurrogateModel surrogate_from_checkpoint(const Checkpoint& c) {
  if (c.kind != "surrogate") throw CorruptionError("checkpoint kind '" + c.kind + "' is not a surrogate");
  SurrogateModel m;
  try {
    m.grid_nx = c.meta.at("grid").at(0);
    m.grid_ny = c.meta.at("grid").at(1);
    m.plan_dim = c.meta.at("plan_dim");
    m.latent_dim = c.meta.at("latent_dim");
    m.eta = c.meta.at("eta");
    m.bridge_hash = c.meta.at("bridge_hash");
    m.train_curve = c.meta.at("train_curve").get<std::vector<double>>();
    m.val_curve = c.meta.at("val_curve").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError(std::string("surrogate checkpoint meta: ") + e.what());
  }
  m.trunk = c.network("trunk");
  m.utility_head = c.network("utility_head");
  m.latent_head = c.network("latent_head");
  m.state_norm = {c.array("state_mean"), c.array("state_scale")};
  m.plan_norm = {c.array("plan_mean"), c.array("plan_scale")};
  m.utility_norm = {c.array("utility_mean"), c.array("utility_scale")};
  if (m.trunk.in_dim() != m.input_dim() || m.latent_head.out_dim() != m.latent_dim) {
    throw CorruptionError("surrogate checkpoint: network widths disagree with manifest");
  }
  return m;
}

}  // namespace bridgegcs
