#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "bridgegcs/core/checkpoint.hpp"
#include "bridgegcs/core/mlp.hpp"
#include "bridgegcs/core/optimizer.hpp"
#include "bridgegcs/core/rng.hpp"
#include "bridgegcs/core/standardizer.hpp"
#include "bridgegcs/core/tensor.hpp"
#include "bridgegcs/error.hpp"

namespace bridgegcs {

using LatentEmbedding = std::vector<double>;
using Sequence = std::vector<std::vector<double>>;

// ---------------------------------------------------------------------------
// Brownian bridge arithmetic
// ---------------------------------------------------------------------------

/// Bridge mean at step t of [0, T]: (1 - t/T) z0 + (t/T) zT. Endpoints are returned exactly.
inline LatentEmbedding bridge_interpolate(std::span<const double> z0, std::span<const double> zT, std::size_t t,
                                          std::size_t T) {
  if (T < 1) throw RejectedInput("bridge_interpolate: T must be >= 1");
  if (t > T) throw RejectedInput("bridge_interpolate: t=" + std::to_string(t) + " outside [0, " + std::to_string(T) + "]");
  if (z0.size() != zT.size()) throw RejectedInput("bridge_interpolate: endpoint dimensions differ");
  if (t == 0) return {z0.begin(), z0.end()};
  if (t == T) return {zT.begin(), zT.end()};
  const double w = static_cast<double>(t) / static_cast<double>(T);
  LatentEmbedding z(z0.size());
  // Offset form keeps the window exactly constant when z0 == zT.
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = z0[i] + w * (zT[i] - z0[i]);
  return z;
}

/// Per-dimension bridge variance t (T - t) / T.
inline double bridge_variance(std::size_t t, std::size_t T) {
  return static_cast<double>(t) * static_cast<double>(T - t) / static_cast<double>(T);
}

/// Draws z_t ~ N(bridge mean, t(T-t)/T I).
inline LatentEmbedding bridge_sample(std::span<const double> z0, std::span<const double> zT, std::size_t t,
                                     std::size_t T, Rng& rng) {
  LatentEmbedding z = bridge_interpolate(z0, zT, t, T);
  const double sd = std::sqrt(bridge_variance(t, T));
  if (sd == 0.0) return z;
  for (auto& v : z) v += sd * gaussian(rng);
  return z;
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

struct AugmentConfig {
  std::size_t subseq_len = 16;
  std::size_t samples_per_traj = 8;
  double alpha = 0.5;
  std::uint64_t seed = 0;
};

/// A contiguous, possibly noised slice of one source trajectory.
struct Subsequence {
  std::size_t source = 0;
  std::size_t start = 0;
  Sequence steps;
};

struct AugmentResult {
  std::vector<Subsequence> items;
  std::size_t skipped = 0;  // trajectories shorter than subseq_len
};

/// Population std of every channel over all steps of all trajectories.
inline std::vector<double> channel_std(std::span<const Sequence> trajectories) {
  std::vector<std::vector<double>> all;
  for (const auto& t : trajectories) all.insert(all.end(), t.begin(), t.end());
  if (all.empty()) throw ConfigError("channel_std: no data");
  auto s = Standardizer::fit(all, 0.0);
  return s.scale;
}

/// Samples subsequences of length L from each trajectory and adds N(0, (alpha * sigma_c)^2)
/// noise to channel c.
inline AugmentResult augment(std::span<const Sequence> trajectories, std::span<const double> sigma,
                             const AugmentConfig& cfg, Rng& rng) {
  if (cfg.subseq_len < 2) throw ConfigError("augment: subseq_len must be >= 2");
  if (cfg.alpha < 0.0) throw ConfigError("augment: alpha must be >= 0");
  AugmentResult out;
  for (std::size_t id = 0; id < trajectories.size(); ++id) {
    const Sequence& traj = trajectories[id];
    if (traj.size() < cfg.subseq_len) {
      ++out.skipped;
      continue;
    }
    for (std::size_t k = 0; k < cfg.samples_per_traj; ++k) {
      Subsequence sub;
      sub.source = id;
      sub.start = uniform_index(rng, traj.size() - cfg.subseq_len + 1);
      sub.steps.assign(traj.begin() + static_cast<std::ptrdiff_t>(sub.start),
                       traj.begin() + static_cast<std::ptrdiff_t>(sub.start + cfg.subseq_len));
      if (cfg.alpha > 0.0) {
        for (auto& x : sub.steps) {
          if (x.size() != sigma.size()) throw RejectedInput("augment: sigma length != channel count");
          for (std::size_t c = 0; c < x.size(); ++c) x[c] += cfg.alpha * sigma[c] * gaussian(rng);
        }
      }
      out.items.push_back(std::move(sub));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

enum class BridgeVariant { state, utility };

inline std::string_view to_string(BridgeVariant v) { return v == BridgeVariant::state ? "state" : "utility"; }
inline BridgeVariant bridge_variant_from_string(std::string_view s) {
  if (s == "state") return BridgeVariant::state;
  if (s == "utility") return BridgeVariant::utility;
  throw ConfigError("unknown bridge variant '" + std::string(s) + "'");
}

struct BridgeTrainConfig {
  std::size_t latent_dim = 8;
  std::vector<std::size_t> hidden{64, 64};
  double temperature = 0.1;
  double contrastive_weight = 0.1;
  std::size_t batch_size = 32;
  std::size_t epochs = 30;
  double learning_rate = 1e-3;
  std::size_t negatives = 8;
  std::uint64_t seed = 0;
};

/// Encoder / decoder pair around a fixed affine generator. Inputs are standardized
/// with training statistics before encoding and restored after decoding.
struct BridgeModel {
  BridgeVariant variant = BridgeVariant::state;
  std::size_t latent_dim = 0;
  MlpParams encoder;
  MlpParams decoder;
  Standardizer norm;
  bool trained = false;
  std::size_t subseq_len = 0;
  double alpha = 0.0;
  double temperature = 0.0;
  std::vector<double> loss_curve;

  std::size_t input_dim() const { return encoder.in_dim(); }
};

inline BridgeModel make_bridge(BridgeVariant variant, std::size_t input_dim, std::size_t latent_dim,
                               std::span<const std::size_t> hidden, Rng& rng) {
  BridgeModel m;
  m.variant = variant;
  m.latent_dim = latent_dim;
  m.encoder = make_mlp(input_dim, hidden, latent_dim, Activation::tanh, Activation::identity, rng);
  std::vector<std::size_t> rev(hidden.rbegin(), hidden.rend());
  m.decoder = make_mlp(latent_dim, rev, input_dim, Activation::tanh, Activation::identity, rng);
  m.norm = Standardizer::identity(input_dim);
  return m;
}

inline void check_bridge(const BridgeModel& m) {
  if (m.encoder.out_dim() != m.latent_dim || m.decoder.in_dim() != m.latent_dim) {
    throw RejectedInput("bridge: encoder/decoder latent widths disagree with latent_dim");
  }
  if (m.decoder.out_dim() != m.encoder.in_dim() || m.norm.dim() != m.encoder.in_dim()) {
    throw RejectedInput("bridge: decoder/normalizer width disagrees with encoder input");
  }
}

inline LatentEmbedding encode(const BridgeModel& m, std::span<const double> x) {
  if (x.size() != m.input_dim()) {
    throw RejectedInput("encode: input has " + std::to_string(x.size()) + " channels, bridge expects " +
                        std::to_string(m.input_dim()));
  }
  return forward(m.encoder, m.norm.apply(x));
}

inline std::vector<double> decode(const BridgeModel& m, std::span<const double> z) {
  if (z.size() != m.latent_dim) throw RejectedInput("decode: latent dimension mismatch");
  return m.norm.invert(forward(m.decoder, z));
}

/// Encodes rows of `raw` (already in original units) as one batch.
inline Tensor encode_rows(const BridgeModel& m, std::span<const std::vector<double>> raw) {
  Tensor x = Tensor::matrix(raw.size(), m.input_dim());
  for (std::size_t r = 0; r < raw.size(); ++r) m.norm.apply_into(raw[r], x, r);
  return forward(m.encoder, x);
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

/// One InfoNCE term. Indices address rows of the flattened batch (subsequence * L + step).
struct ContrastiveTerm {
  std::size_t anchor = 0;
  std::size_t positive = 0;
  std::vector<std::size_t> negatives;
};

/// Every step is an anchor; the positive is another step of the same subsequence,
/// negatives are steps of subsequences drawn from other source trajectories.
/// Returns no terms when the batch covers a single source.
inline std::vector<ContrastiveTerm> sample_contrastive(std::span<const Subsequence> batch, std::size_t negatives,
                                                       Rng& rng) {
  std::vector<ContrastiveTerm> terms;
  if (batch.empty()) return terms;
  const std::size_t L = batch.front().steps.size();
  if (L < 2 || negatives < 1) return terms;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    std::vector<std::size_t> others;
    for (std::size_t o = 0; o < batch.size(); ++o)
      if (batch[o].source != batch[b].source) others.push_back(o);
    if (others.empty()) continue;
    for (std::size_t t = 0; t < L; ++t) {
      ContrastiveTerm term;
      term.anchor = b * L + t;
      std::size_t p = uniform_index(rng, L - 1);
      if (p >= t) ++p;
      term.positive = b * L + p;
      for (std::size_t k = 0; k < negatives; ++k) {
        term.negatives.push_back(others[uniform_index(rng, others.size())] * L + uniform_index(rng, L));
      }
      terms.push_back(std::move(term));
    }
  }
  return terms;
}

struct InfoNce {
  double value = 0.0;
  double d_positive = 0.0;            // dL / d sim(anchor, positive)
  std::vector<double> d_negatives;  // dL / d sim(anchor, negative_k)
};

/// -log( e^{p/tau} / (e^{p/tau} + sum_k e^{n_k/tau}) ) and its derivatives w.r.t. the similarities.
inline InfoNce info_nce(double positive_sim, std::span<const double> negative_sims, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("info_nce: temperature must be > 0");
  std::vector<double> logits{positive_sim / temperature};
  for (double s : negative_sims) logits.push_back(s / temperature);
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double l : logits) sum += std::exp(l - mx);
  const double lse = mx + std::log(sum);
  InfoNce r;
  r.value = lse - logits[0];
  r.d_positive = (std::exp(logits[0] - lse) - 1.0) / temperature;
  for (std::size_t k = 1; k < logits.size(); ++k) r.d_negatives.push_back(std::exp(logits[k] - lse) / temperature);
  return r;
}

struct BridgeLoss {
  double total = 0.0;
  double reconstruction = 0.0;
  double contrastive = 0.0;
  bool contrastive_skipped = false;
  MlpParams d_encoder;
  MlpParams d_decoder;
};

/// Reconstruction of every step from the bridge-interpolated latent between the
/// encoded first and last steps (per-channel mean squared error in standardized
/// units), plus `contrastive_weight` times the mean InfoNCE over `terms`.
inline BridgeLoss bridge_loss(const BridgeModel& m, std::span<const Subsequence> batch, const BridgeTrainConfig& cfg,
                              std::span<const ContrastiveTerm> terms) {
  check_bridge(m);
  if (batch.empty()) throw RejectedInput("bridge_loss: empty batch");
  const std::size_t L = batch.front().steps.size();
  if (L < 2) throw RejectedInput("bridge_loss: subsequences need at least 2 steps");
  const std::size_t B = batch.size(), D = m.input_dim(), d = m.latent_dim, rows = B * L;
  const std::size_t horizon = L - 1;

  Tensor x = Tensor::matrix(rows, D);
  for (std::size_t b = 0; b < B; ++b) {
    if (batch[b].steps.size() != L) throw RejectedInput("bridge_loss: ragged subsequences");
    for (std::size_t t = 0; t < L; ++t) m.norm.apply_into(batch[b].steps[t], x, b * L + t);
  }
  MlpTrace enc = forward_trace(m.encoder, x);
  const Tensor& z = enc.output();

  Tensor z_hat = Tensor::matrix(rows, d);
  for (std::size_t b = 0; b < B; ++b) {
    const auto z0 = z.row(b * L), zT = z.row(b * L + horizon);
    for (std::size_t t = 0; t < L; ++t) {
      const auto zi = bridge_interpolate(z0, zT, t, horizon);
      std::copy(zi.begin(), zi.end(), z_hat.row(b * L + t).begin());
    }
  }
  MlpTrace dec = forward_trace(m.decoder, z_hat);
  const Tensor& x_hat = dec.output();

  BridgeLoss out;
  out.d_encoder = zeros_like(m.encoder);
  out.d_decoder = zeros_like(m.decoder);

  const double denom = static_cast<double>(rows * D);
  Tensor d_xhat = Tensor::matrix(rows, D);
  double recon = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double diff = x_hat[i] - x[i];
    recon += diff * diff;
    d_xhat[i] = 2.0 * diff / denom;
  }
  out.reconstruction = recon / denom;
  Tensor d_zhat = backward(m.decoder, dec, std::move(d_xhat), &out.d_decoder);

  Tensor d_z = Tensor::matrix(rows, d);
  for (std::size_t b = 0; b < B; ++b) {
    auto g0 = d_z.row(b * L);
    auto gT = d_z.row(b * L + horizon);
    for (std::size_t t = 0; t < L; ++t) {
      const double w = static_cast<double>(t) / static_cast<double>(horizon);
      const auto g = d_zhat.row(b * L + t);
      for (std::size_t k = 0; k < d; ++k) {
        g0[k] += (1.0 - w) * g[k];
        gT[k] += w * g[k];
      }
    }
  }

  if (terms.empty()) {
    out.contrastive_skipped = true;
  } else {
    const double scale = cfg.contrastive_weight / static_cast<double>(terms.size());
    double total = 0.0;
    std::vector<double> neg;
    for (const auto& term : terms) {
      const auto a = z.row(term.anchor);
      neg.clear();
      for (std::size_t n : term.negatives) neg.push_back(cosine_sim(a, z.row(n)).value);
      const InfoNce nce = info_nce(cosine_sim(a, z.row(term.positive)).value, neg, cfg.temperature);
      total += nce.value;
      if (scale == 0.0) continue;
      cosine_sim_backward(a, z.row(term.positive), scale * nce.d_positive, d_z.row(term.anchor),
                          d_z.row(term.positive));
      for (std::size_t k = 0; k < term.negatives.size(); ++k) {
        cosine_sim_backward(a, z.row(term.negatives[k]), scale * nce.d_negatives[k], d_z.row(term.anchor),
                            d_z.row(term.negatives[k]));
      }
    }
    out.contrastive = total / static_cast<double>(terms.size());
  }
  backward(m.encoder, enc, std::move(d_z), &out.d_encoder);
  out.total = out.reconstruction + cfg.contrastive_weight * out.contrastive;
  if (!std::isfinite(out.total)) throw DivergenceError("bridge_loss: non-finite loss");
  return out;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// Learns a bridge from whole trajectories of one variant. Subsequences are
/// re-sampled every epoch; the recorded curve is the mean batch loss per epoch.
inline BridgeModel train_bridge(std::span<const Sequence> trajectories, BridgeVariant variant,
                                const AugmentConfig& aug, const BridgeTrainConfig& cfg) {
  if (trajectories.empty() || trajectories.front().empty()) throw ConfigError("train_bridge: empty dataset");
  if (!(cfg.temperature > 0.0)) throw ConfigError("train_bridge: temperature must be > 0");
  if (cfg.negatives < 1) throw ConfigError("train_bridge: negatives must be >= 1");
  if (cfg.batch_size < 1 || cfg.latent_dim < 1) throw ConfigError("train_bridge: batch_size and latent_dim must be >= 1");
  for (const auto& t : trajectories)
    if (t.size() < aug.subseq_len) throw ConfigError("train_bridge: trajectory shorter than subseq_len");

  const std::size_t dim = trajectories.front().front().size();
  Rng rng(derive_seed(cfg.seed, 0xb1d9eULL));
  BridgeModel m = make_bridge(variant, dim, cfg.latent_dim, cfg.hidden, rng);
  std::vector<std::vector<double>> all;
  for (const auto& t : trajectories) all.insert(all.end(), t.begin(), t.end());
  m.norm = Standardizer::fit(all);
  m.subseq_len = aug.subseq_len;
  m.alpha = aug.alpha;
  m.temperature = cfg.temperature;
  const std::vector<double> sigma = channel_std(trajectories);

  OptimizerState opt = make_optimizer(cfg.learning_rate);
  const auto params = collect_tensors({&m.encoder, &m.decoder});

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng aug_rng(derive_seed(aug.seed, epoch));
    AugmentResult data = augment(trajectories, sigma, aug, aug_rng);
    auto& items = data.items;
    for (std::size_t i = items.size(); i > 1; --i) std::swap(items[i - 1], items[uniform_index(rng, i)]);
    double sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < items.size(); start += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, items.size() - start);
      std::span<const Subsequence> batch(items.data() + start, n);
      const auto terms = sample_contrastive(batch, cfg.negatives, rng);
      BridgeLoss loss;
      try {
        loss = bridge_loss(m, batch, cfg, terms);
      } catch (const DivergenceError&) {
        throw DivergenceError("train_bridge: non-finite loss at epoch " + std::to_string(epoch));
      }
      const auto grads = collect_const_tensors({&std::as_const(loss.d_encoder), &std::as_const(loss.d_decoder)});
      optimizer_step(opt, params, grads);
      sum += loss.total;
      ++batches;
    }
    m.loss_curve.push_back(sum / static_cast<double>(std::max<std::size_t>(batches, 1)));
  }
  m.trained = true;
  return m;
}

/// Mean cosine similarity of same-trajectory and cross-trajectory latent pairs.
struct Separation {
  double positive = 0.0;
  double negative = 0.0;
};

inline Separation contrastive_separation(const BridgeModel& m, std::span<const Sequence> trajectories,
                                         std::size_t pairs, std::uint64_t seed) {
  if (trajectories.size() < 2) throw RejectedInput("contrastive_separation: need >= 2 trajectories");
  std::vector<Tensor> latents;
  for (const auto& t : trajectories) latents.push_back(encode_rows(m, t));
  Rng rng(seed);
  Separation s;
  for (std::size_t k = 0; k < pairs; ++k) {
    const std::size_t a = uniform_index(rng, latents.size());
    std::size_t b = uniform_index(rng, latents.size() - 1);
    if (b >= a) ++b;
    const auto& la = latents[a];
    const std::size_t i = uniform_index(rng, la.rows()), j = uniform_index(rng, la.rows());
    s.positive += cosine_sim(la.row(i), la.row(j)).value;
    s.negative += cosine_sim(la.row(i), latents[b].row(uniform_index(rng, latents[b].rows()))).value;
  }
  s.positive /= static_cast<double>(pairs);
  s.negative /= static_cast<double>(pairs);
  return s;
}

/// Mean cosine similarity, in standardized units, between each held-out step and its
/// reconstruction from the bridge between the window's encoded endpoints. Windows
/// of length `window` tile every trajectory.
inline double interpolation_similarity(const BridgeModel& m, std::span<const Sequence> trajectories,
                                       std::size_t window) {
  if (window < 2) throw RejectedInput("interpolation_similarity: window must be >= 2");
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& traj : trajectories) {
    for (std::size_t start = 0; start + window <= traj.size(); start += window) {
      const auto z0 = encode(m, traj[start]);
      const auto zT = encode(m, traj[start + window - 1]);
      for (std::size_t t = 0; t < window; ++t) {
        const auto x_hat = decode(m, bridge_interpolate(z0, zT, t, window - 1));
        total += cosine_sim(m.norm.apply(x_hat), m.norm.apply(traj[start + t])).value;
        ++count;
      }
    }
  }
  if (count == 0) throw RejectedInput("interpolation_similarity: trajectories shorter than window");
  return total / static_cast<double>(count);
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

inline Checkpoint to_checkpoint(const BridgeModel& m) {
  Checkpoint c;
  c.kind = "bridge";
  c.meta = {{"variant", to_string(m.variant)}, {"latent_dim", m.latent_dim}, {"subseq_len", m.subseq_len},
            {"alpha", m.alpha},                {"temperature", m.temperature}, {"trained", m.trained},
            {"loss_curve", m.loss_curve}};
  c.networks = {{"encoder", m.encoder}, {"decoder", m.decoder}};
  c.arrays = {{"norm_mean", m.norm.mean}, {"norm_scale", m.norm.scale}};
  return c;
}

inline BridgeModel bridge_from_checkpoint(const Checkpoint& c) {
  if (c.kind != "bridge") throw CorruptionError("checkpoint kind '" + c.kind + "' is not a bridge");
  BridgeModel m;
  try {
    m.variant = bridge_variant_from_string(c.meta.at("variant").get<std::string>());
    m.latent_dim = c.meta.at("latent_dim");
    m.subseq_len = c.meta.at("subseq_len");
    m.alpha = c.meta.at("alpha");
    m.temperature = c.meta.at("temperature");
    m.trained = c.meta.at("trained");
    m.loss_curve = c.meta.at("loss_curve").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError(std::string("bridge checkpoint meta: ") + e.what());
  }
  m.encoder = c.network("encoder");
  m.decoder = c.network("decoder");
  m.norm = {c.array("norm_mean"), c.array("norm_scale")};
  try {
    check_bridge(m);
  } catch (const RejectedInput& e) {
    throw CorruptionError(e.what());
  }
  return m;
}

}  // namespace bridgegcs
