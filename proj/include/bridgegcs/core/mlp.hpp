#pragma once

#include <cmath>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bridgegcs/core/rng.hpp"
#include "bridgegcs/core/tensor.hpp"
#include "bridgegcs/error.hpp"

namespace bridgegcs {

enum class Activation { tanh, relu, identity };

inline std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
    case Activation::identity: return "identity";
  }
  return "identity";
}

inline Activation activation_from_string(std::string_view s) {
  if (s == "tanh") return Activation::tanh;
  if (s == "relu") return Activation::relu;
  if (s == "identity") return Activation::identity;
  throw ConfigError("unknown activation '" + std::string(s) + "'");
}

/// One dense layer. Weights are stored input-major: shape {in, out}.
struct DenseLayer {
  Tensor weight;
  Tensor bias;
  Activation activation = Activation::identity;

  std::size_t in_dim() const { return weight.shape()[0]; }
  std::size_t out_dim() const { return weight.shape()[1]; }
  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

/// A multilayer perceptron. With no layers it is the identity map on `input_dim`.
struct MlpParams {
  std::size_t input_dim = 0;
  std::vector<DenseLayer> layers;

  std::size_t in_dim() const { return input_dim; }
  std::size_t out_dim() const { return layers.empty() ? input_dim : layers.back().out_dim(); }

  std::vector<std::size_t> layer_sizes() const {
    std::vector<std::size_t> s{input_dim};
    for (const auto& l : layers) s.push_back(l.out_dim());
    return s;
  }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight.size() + l.bias.size();
    return n;
  }

  friend bool operator==(const MlpParams&, const MlpParams&) = default;
};

/// Parameters in canonical order: weight then bias for each layer.
inline std::vector<Tensor*> parameter_tensors(MlpParams& p) {
  std::vector<Tensor*> out;
  for (auto& l : p.layers) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

inline std::vector<const Tensor*> parameter_tensors(const MlpParams& p) {
  std::vector<const Tensor*> out;
  for (const auto& l : p.layers) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

/// Concatenated parameter lists of several networks, in argument order.
inline std::vector<Tensor*> collect_tensors(std::initializer_list<MlpParams*> nets) {
  std::vector<Tensor*> out;
  for (MlpParams* n : nets)
    for (Tensor* t : parameter_tensors(*n)) out.push_back(t);
  return out;
}

inline std::vector<const Tensor*> collect_const_tensors(std::initializer_list<const MlpParams*> nets) {
  std::vector<const Tensor*> out;
  for (const MlpParams* n : nets)
    for (const Tensor* t : parameter_tensors(*n)) out.push_back(t);
  return out;
}

/// Same structure as `p`, all values zero. Doubles as the gradient bundle type.
inline MlpParams zeros_like(const MlpParams& p) {
  MlpParams z = p;
  for (auto& l : z.layers) {
    l.weight.fill(0.0);
    l.bias.fill(0.0);
  }
  return z;
}

/// Glorot-uniform weights, zero biases.
inline MlpParams make_mlp(std::span<const std::size_t> sizes, std::span<const Activation> activations,
                          Rng& rng) {
  if (sizes.empty()) throw ConfigError("make_mlp: empty layer size list");
  if (activations.size() + 1 != sizes.size()) throw ConfigError("make_mlp: need one activation per layer");
  MlpParams p;
  p.input_dim = sizes[0];
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const std::size_t in = sizes[l], out = sizes[l + 1];
    if (in == 0 || out == 0) throw ConfigError("make_mlp: zero-width layer");
    DenseLayer layer{Tensor({in, out}), Tensor({out}), activations[l]};
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    for (auto& w : layer.weight.values()) w = uniform(rng, -bound, bound);
    p.layers.push_back(std::move(layer));
  }
  return p;
}

/// Hidden layers share `hidden_act`; the output layer uses `output_act`.
inline MlpParams make_mlp(std::size_t in, std::span<const std::size_t> hidden, std::size_t out,
                          Activation hidden_act, Activation output_act, Rng& rng) {
  std::vector<std::size_t> sizes{in};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(out);
  std::vector<Activation> acts(sizes.size() - 1, hidden_act);
  acts.back() = output_act;
  return make_mlp(sizes, acts, rng);
}

namespace detail {

inline void apply_activation(Activation a, Tensor& t) {
  switch (a) {
    case Activation::tanh:
      for (auto& v : t.values()) v = std::tanh(v);
      break;
    case Activation::relu:
      for (auto& v : t.values()) v = v > 0.0 ? v : 0.0;
      break;
    case Activation::identity:
      break;
  }
}

// Multiplies `grad` in place by the activation derivative, expressed via the activation output.
inline void activation_backward(Activation a, const Tensor& out, Tensor& grad) {
  switch (a) {
    case Activation::tanh:
      for (std::size_t i = 0; i < grad.size(); ++i) grad[i] *= 1.0 - out[i] * out[i];
      break;
    case Activation::relu:
      for (std::size_t i = 0; i < grad.size(); ++i) grad[i] = out[i] > 0.0 ? grad[i] : 0.0;
      break;
    case Activation::identity:
      break;
  }
}

inline Tensor as_batch(const Tensor& x) {
  if (x.rank() == 2) return x;
  if (x.rank() == 1) return Tensor({1, x.size()}, x.values());
  throw RejectedInput("mlp input must be rank 1 or 2");
}

}  // namespace detail

/// Activations of every layer, kept for the backward pass.
struct MlpTrace {
  std::vector<Tensor> activations;  // [0] = input batch, [l + 1] = output of layer l
  const Tensor& output() const { return activations.back(); }
};

inline MlpTrace forward_trace(const MlpParams& p, const Tensor& input) {
  if (input.cols() != p.in_dim()) {
    throw RejectedInput("mlp forward: input width " + std::to_string(input.cols()) + " != " +
                        std::to_string(p.in_dim()));
  }
  MlpTrace trace;
  trace.activations.reserve(p.layers.size() + 1);
  trace.activations.push_back(detail::as_batch(input));
  for (const auto& layer : p.layers) {
    const Tensor& x = trace.activations.back();
    Tensor y = Tensor::matrix(x.rows(), layer.out_dim());
    kernels::affine(x, layer.weight, layer.bias, y);
    detail::apply_activation(layer.activation, y);
    trace.activations.push_back(std::move(y));
  }
  return trace;
}

/// Pure forward pass. Rank-1 input gives rank-1 output; rank-2 input is a batch.
inline Tensor forward(const MlpParams& p, const Tensor& input) {
  MlpTrace t = forward_trace(p, input);
  Tensor out = std::move(t.activations.back());
  if (input.rank() == 1) return Tensor::vector(std::move(out.values()));
  return out;
}

inline std::vector<double> forward(const MlpParams& p, std::span<const double> x) {
  return forward(p, Tensor::vector({x.begin(), x.end()})).values();
}

/// Backpropagates `d_output` through a recorded trace. Parameter gradients are
/// accumulated into `grads` (when non-null); returns the gradient w.r.t. the input batch.
inline Tensor backward(const MlpParams& p, const MlpTrace& trace, Tensor d_output, MlpParams* grads) {
  if (d_output.rank() == 1) d_output = Tensor({1, d_output.size()}, std::move(d_output.values()));
  for (std::size_t l = p.layers.size(); l-- > 0;) {
    const DenseLayer& layer = p.layers[l];
    detail::activation_backward(layer.activation, trace.activations[l + 1], d_output);
    const Tensor& x = trace.activations[l];
    if (grads) kernels::affine_param_grad(x, d_output, grads->layers[l].weight, grads->layers[l].bias);
    Tensor dx = Tensor::matrix(x.rows(), layer.in_dim());
    kernels::affine_input_grad(d_output, layer.weight, dx);
    d_output = std::move(dx);
  }
  return d_output;
}

struct LossAndGrad {
  double value = 0.0;
  Tensor d_output;  // dL/d(output), same shape as the network output batch
};

struct GradientResult {
  double loss = 0.0;
  MlpParams grads;
  Tensor d_input;
};

/// dL/dθ for a scalar loss defined over the network output.
inline GradientResult gradients(const MlpParams& p, const Tensor& input,
                                const std::function<LossAndGrad(const Tensor&)>& loss_fn) {
  MlpTrace trace = forward_trace(p, input);
  LossAndGrad lg = loss_fn(trace.output());
  if (!std::isfinite(lg.value)) throw DivergenceError("non-finite loss in gradients()");
  GradientResult r;
  r.loss = lg.value;
  r.grads = zeros_like(p);
  r.d_input = backward(p, trace, std::move(lg.d_output), &r.grads);
  return r;
}

}  // namespace bridgegcs
