#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "lastshot/matrix.hpp"
#include "lastshot/rng.hpp"
#include "lastshot/tape.hpp"

namespace lastshot {

enum class Activation : std::uint8_t { ReLU, Tanh, Identity };

inline const char* activation_name(Activation a) {
  switch (a) {
    case Activation::ReLU: return "relu";
    case Activation::Tanh: return "tanh";
    case Activation::Identity: return "identity";
  }
  return "?";
}

/// A fully-connected network: weights are (in x out), biases (1 x out).
/// `hidden_acts[i]` is applied after layer i; the final layer output is raw.
struct MlpParams {
  struct Layer {
    Matrix weight;
    Matrix bias;
  };
  std::vector<Layer> layers;
  std::vector<Activation> hidden_acts;  // size layers.size() - 1

  std::size_t in_dim() const { return layers.front().weight.rows; }
  std::size_t out_dim() const { return layers.back().weight.cols; }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const Layer& l : layers) n += l.weight.size() + l.bias.size();
    return n;
  }

  void validate() const {
    if (layers.empty()) throw ShapeError("MlpParams: no layers");
    if (hidden_acts.size() + 1 != layers.size())
      throw ShapeError("MlpParams: " + std::to_string(hidden_acts.size()) +
                       " activations for " + std::to_string(layers.size()) +
                       " layers");
    for (std::size_t i = 0; i + 1 < layers.size(); ++i) {
      if (layers[i].weight.cols != layers[i + 1].weight.rows)
        throw ShapeError("MlpParams: layer " + std::to_string(i) + " out " +
                         std::to_string(layers[i].weight.cols) +
                         " != layer " + std::to_string(i + 1) + " in " +
                         std::to_string(layers[i + 1].weight.rows));
    }
    for (const Layer& l : layers)
      if (l.bias.rows != 1 || l.bias.cols != l.weight.cols)
        throw ShapeError("MlpParams: bias " + l.bias.shape_str() +
                         " for weight " + l.weight.shape_str());
  }

  /// Xavier-uniform weights, zero biases.
  static MlpParams init(const std::vector<std::size_t>& dims,
                        const std::vector<Activation>& hidden_acts,
                        RngStream& rng) {
    if (dims.size() < 2) throw ShapeError("MlpParams::init: need >= 2 dims");
    MlpParams p;
    p.hidden_acts = hidden_acts;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
      Layer l;
      l.weight = Matrix(dims[i], dims[i + 1]);
      double bound = std::sqrt(6.0 / static_cast<double>(dims[i] + dims[i + 1]));
      for (double& w : l.weight.data) w = rng.uniform(-bound, bound);
      l.bias = Matrix(1, dims[i + 1]);
      p.layers.push_back(std::move(l));
    }
    p.validate();
    return p;
  }

  static MlpParams init_uniform_act(const std::vector<std::size_t>& dims,
                                    Activation act, RngStream& rng) {
    std::vector<Activation> acts(dims.size() >= 2 ? dims.size() - 2 : 0, act);
    return init(dims, acts, rng);
  }

  /// Declaration-order flatten: per layer, weight data then bias data.
  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(param_count());
    for (const Layer& l : layers) {
      out.insert(out.end(), l.weight.data.begin(), l.weight.data.end());
      out.insert(out.end(), l.bias.data.begin(), l.bias.data.end());
    }
    return out;
  }

  void unflatten(const std::vector<double>& flat) {
    if (flat.size() != param_count())
      throw ShapeError("unflatten: " + std::to_string(flat.size()) +
                       " values for " + std::to_string(param_count()) +
                       " parameters");
    std::size_t k = 0;
    for (Layer& l : layers) {
      for (double& w : l.weight.data) w = flat[k++];
      for (double& b : l.bias.data) b = flat[k++];
    }
  }
};

/// Tape handles for one network's parameters.
struct MlpNodes {
  std::vector<std::pair<Var, Var>> layers;  // (weight, bias)
  std::vector<Activation> hidden_acts;

  std::vector<Var> all() const {
    std::vector<Var> vs;
    vs.reserve(layers.size() * 2);
    for (const auto& [w, b] : layers) {
      vs.push_back(w);
      vs.push_back(b);
    }
    return vs;
  }
};

inline MlpNodes lift(Tape& tape, const MlpParams& p, bool requires_grad = true) {
  MlpNodes n;
  n.hidden_acts = p.hidden_acts;
  for (const MlpParams::Layer& l : p.layers)
    n.layers.emplace_back(tape.leaf(l.weight, requires_grad),
                          tape.leaf(l.bias, requires_grad));
  return n;
}

inline Var apply_activation(Tape& tape, Var x, Activation a) {
  switch (a) {
    case Activation::ReLU: return tape.relu(x);
    case Activation::Tanh: return tape.tanh(x);
    case Activation::Identity: return x;
  }
  return x;
}

/// Forward pass on the tape; `x` is (batch x in_dim).
inline Var mlp_forward(Tape& tape, const MlpNodes& net, Var x) {
  const Matrix& xin = tape.value(x);
  const Matrix& w0 = tape.value(net.layers.front().first);
  if (xin.cols != w0.rows)
    throw ShapeError("mlp_forward: input cols " + std::to_string(xin.cols) +
                     " != first-layer in dim " + std::to_string(w0.rows));
  Var h = x;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    h = tape.add_rowvec(tape.matmul(h, net.layers[i].first),
                        net.layers[i].second);
    if (i + 1 < net.layers.size())
      h = apply_activation(tape, h, net.hidden_acts[i]);
  }
  return h;
}

/// Plain forward pass (no gradients).
inline Matrix mlp_forward(const MlpParams& p, const Matrix& x) {
  Tape tape;
  MlpNodes net = lift(tape, p, /*requires_grad=*/false);
  Var out = mlp_forward(tape, net, tape.constant(x));
  return tape.value(out);
}

/// Loss value and flat gradient of `loss_fn(tape, params-as-nodes)`.
template <typename F>
std::pair<double, std::vector<double>> value_and_grad(const MlpParams& p,
                                                      F&& loss_fn) {
  Tape tape;
  MlpNodes net = lift(tape, p, /*requires_grad=*/true);
  Var loss = loss_fn(tape, net);
  double v = tape.scalar(loss);
  std::vector<Var> gs = tape.grad(loss, net.all());
  std::vector<double> flat;
  flat.reserve(p.param_count());
  for (Var g : gs) {
    const Matrix& gm = tape.value(g);
    flat.insert(flat.end(), gm.data.begin(), gm.data.end());
  }
  return {v, std::move(flat)};
}

}  // namespace lastshot
