#pragma once

// Fixed-topology feedforward networks with hand-derived reverse-mode
// gradients, plus momentum SGD with a step learning-rate schedule.

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "eoal/common.hpp"
#include "eoal/io.hpp"

namespace eoal::nn {

/// Affine map y = x W + b. `weight` is in_dim x out_dim.
struct Layer {
  Matrix weight;
  RowVector bias;

  Eigen::Index in_dim() const { return weight.rows(); }
  Eigen::Index out_dim() const { return weight.cols(); }
};

/// Affine layers with a rectifier between consecutive layers and none after
/// the last one. A single-layer Mlp is a plain linear head.
class Mlp {
 public:
  Mlp() = default;

  explicit Mlp(std::vector<Layer> layers) : layers_(std::move(layers)) {
    if (layers_.empty()) throw ConsistencyError("mlp: no layers");
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      if (layers_[l].bias.size() != layers_[l].out_dim()) throw ConsistencyError("mlp: bias/weight mismatch");
      if (l > 0 && layers_[l].in_dim() != layers_[l - 1].out_dim()) {
        throw ConsistencyError("mlp: layer " + std::to_string(l) + " does not chain");
      }
    }
  }

  std::size_t depth() const { return layers_.size(); }
  Eigen::Index in_dim() const { return layers_.front().in_dim(); }
  Eigen::Index out_dim() const { return layers_.back().out_dim(); }

  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }

  // Same shape, all parameters zero. Used as a gradient accumulator.
  Mlp zeros_like() const {
    std::vector<Layer> z;
    for (const auto& l : layers_) {
      z.push_back({Matrix::Zero(l.weight.rows(), l.weight.cols()), RowVector::Zero(l.bias.size())});
    }
    return Mlp(std::move(z));
  }

  Mlp& operator+=(const Mlp& other) {
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      layers_[l].weight += other.layers_[l].weight;
      layers_[l].bias += other.layers_[l].bias;
    }
    return *this;
  }

  bool all_finite() const {
    for (const auto& l : layers_) {
      if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
    }
    return true;
  }

 private:
  std::vector<Layer> layers_;
};

using LinearHead = Mlp;

/// What backward needs: each layer's input and pre-activation output.
struct Activations {
  std::vector<Matrix> inputs;
  std::vector<Matrix> pre;

  const Matrix& output() const { return pre.back(); }
};

inline Activations forward(const Mlp& model, const Matrix& x) {
  if (x.rows() == 0) throw ConsistencyError("forward: empty batch");
  if (x.cols() != model.in_dim()) {
    throw ConsistencyError("forward: input dim " + std::to_string(x.cols()) + " != model dim " +
                           std::to_string(model.in_dim()));
  }
  Activations act;
  act.inputs.reserve(model.depth());
  act.pre.reserve(model.depth());
  Matrix h = x;
  for (std::size_t l = 0; l < model.depth(); ++l) {
    const auto& layer = model.layers()[l];
    Matrix z = h * layer.weight;
    z.rowwise() += layer.bias;
    act.inputs.push_back(std::move(h));
    if (l + 1 < model.depth()) h = z.cwiseMax(0.0);
    act.pre.push_back(std::move(z));
  }
  return act;
}

inline Matrix predict(const Mlp& model, const Matrix& x) { return forward(model, x).output(); }

struct Gradient {
  Mlp params;
  Matrix input;
};

inline Gradient backward(const Mlp& model, const Activations& act, const Matrix& grad_out) {
  const auto depth = model.depth();
  if (act.inputs.size() != depth || act.pre.size() != depth) {
    throw ConsistencyError("backward: activations were produced by a model of different depth");
  }
  for (std::size_t l = 0; l < depth; ++l) {
    const auto& layer = model.layers()[l];
    if (act.inputs[l].cols() != layer.in_dim() || act.pre[l].cols() != layer.out_dim() ||
        act.inputs[l].rows() != act.pre[l].rows()) {
      throw ConsistencyError("backward: stale activations for layer " + std::to_string(l));
    }
  }
  if (grad_out.rows() != act.pre.back().rows() || grad_out.cols() != model.out_dim()) {
    throw ConsistencyError("backward: upstream gradient shape mismatch");
  }

  Gradient g{model.zeros_like(), {}};
  Matrix delta = grad_out;
  for (std::size_t l = depth; l-- > 0;) {
    const auto& layer = model.layers()[l];
    auto& gl = g.params.layers()[l];
    gl.weight.noalias() = act.inputs[l].transpose() * delta;
    gl.bias = delta.colwise().sum();
    Matrix upstream = delta * layer.weight.transpose();
    if (l > 0) {
      // rectifier of the previous layer
      upstream = upstream.cwiseProduct((act.pre[l - 1].array() > 0.0).cast<double>().matrix());
    }
    delta = std::move(upstream);
  }
  g.input = std::move(delta);
  return g;
}

/// Weights uniform in +-sqrt(6 / fan_in), biases zero.
inline Mlp init_params(const std::vector<int>& dims, Rng& rng) {
  if (dims.size() < 2) throw ConsistencyError("init_params: need at least input and output dims");
  std::vector<Layer> layers;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    if (dims[l] < 1 || dims[l + 1] < 1) throw ConsistencyError("init_params: non-positive dim");
    const double bound = std::sqrt(6.0 / dims[l]);
    Layer layer{Matrix(dims[l], dims[l + 1]), RowVector::Zero(dims[l + 1])};
    for (Eigen::Index i = 0; i < layer.weight.size(); ++i) {
      layer.weight.data()[i] = (2.0 * uniform_unit(rng) - 1.0) * bound;
    }
    layers.push_back(std::move(layer));
  }
  return Mlp(std::move(layers));
}

inline Mlp init_params(const std::vector<int>& dims, std::uint64_t seed) {
  Rng rng(seed);
  return init_params(dims, rng);
}

/// A flat view of one parameter tensor.
struct ParamRef {
  std::string name;
  double* data;
  std::size_t size;
  Eigen::Index rows;
  Eigen::Index cols;
  bool is_weight;
};

inline void collect_params(Mlp& model, const std::string& prefix, std::vector<ParamRef>& out) {
  for (std::size_t l = 0; l < model.depth(); ++l) {
    auto& layer = model.layers()[l];
    const auto base = prefix + "." + std::to_string(l);
    out.push_back({base + ".weight", layer.weight.data(), static_cast<std::size_t>(layer.weight.size()),
                   layer.weight.rows(), layer.weight.cols(), true});
    out.push_back({base + ".bias", layer.bias.data(), static_cast<std::size_t>(layer.bias.size()), 1,
                   layer.bias.size(), false});
  }
}

/// The feature extractor, the (K+1)-way closed-set head and K binary heads
/// with two logits each.
struct ModelBundle {
  Mlp feature;
  LinearHead closed;
  std::vector<LinearHead> binary;

  int num_known() const { return static_cast<int>(binary.size()); }

  ModelBundle zeros_like() const {
    ModelBundle z{feature.zeros_like(), closed.zeros_like(), {}};
    for (const auto& g : binary) z.binary.push_back(g.zeros_like());
    return z;
  }

  std::vector<ParamRef> params() {
    std::vector<ParamRef> out;
    collect_params(feature, "feature", out);
    collect_params(closed, "closed", out);
    for (std::size_t i = 0; i < binary.size(); ++i) collect_params(binary[i], "binary" + std::to_string(i + 1), out);
    return out;
  }
};

/// Feature extractor + hidden dims; the bundle's feature dim is the last entry.
inline ModelBundle init_bundle(int in_dim, const std::vector<int>& hidden, int num_known, Rng& rng) {
  if (hidden.empty()) throw ConfigError("init_bundle: need at least one feature layer");
  if (num_known < 2) throw ConfigError("init_bundle: need at least two known classes");
  std::vector<int> dims{in_dim};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  ModelBundle b;
  b.feature = init_params(dims, rng);
  b.closed = init_params({hidden.back(), num_known + 1}, rng);
  for (int i = 0; i < num_known; ++i) b.binary.push_back(init_params({hidden.back(), 2}, rng));
  return b;
}

/// Separate K-way classifier used for evaluation and by the baseline samplers.
struct TargetModel {
  Mlp feature;
  LinearHead head;

  std::vector<ParamRef> params() {
    std::vector<ParamRef> out;
    collect_params(feature, "target.feature", out);
    collect_params(head, "target.head", out);
    return out;
  }
};

inline TargetModel init_target(int in_dim, const std::vector<int>& hidden, int num_classes, Rng& rng) {
  std::vector<int> dims{in_dim};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  TargetModel t;
  t.feature = init_params(dims, rng);
  t.head = init_params({hidden.back(), num_classes}, rng);
  return t;
}

struct SgdState {
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.005;
  double step_decay_factor = 0.5;
  int step_decay_every = 20;
  std::vector<std::vector<double>> velocity;

  double lr_at(int epoch) const {
    if (step_decay_every <= 0) return learning_rate;
    return learning_rate * std::pow(step_decay_factor, epoch / step_decay_every);
  }
};

/// v <- momentum v + grad + weight_decay param (weights only);
/// param <- param - lr v.
inline void sgd_step(const std::vector<ParamRef>& params, const std::vector<ParamRef>& grads, SgdState& state,
                     int epoch) {
  if (params.size() != grads.size()) throw ConsistencyError("sgd_step: parameter/gradient count mismatch");
  if (!(state.learning_rate > 0.0)) throw ConfigError("sgd_step: learning rate must be > 0");
  if (state.velocity.empty()) {
    for (const auto& p : params) state.velocity.emplace_back(p.size, 0.0);
  }
  if (state.velocity.size() != params.size()) throw ConsistencyError("sgd_step: velocity buffers do not match");
  const double lr = state.lr_at(epoch);
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& p = params[k];
    const auto& g = grads[k];
    auto& v = state.velocity[k];
    if (p.size != g.size || v.size() != p.size) throw ConsistencyError("sgd_step: shape mismatch at " + p.name);
    const double decay = p.is_weight ? state.weight_decay : 0.0;
    for (std::size_t i = 0; i < p.size; ++i) {
      v[i] = state.momentum * v[i] + g.data[i] + decay * p.data[i];
      p.data[i] -= lr * v[i];
    }
  }
}

/// Debug dump: one line per tensor, `name,rows,cols,v0,v1,...` row-major.
inline std::string checkpoint_csv(const std::vector<ParamRef>& params) {
  std::string out = "name,rows,cols,values\n";
  for (const auto& p : params) {
    out += p.name + ',' + std::to_string(p.rows) + ',' + std::to_string(p.cols);
    for (std::size_t i = 0; i < p.size; ++i) out += ',' + io::format_double(p.data[i]);
    out += '\n';
  }
  return out;
}

}  // namespace eoal::nn
