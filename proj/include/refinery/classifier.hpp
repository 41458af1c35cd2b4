#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "refinery/layers.hpp"
#include "refinery/rng.hpp"
#include "refinery/tensor.hpp"

namespace refinery {

enum class LayerKind {
  Conv3x3,
  BatchNorm,
  Relu,
  MaxPool2x2,
  GlobalAvgPool,
  FullyConnected,
};

inline const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Conv3x3: return "conv3x3";
    case LayerKind::BatchNorm: return "batchnorm";
    case LayerKind::Relu: return "relu";
    case LayerKind::MaxPool2x2: return "maxpool2x2";
    case LayerKind::GlobalAvgPool: return "gap";
    case LayerKind::FullyConnected: return "fullyconnected";
  }
  return "?";
}

struct LayerSpec {
  LayerKind kind;
  std::size_t in = 0;  // channels (conv/bn) or features (fc)
  std::size_t out = 0; // channels (conv) or features (fc)
};

struct ClassifierArch {
  std::string name;
  std::size_t input_size = 0; // spatial side length
  std::size_t num_classes = 0;
  std::vector<LayerSpec> layers;

  /// Checks the fixed conv->batchnorm->relu pattern, shape consistency and
  /// that the final layer emits exactly num_classes logits.
  void validate() const {
    if (layers.empty()) throw ConfigError("arch " + name + ": no layers");
    std::size_t channels = 3;
    std::size_t spatial = input_size;
    bool pooled_to_vector = false;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const LayerSpec& l = layers[i];
      switch (l.kind) {
        case LayerKind::Conv3x3:
          if (pooled_to_vector || l.in != channels)
            throw ConfigError("arch " + name + ": conv at layer " +
                              std::to_string(i) + " expects " +
                              std::to_string(l.in) + " channels, has " +
                              std::to_string(channels));
          if (i + 2 >= layers.size() ||
              layers[i + 1].kind != LayerKind::BatchNorm ||
              layers[i + 2].kind != LayerKind::Relu)
            throw ConfigError("arch " + name +
                              ": every conv must be followed by batchnorm "
                              "then relu (layer " + std::to_string(i) + ")");
          channels = l.out;
          break;
        case LayerKind::BatchNorm:
          if (pooled_to_vector || l.in != channels)
            throw ConfigError("arch " + name + ": batchnorm channel mismatch at "
                              "layer " + std::to_string(i));
          break;
        case LayerKind::Relu:
          break;
        case LayerKind::MaxPool2x2:
          if (pooled_to_vector || spatial % 2 != 0)
            throw ConfigError("arch " + name + ": pool on odd spatial size");
          spatial /= 2;
          break;
        case LayerKind::GlobalAvgPool:
          if (pooled_to_vector)
            throw ConfigError("arch " + name + ": duplicate global pooling");
          pooled_to_vector = true;
          break;
        case LayerKind::FullyConnected:
          if (!pooled_to_vector || l.in != channels)
            throw ConfigError("arch " + name + ": fully connected input mismatch "
                              "at layer " + std::to_string(i));
          channels = l.out;
          break;
      }
    }
    if (layers.back().kind != LayerKind::FullyConnected ||
        layers.back().out != num_classes)
      throw ConfigError("arch " + name + ": final layer must emit " +
                        std::to_string(num_classes) + " logits");
  }
};

/// Two capacity tiers stand in for the student/teacher roles: the wider
/// network makes a stronger refinery for the narrow one.
inline ClassifierArch smallnet_arch(std::size_t num_classes) {
  ClassifierArch a;
  a.name = "smallnet";
  a.input_size = 32;
  a.num_classes = num_classes;
  auto conv_block = [&a](std::size_t in, std::size_t out) {
    a.layers.push_back({LayerKind::Conv3x3, in, out});
    a.layers.push_back({LayerKind::BatchNorm, out, out});
    a.layers.push_back({LayerKind::Relu, out, out});
  };
  conv_block(3, 16);
  a.layers.push_back({LayerKind::MaxPool2x2, 16, 16});
  conv_block(16, 32);
  a.layers.push_back({LayerKind::MaxPool2x2, 32, 32});
  conv_block(32, 64);
  a.layers.push_back({LayerKind::GlobalAvgPool, 64, 64});
  a.layers.push_back({LayerKind::FullyConnected, 64, num_classes});
  a.validate();
  return a;
}

inline ClassifierArch bignet_arch(std::size_t num_classes) {
  ClassifierArch a;
  a.name = "bignet";
  a.input_size = 32;
  a.num_classes = num_classes;
  auto conv_block = [&a](std::size_t in, std::size_t out) {
    a.layers.push_back({LayerKind::Conv3x3, in, out});
    a.layers.push_back({LayerKind::BatchNorm, out, out});
    a.layers.push_back({LayerKind::Relu, out, out});
  };
  conv_block(3, 32);
  a.layers.push_back({LayerKind::MaxPool2x2, 32, 32});
  conv_block(32, 64);
  a.layers.push_back({LayerKind::MaxPool2x2, 64, 64});
  conv_block(64, 128);
  conv_block(128, 128);
  a.layers.push_back({LayerKind::GlobalAvgPool, 128, 128});
  a.layers.push_back({LayerKind::FullyConnected, 128, num_classes});
  a.validate();
  return a;
}

inline ClassifierArch arch_by_name(const std::string& name,
                                   std::size_t num_classes) {
  if (name == "smallnet") return smallnet_arch(num_classes);
  if (name == "bignet") return bignet_arch(num_classes);
  throw ConfigError("unknown architecture: " + name);
}

constexpr float kBnEpsilon = 1e-5f;
constexpr float kBnMomentum = 0.1f;

struct LayerParams {
  Tensor weight;
  Tensor bias;
  Tensor running_mean; // batchnorm only
  Tensor running_var;  // batchnorm only
};

struct Classifier {
  ClassifierArch arch;
  std::vector<LayerParams> params; // one entry per layer, empty for stateless
  /// Frozen models (teachers) never persist running-statistic updates even
  /// when run with train-mode batch statistics.
  bool frozen = false;
  /// Instrumentation: number of times running statistics were written.
  mutable std::uint64_t bn_stat_writes = 0;
};

/// He-normal initialization for conv/fc weights; batchnorm starts at the
/// identity transform with zeroed running mean and unit running variance.
inline Classifier make_classifier(const ClassifierArch& arch, Rng& rng) {
  arch.validate();
  Classifier model;
  model.arch = arch;
  model.params.resize(arch.layers.size());
  std::normal_distribution<float> normal(0.0f, 1.0f);
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    const LayerSpec& l = arch.layers[i];
    LayerParams& p = model.params[i];
    switch (l.kind) {
      case LayerKind::Conv3x3: {
        p.weight = Tensor({l.out, l.in, 3, 3});
        const float std_dev = std::sqrt(2.0f / static_cast<float>(l.in * 9));
        for (float& v : p.weight.data) v = normal(rng) * std_dev;
        p.bias = Tensor({l.out});
        break;
      }
      case LayerKind::FullyConnected: {
        p.weight = Tensor({l.out, l.in});
        const float std_dev = std::sqrt(2.0f / static_cast<float>(l.in));
        for (float& v : p.weight.data) v = normal(rng) * std_dev;
        p.bias = Tensor({l.out});
        break;
      }
      case LayerKind::BatchNorm:
        p.weight = Tensor::full({l.in}, 1.0f);
        p.bias = Tensor({l.in});
        p.running_mean = Tensor({l.in});
        p.running_var = Tensor::full({l.in}, 1.0f);
        break;
      default:
        break;
    }
  }
  return model;
}

// ---------------------------------------------------------------------------
// forward / backward over the whole network

struct ForwardState {
  bool valid = false;
  BnMode mode = BnMode::Eval;
  std::vector<Tensor> inputs; // input to each layer
  std::vector<ConvCache> conv;
  std::vector<BnCache> bn;
  std::vector<PoolCache> pool;
  Tensor logits;
};

/// Runs the network on a [N,3,S,S] batch and returns [N,K] logits. In train
/// mode batch statistics are used and, unless the model is frozen, persisted
/// into the running estimates. Pass a ForwardState to enable backward().
inline Tensor forward(Classifier& model, const Tensor& batch, BnMode mode,
                      ForwardState* state = nullptr) {
  const ClassifierArch& arch = model.arch;
  if (batch.rank() != 4 || batch.dim(1) != 3 ||
      batch.dim(2) != arch.input_size || batch.dim(3) != arch.input_size)
    throw InvalidInputError("forward: expected [N,3," +
                            std::to_string(arch.input_size) + "," +
                            std::to_string(arch.input_size) + "] batch, got " +
                            batch.shape_str());
  if (mode == BnMode::Train && batch.dim(0) < 2)
    throw DegenerateBatchError(
        "forward: train-mode batch statistics need at least 2 samples");

  const std::size_t nlayers = arch.layers.size();
  if (state) {
    state->valid = false;
    state->mode = mode;
    state->inputs.assign(nlayers, Tensor());
    state->conv.assign(nlayers, ConvCache());
    state->bn.assign(nlayers, BnCache());
    state->pool.assign(nlayers, PoolCache());
  }

  Tensor x = batch;
  for (std::size_t i = 0; i < nlayers; ++i) {
    if (state) state->inputs[i] = x;
    const LayerSpec& l = arch.layers[i];
    LayerParams& p = model.params[i];
    switch (l.kind) {
      case LayerKind::Conv3x3: {
        ConvCache scratch;
        x = conv3x3_forward(x, p.weight, p.bias,
                            state ? &state->conv[i] : &scratch);
        break;
      }
      case LayerKind::BatchNorm: {
        const bool persist = mode == BnMode::Train && !model.frozen;
        x = batchnorm_forward(x, p.weight, p.bias, p.running_mean,
                              p.running_var, kBnMomentum, kBnEpsilon, mode,
                              persist, state ? &state->bn[i] : nullptr);
        if (persist) ++model.bn_stat_writes;
        break;
      }
      case LayerKind::Relu:
        x = relu_forward(x);
        break;
      case LayerKind::MaxPool2x2:
        x = maxpool2x2_forward(x, state ? &state->pool[i] : nullptr);
        break;
      case LayerKind::GlobalAvgPool:
        x = gap_forward(x);
        break;
      case LayerKind::FullyConnected:
        x = fc_forward(x, p.weight, p.bias);
        break;
    }
  }

  if (state) {
    state->logits = x;
    state->valid = true;
  }
  return x;
}

struct Gradients {
  std::vector<LayerParams> layers; // weight/bias gradients, shapes as params
};

/// Backpropagates an upstream gradient with respect to the logits through the
/// cached forward pass. Returns parameter gradients; fills input_grad with
/// d(loss)/d(batch) when requested.
inline Gradients backward(const Classifier& model, const ForwardState& state,
                          const Tensor& dlogits, Tensor* input_grad = nullptr) {
  if (!state.valid)
    throw ProtocolError("backward: no cached forward pass");
  if (!dlogits.same_shape(state.logits))
    throw InvalidInputError("backward: upstream gradient shape " +
                            dlogits.shape_str() + " does not match logits " +
                            state.logits.shape_str());

  const ClassifierArch& arch = model.arch;
  Gradients grads;
  grads.layers.resize(arch.layers.size());

  Tensor dy = dlogits;
  for (std::size_t idx = arch.layers.size(); idx-- > 0;) {
    const LayerSpec& l = arch.layers[idx];
    const LayerParams& p = model.params[idx];
    LayerParams& g = grads.layers[idx];
    const Tensor& x = state.inputs[idx];
    const bool want_dx = idx > 0 || input_grad != nullptr;
    switch (l.kind) {
      case LayerKind::Conv3x3: {
        Tensor dx;
        conv3x3_backward(x, p.weight, state.conv[idx], dy, g.weight, g.bias,
                         want_dx ? &dx : nullptr);
        dy = std::move(dx);
        break;
      }
      case LayerKind::BatchNorm: {
        Tensor dx;
        batchnorm_backward(p.weight, state.bn[idx], dy, g.weight, g.bias,
                           want_dx ? &dx : nullptr);
        dy = std::move(dx);
        break;
      }
      case LayerKind::Relu:
        dy = relu_backward(x, dy);
        break;
      case LayerKind::MaxPool2x2:
        dy = maxpool2x2_backward(x, state.pool[idx], dy);
        break;
      case LayerKind::GlobalAvgPool:
        dy = gap_backward(x, dy);
        break;
      case LayerKind::FullyConnected: {
        Tensor dx;
        fc_backward(x, p.weight, dy, g.weight, g.bias, want_dx ? &dx : nullptr);
        dy = std::move(dx);
        break;
      }
    }
  }
  if (input_grad) *input_grad = std::move(dy);
  return grads;
}

// ---------------------------------------------------------------------------
// SGD with classical momentum and decoupled-from-schedule weight decay

struct SgdConfig {
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
};

struct SgdState {
  std::vector<LayerParams> velocity;
};

/// v <- momentum * v + (grad + wd * w);  w <- w - lr * v.
/// Batchnorm running statistics are never touched here.
inline void sgd_step(Classifier& model, const Gradients& grads,
                     const SgdConfig& cfg, SgdState& state) {
  if (state.velocity.empty()) state.velocity.resize(model.params.size());
  auto update = [&cfg](Tensor& w, const Tensor& g, Tensor& v) {
    if (w.size() == 0) return;
    if (g.shape != w.shape)
      throw InvalidInputError("sgd_step: gradient shape mismatch");
    if (v.size() == 0) v = Tensor(w.shape);
    const float lr = static_cast<float>(cfg.lr);
    const float mu = static_cast<float>(cfg.momentum);
    const float wd = static_cast<float>(cfg.weight_decay);
    for (std::size_t i = 0; i < w.size(); ++i) {
      const float total = g.data[i] + wd * w.data[i];
      v.data[i] = mu * v.data[i] + total;
      w.data[i] -= lr * v.data[i];
    }
  };
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    update(model.params[i].weight, grads.layers[i].weight,
           state.velocity[i].weight);
    update(model.params[i].bias, grads.layers[i].bias, state.velocity[i].bias);
  }
}

/// Total number of learnable scalars (excludes running statistics).
inline std::size_t parameter_count(const Classifier& model) {
  std::size_t n = 0;
  for (const LayerParams& p : model.params) n += p.weight.size() + p.bias.size();
  return n;
}

/// Largest absolute difference across all learnable parameters.
inline float max_param_difference(const Classifier& a, const Classifier& b) {
  float worst = 0.0f;
  for (std::size_t i = 0; i < a.params.size(); ++i) {
    auto diff = [&worst](const Tensor& x, const Tensor& y) {
      for (std::size_t j = 0; j < x.size(); ++j)
        worst = std::max(worst, std::fabs(x.data[j] - y.data[j]));
    };
    diff(a.params[i].weight, b.params[i].weight);
    diff(a.params[i].bias, b.params[i].bias);
  }
  return worst;
}

} // namespace refinery
