// Copyright 2026 The AttCDC Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef ATTCDC_LAYERS_HPP_
#define ATTCDC_LAYERS_HPP_

#include <functional>
#include <string>
#include <vector>

#include "attcdc/ops.hpp"
#include "attcdc/random.hpp"

namespace attcdc {

/// Callback receiving every tensor a layer owns. `trainable` is false for
/// batchnorm running statistics (persisted but not optimised, excluded
/// from parameter counts).
template <class T>
using ParamVisitor = std::function<void(const std::string& name, TensorT<T>& tensor,
                                        bool trainable)>;

enum class ConvMode { kStandard, kDepthwiseSeparable };

template <class T>
struct Conv2dT {
  TensorT<T> weight;  // (out, in, k, k), bias-free
  int stride = 1;
  int pad = 0;

  Conv2dT() = default;
  Conv2dT(int out_ch, int in_ch, int k, int stride_, int pad_, Rng& rng)
      : weight(TensorT<T>::kaiming({out_ch, in_ch, k, k}, in_ch * k * k, rng)),
        stride(stride_),
        pad(pad_) {}

  TensorT<T> forward(const TensorT<T>& x, ContextT<T> ctx) const {
    return ops::conv2d(x, weight, stride, pad, ctx);
  }
  void visit(const std::string& prefix, const ParamVisitor<T>& v) {
    v(prefix + ".weight", weight, true);
  }
};

template <class T>
struct BatchNorm2dT {
  TensorT<T> gamma, beta;
  TensorT<T> running_mean, running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  BatchNorm2dT() = default;
  explicit BatchNorm2dT(int channels)
      : gamma(TensorT<T>::ones({channels})),
        beta(TensorT<T>::zeros({channels})),
        running_mean(TensorT<T>::zeros({channels})),
        running_var(TensorT<T>::ones({channels})) {}

  TensorT<T> forward(const TensorT<T>& x, ContextT<T> ctx) {
    return ops::batchnorm2d(x, gamma, beta, running_mean, running_var, ctx.training, momentum,
                            eps, ctx);
  }
  void visit(const std::string& prefix, const ParamVisitor<T>& v) {
    v(prefix + ".gamma", gamma, true);
    v(prefix + ".beta", beta, true);
    v(prefix + ".running_mean", running_mean, false);
    v(prefix + ".running_var", running_var, false);
  }
};

template <class T>
struct LinearT {
  TensorT<T> weight;  // (out, in)
  TensorT<T> bias;    // (out)

  LinearT() = default;
  LinearT(int out, int in, Rng& rng)
      : weight(TensorT<T>::kaiming({out, in}, in, rng)), bias(TensorT<T>::zeros({out})) {}

  TensorT<T> forward(const TensorT<T>& x, ContextT<T> ctx) const {
    return ops::linear(x, weight, bias, ctx);
  }
  void visit(const std::string& prefix, const ParamVisitor<T>& v) {
    v(prefix + ".weight", weight, true);
    v(prefix + ".bias", bias, true);
  }
};

/// Channel attention: GAP -> FC (C -> C/r) -> ReLU -> FC (C/r -> C) ->
/// sigmoid -> per-channel rescale of the input map. Scores lie in (0,1).
template <class T>
struct AttentionBlockT {
  int channels = 0;
  int reduction = 16;
  LinearT<T> fc1, fc2;
  // Diagnostic switch: skip the rescale entirely, as if every score were 1.
  bool force_identity = false;

  AttentionBlockT() = default;
  AttentionBlockT(int channels_, int reduction_, Rng& rng) : channels(channels_), reduction(reduction_) {
    if (reduction < 1 || channels % reduction != 0) {
      throw ConfigError("attention block: channels " + std::to_string(channels) +
                        " not divisible by reduction " + std::to_string(reduction));
    }
    fc1 = LinearT<T>(channels / reduction, channels, rng);
    fc2 = LinearT<T>(channels, channels / reduction, rng);
  }

  TensorT<T> forward(const TensorT<T>& x, ContextT<T> ctx,
                     TensorT<T>* scores_out = nullptr) const {
    if (x.dim(1) != channels) {
      throw DimensionError("attention block built for " + std::to_string(channels) +
                           " channels, input has " + std::to_string(x.dim(1)));
    }
    if (force_identity) {
      if (scores_out) *scores_out = TensorT<T>::ones({x.dim(0), channels});
      return x;
    }
    TensorT<T> pooled = ops::global_avg_pool(x, ctx);
    TensorT<T> hidden = ops::relu(fc1.forward(pooled, ctx), ctx);
    TensorT<T> scores = ops::sigmoid(fc2.forward(hidden, ctx), ctx);
    if (scores_out) *scores_out = scores;
    return ops::broadcast_mul(x, scores, ctx);
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& v) {
    fc1.visit(prefix + ".fc1", v);
    fc2.visit(prefix + ".fc2", v);
  }
};

/// Depthwise 3x3 (one filter per channel) followed by a pointwise 1x1 mix:
/// M*Dk^2 + M*N parameters against N*M*Dk^2 for the standard layer.
template <class T>
struct DepthwiseSeparableConvT {
  TensorT<T> depthwise;  // (M, 1, k, k)
  TensorT<T> pointwise;  // (N, M, 1, 1)
  int stride = 1;
  int pad = 0;

  DepthwiseSeparableConvT() = default;
  DepthwiseSeparableConvT(int out_ch, int in_ch, int k, int stride_, int pad_, Rng& rng)
      : depthwise(TensorT<T>::kaiming({in_ch, 1, k, k}, k * k, rng)),
        pointwise(TensorT<T>::kaiming({out_ch, in_ch, 1, 1}, in_ch, rng)),
        stride(stride_),
        pad(pad_) {}

  TensorT<T> forward(const TensorT<T>& x, ContextT<T> ctx) const {
    return ops::pointwise_conv2d(ops::depthwise_conv2d(x, depthwise, stride, pad, ctx), pointwise,
                                 ctx);
  }
  void visit(const std::string& prefix, const ParamVisitor<T>& v) {
    v(prefix + ".depthwise", depthwise, true);
    v(prefix + ".pointwise", pointwise, true);
  }
};

/// One densely connected layer: bn-relu-conv1x1 bottleneck (in -> 4*growth)
/// then bn-relu-conv3x3 (4*growth -> growth), output concatenated onto the
/// input. The 3x3 stage honours the configured convolution mode.
template <class T>
struct DenseLayerT {
  int in_channels = 0;
  int growth = 0;
  ConvMode mode = ConvMode::kStandard;
  BatchNorm2dT<T> bn1;
  Conv2dT<T> conv1;
  BatchNorm2dT<T> bn2;
  Conv2dT<T> conv3_standard;
  DepthwiseSeparableConvT<T> conv3_separable;

  DenseLayerT() = default;
  DenseLayerT(int in_channels_, int growth_, ConvMode mode_, Rng& rng)
      : in_channels(in_channels_), growth(growth_), mode(mode_), bn1(in_channels_) {
    const int bottleneck = 4 * growth;
    conv1 = Conv2dT<T>(bottleneck, in_channels, 1, 1, 0, rng);
    bn2 = BatchNorm2dT<T>(bottleneck);
    if (mode == ConvMode::kStandard) {
      conv3_standard = Conv2dT<T>(growth, bottleneck, 3, 1, 1, rng);
    } else {
      conv3_separable = DepthwiseSeparableConvT<T>(growth, bottleneck, 3, 1, 1, rng);
    }
  }

  int out_channels() const { return in_channels + growth; }

  TensorT<T> forward(const TensorT<T>& x, ContextT<T> ctx) {
    TensorT<T> h = ops::relu(bn1.forward(x, ctx), ctx);
    h = conv1.forward(h, ctx);
    h = ops::relu(bn2.forward(h, ctx), ctx);
    h = mode == ConvMode::kStandard ? conv3_standard.forward(h, ctx)
                                    : conv3_separable.forward(h, ctx);
    return ops::channel_concat<T>({x, h}, ctx);
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& v) {
    bn1.visit(prefix + ".bn1", v);
    conv1.visit(prefix + ".conv1", v);
    bn2.visit(prefix + ".bn2", v);
    if (mode == ConvMode::kStandard) {
      conv3_standard.visit(prefix + ".conv3", v);
    } else {
      conv3_separable.visit(prefix + ".conv3", v);
    }
  }
};

template <class T>
struct DenseBlockT {
  std::vector<DenseLayerT<T>> layers;

  DenseBlockT() = default;
  DenseBlockT(int num_layers, int in_channels, int growth, ConvMode mode, Rng& rng) {
    layers.reserve(static_cast<size_t>(num_layers));
    for (int i = 0; i < num_layers; ++i) {
      layers.emplace_back(in_channels + i * growth, growth, mode, rng);
    }
  }

  int out_channels() const {
    return layers.empty() ? 0 : layers.back().in_channels + layers.back().growth;
  }

  TensorT<T> forward(TensorT<T> x, ContextT<T> ctx) {
    for (auto& layer : layers) x = layer.forward(x, ctx);
    return x;
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& v) {
    for (size_t i = 0; i < layers.size(); ++i) {
      layers[i].visit(prefix + ".layer" + std::to_string(i + 1), v);
    }
  }
};

/// bn-relu-conv1x1 (compression, floor) then 2x2 average pool stride 2.
template <class T>
struct TransitionT {
  int in_channels = 0;
  int out_channels = 0;
  BatchNorm2dT<T> bn;
  Conv2dT<T> conv;

  TransitionT() = default;
  TransitionT(int in_channels_, double compression, Rng& rng)
      : in_channels(in_channels_),
        out_channels(static_cast<int>(compression * in_channels_)),
        bn(in_channels_) {
    if (out_channels < 1) {
      throw ConfigError("transition compression " + std::to_string(compression) +
                        " yields no output channels for C=" + std::to_string(in_channels_));
    }
    conv = Conv2dT<T>(out_channels, in_channels, 1, 1, 0, rng);
  }

  TensorT<T> forward(const TensorT<T>& x, ContextT<T> ctx) {
    TensorT<T> h = ops::relu(bn.forward(x, ctx), ctx);
    h = conv.forward(h, ctx);
    return ops::avg_pool2d(h, 2, 2, ctx);
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& v) {
    bn.visit(prefix + ".bn", v);
    conv.visit(prefix + ".conv", v);
  }
};

/// Exact count of trainable scalars reachable through a layer's visit();
/// batchnorm running statistics are excluded.
template <class T, class L>
int64_t param_count(L& layer) {
  int64_t total = 0;
  ParamVisitor<T> v = [&total](const std::string&, TensorT<T>& t, bool trainable) {
    if (trainable) total += t.size();
  };
  layer.visit("p", v);
  return total;
}

}  // namespace attcdc

#endif  // ATTCDC_LAYERS_HPP_
