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

#ifndef ATTCDC_LOSS_HPP_
#define ATTCDC_LOSS_HPP_

#include <cmath>
#include <string>
#include <vector>

#include "attcdc/tape.hpp"
#include "attcdc/tensor.hpp"

namespace attcdc {

/// Focal loss settings. gamma = 0 with unit alpha degenerates to plain
/// cross-entropy. An empty alpha vector means every class weighs 1; the
/// helper builds normalised inverse-frequency weights for imbalanced sets.
struct FocalLossConfig {
  double gamma = 2.0;
  std::vector<double> alpha;  // per-class; empty = all ones

  void validate(int num_classes) const {
    if (gamma < 0.0) throw ConfigError("focal loss: gamma must be >= 0");
    if (!alpha.empty() && static_cast<int>(alpha.size()) != num_classes) {
      throw ConfigError("focal loss: alpha has " + std::to_string(alpha.size()) +
                        " entries for " + std::to_string(num_classes) + " classes");
    }
    for (double a : alpha) {
      if (a <= 0.0) throw ConfigError("focal loss: alpha entries must be > 0");
    }
  }

  /// alpha_c proportional to 1/count_c, scaled to mean 1.
  static std::vector<double> inverse_frequency(const std::vector<int64_t>& class_counts) {
    std::vector<double> a(class_counts.size());
    double sum = 0.0;
    for (size_t c = 0; c < class_counts.size(); ++c) {
      if (class_counts[c] < 1) throw ConfigError("focal loss: class " + std::to_string(c) +
                                                 " has no samples");
      a[c] = 1.0 / static_cast<double>(class_counts[c]);
      sum += a[c];
    }
    for (double& v : a) v *= static_cast<double>(a.size()) / sum;
    return a;
  }
};

namespace detail {

template <class T>
std::vector<double> softmax_row(const TensorT<T>& logits, int64_t row, int K) {
  std::vector<double> p(static_cast<size_t>(K));
  const T* z = logits.data() + row * K;
  double mx = static_cast<double>(z[0]);
  for (int k = 1; k < K; ++k) mx = std::max(mx, static_cast<double>(z[k]));
  double sum = 0.0;
  for (int k = 0; k < K; ++k) {
    p[static_cast<size_t>(k)] = std::exp(static_cast<double>(z[k]) - mx);
    sum += p[static_cast<size_t>(k)];
  }
  for (int k = 0; k < K; ++k) p[static_cast<size_t>(k)] /= sum;
  return p;
}

template <class T>
void check_loss_args(const TensorT<T>& logits, const std::vector<int>& targets) {
  if (logits.rank() != 2) {
    throw DimensionError("loss expects (N,K) logits, got " + logits.shape_string());
  }
  if (targets.empty()) throw ContractError("loss: empty batch");
  if (static_cast<int>(targets.size()) != logits.dim(0)) {
    throw DimensionError("loss: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(logits.dim(0)) + " logit rows");
  }
  const int K = logits.dim(1);
  for (int t : targets) {
    if (t < 0 || t >= K) {
      throw ContractError("loss: target " + std::to_string(t) + " outside [0," +
                          std::to_string(K) + ")");
    }
  }
}

}  // namespace detail

/// Mean over the batch of -alpha[y] * (1 - p_y)^gamma * log(p_y) with
/// p = softmax(logits). Down-weights well-classified samples so that the
/// rare classes keep contributing gradient.
template <class T>
TensorT<T> focal_loss(const TensorT<T>& logits, const std::vector<int>& targets,
                      const FocalLossConfig& cfg, ContextT<T> ctx = {}) {
  detail::check_loss_args(logits, targets);
  const int N = logits.dim(0), K = logits.dim(1);
  cfg.validate(K);
  const double gamma = cfg.gamma;
  auto alpha_of = [&cfg](int y) { return cfg.alpha.empty() ? 1.0 : cfg.alpha[static_cast<size_t>(y)]; };

  // Per-sample probabilities are kept for the backward pass.
  TensorT<T> probs({N, K});
  double loss_acc = 0.0;
  for (int n = 0; n < N; ++n) {
    std::vector<double> p = detail::softmax_row(logits, n, K);
    for (int k = 0; k < K; ++k) probs[static_cast<int64_t>(n) * K + k] = static_cast<T>(p[static_cast<size_t>(k)]);
    const double u = p[static_cast<size_t>(targets[static_cast<size_t>(n)])];
    const double focus = std::pow(std::max(0.0, 1.0 - u), gamma);
    loss_acc += -alpha_of(targets[static_cast<size_t>(n)]) * focus *
                std::log(std::max(u, 1e-12));
  }
  TensorT<T> loss({1});
  loss[0] = static_cast<T>(loss_acc / N);

  if (ctx.tape) {
    ctx.tape->record(loss, [logits, loss, probs, targets, gamma, cfg, N, K](TapeT<T>& tp) {
      const TensorT<T>* gl = tp.find_grad(loss);
      if (!gl || tp.stopped(logits)) return;
      TensorT<T>& gx = tp.grad(logits);
      const double scale = static_cast<double>((*gl)[0]) / N;
      for (int n = 0; n < N; ++n) {
        const int y = targets[static_cast<size_t>(n)];
        const double alpha = cfg.alpha.empty() ? 1.0 : cfg.alpha[static_cast<size_t>(y)];
        const double u =
            std::max(static_cast<double>(probs[static_cast<int64_t>(n) * K + y]), 1e-12);
        const double one_minus = std::max(0.0, 1.0 - u);
        // w = u * dL/du = alpha * (gamma*u*(1-u)^(gamma-1)*ln u - (1-u)^gamma)
        double t1 = 0.0;
        if (gamma > 0.0 && one_minus > 1e-12) {
          t1 = gamma * u * std::pow(one_minus, gamma - 1.0) * std::log(u);
        }
        const double t2 = std::pow(one_minus, gamma);
        const double w = alpha * (t1 - t2);
        for (int k = 0; k < K; ++k) {
          const double pk = static_cast<double>(probs[static_cast<int64_t>(n) * K + k]);
          const double delta = (k == y) ? 1.0 : 0.0;
          gx[static_cast<int64_t>(n) * K + k] += static_cast<T>(scale * w * (delta - pk));
        }
      }
    });
  }
  return loss;
}

/// Mean of -log softmax at the target class, max-subtracted.
template <class T>
TensorT<T> cross_entropy(const TensorT<T>& logits, const std::vector<int>& targets,
                         ContextT<T> ctx = {}) {
  detail::check_loss_args(logits, targets);
  const int N = logits.dim(0), K = logits.dim(1);
  TensorT<T> probs({N, K});
  double loss_acc = 0.0;
  for (int n = 0; n < N; ++n) {
    const T* z = logits.data() + static_cast<int64_t>(n) * K;
    double mx = static_cast<double>(z[0]);
    for (int k = 1; k < K; ++k) mx = std::max(mx, static_cast<double>(z[k]));
    double sum = 0.0;
    for (int k = 0; k < K; ++k) sum += std::exp(static_cast<double>(z[k]) - mx);
    const double log_sum = std::log(sum);
    for (int k = 0; k < K; ++k) {
      probs[static_cast<int64_t>(n) * K + k] =
          static_cast<T>(std::exp(static_cast<double>(z[k]) - mx) / sum);
    }
    const int y = targets[static_cast<size_t>(n)];
    loss_acc += -(static_cast<double>(z[y]) - mx - log_sum);
  }
  TensorT<T> loss({1});
  loss[0] = static_cast<T>(loss_acc / N);

  if (ctx.tape) {
    ctx.tape->record(loss, [logits, loss, probs, targets, N, K](TapeT<T>& tp) {
      const TensorT<T>* gl = tp.find_grad(loss);
      if (!gl || tp.stopped(logits)) return;
      TensorT<T>& gx = tp.grad(logits);
      const double scale = static_cast<double>((*gl)[0]) / N;
      for (int n = 0; n < N; ++n) {
        const int y = targets[static_cast<size_t>(n)];
        for (int k = 0; k < K; ++k) {
          const double pk = static_cast<double>(probs[static_cast<int64_t>(n) * K + k]);
          const double delta = (k == y) ? 1.0 : 0.0;
          gx[static_cast<int64_t>(n) * K + k] += static_cast<T>(scale * (pk - delta));
        }
      }
    });
  }
  return loss;
}

}  // namespace attcdc

#endif  // ATTCDC_LOSS_HPP_
