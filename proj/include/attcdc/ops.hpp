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

#ifndef ATTCDC_OPS_HPP_
#define ATTCDC_OPS_HPP_

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "attcdc/gemm.hpp"
#include "attcdc/tape.hpp"
#include "attcdc/tensor.hpp"

namespace attcdc {
namespace ops {

// All primitives are pure: they allocate a fresh output and, when a tape is
// present, record a closure that adds each input's gradient contribution.
// Reductions (window sums, channel statistics, dot products) accumulate in
// double and store back to the tensor scalar type.

namespace detail {

template <class T>
inline void check_4d(const TensorT<T>& t, const char* what) {
  if (t.rank() != 4) {
    throw DimensionError(std::string(what) + " must be 4-D (N,C,H,W), got " + t.shape_string());
  }
}

inline int conv_out_extent(int in, int pad, int k, int stride, const char* what) {
  if (stride < 1) throw ConfigError(std::string(what) + ": stride must be >= 1");
  if (pad < 0) throw ConfigError(std::string(what) + ": padding must be >= 0");
  const int span = in + 2 * pad - k;
  if (span < 0) {
    throw DimensionError(std::string(what) + ": kernel extent " + std::to_string(k) +
                         " exceeds padded input extent " + std::to_string(in + 2 * pad));
  }
  return span / stride + 1;
}

// Scatters one sample into [C*Dk*Dk, Hp*Wp] patch-major form. Out-of-range
// taps are zero.
template <class T>
inline void im2col(const T* x, int C, int H, int W, int k, int stride, int pad, int Hp, int Wp,
                   T* cols) {
  const int P = Hp * Wp;
  for (int c = 0; c < C; ++c) {
    for (int kh = 0; kh < k; ++kh) {
      for (int kw = 0; kw < k; ++kw) {
        T* row = cols + (static_cast<int64_t>(c) * k * k + kh * k + kw) * P;
        for (int oy = 0; oy < Hp; ++oy) {
          const int iy = oy * stride + kh - pad;
          if (iy < 0 || iy >= H) {
            for (int ox = 0; ox < Wp; ++ox) row[oy * Wp + ox] = T(0);
            continue;
          }
          const T* src = x + (static_cast<int64_t>(c) * H + iy) * W;
          for (int ox = 0; ox < Wp; ++ox) {
            const int ix = ox * stride + kw - pad;
            row[oy * Wp + ox] = (ix < 0 || ix >= W) ? T(0) : src[ix];
          }
        }
      }
    }
  }
}

// Transpose of im2col: accumulates column gradients back onto the sample.
template <class T>
inline void col2im_add(const T* cols, int C, int H, int W, int k, int stride, int pad, int Hp,
                       int Wp, T* gx) {
  const int P = Hp * Wp;
  for (int c = 0; c < C; ++c) {
    for (int kh = 0; kh < k; ++kh) {
      for (int kw = 0; kw < k; ++kw) {
        const T* row = cols + (static_cast<int64_t>(c) * k * k + kh * k + kw) * P;
        for (int oy = 0; oy < Hp; ++oy) {
          const int iy = oy * stride + kh - pad;
          if (iy < 0 || iy >= H) continue;
          T* dst = gx + (static_cast<int64_t>(c) * H + iy) * W;
          for (int ox = 0; ox < Wp; ++ox) {
            const int ix = ox * stride + kw - pad;
            if (ix >= 0 && ix < W) dst[ix] += row[oy * Wp + ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// Standard 2-D convolution, no bias: input (N,M,H,W) * kernel (N_out,M,Dk,Dk)
/// -> (N,N_out,Hp,Wp). Zero padding, floor output extents.
template <class T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& kernel, int stride, int pad,
                  ContextT<T> ctx = {}) {
  detail::check_4d(x, "conv2d input");
  detail::check_4d(kernel, "conv2d kernel");
  if (kernel.dim(2) != kernel.dim(3)) {
    throw DimensionError("conv2d kernel must be square, got " + kernel.shape_string());
  }
  if (kernel.dim(1) != x.dim(1)) {
    throw DimensionError("conv2d kernel expects " + std::to_string(kernel.dim(1)) +
                         " input channels, input has " + std::to_string(x.dim(1)));
  }
  const int N = x.dim(0), M = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Nout = kernel.dim(0), Dk = kernel.dim(2);
  const int Hp = detail::conv_out_extent(H, pad, Dk, stride, "conv2d");
  const int Wp = detail::conv_out_extent(W, pad, Dk, stride, "conv2d");

  TensorT<T> y({N, Nout, Hp, Wp});
  const int K = M * Dk * Dk;
  const int P = Hp * Wp;
  std::vector<T> cols(static_cast<size_t>(K) * P);
  for (int n = 0; n < N; ++n) {
    detail::im2col(x.data() + static_cast<int64_t>(n) * M * H * W, M, H, W, Dk, stride, pad, Hp,
                   Wp, cols.data());
    gemm_nn(Nout, P, K, kernel.data(), cols.data(), y.data() + static_cast<int64_t>(n) * Nout * P);
  }

  if (ctx.tape) {
    ctx.tape->record(y, [x, kernel, y, stride, pad, Hp, Wp](TapeT<T>& tp) {
      const TensorT<T>* gy = tp.find_grad(y);
      if (!gy) return;
      const int N = x.dim(0), M = x.dim(1), H = x.dim(2), W = x.dim(3);
      const int Nout = kernel.dim(0), Dk = kernel.dim(2);
      const int K = M * Dk * Dk;
      const int P = Hp * Wp;
      const bool want_gx = !tp.stopped(x);
      TensorT<T>& gk = tp.grad(kernel);
      TensorT<T>* gx = want_gx ? &tp.grad(x) : nullptr;
      std::vector<T> cols(static_cast<size_t>(K) * P);
      std::vector<T> gcols;
      if (want_gx) gcols.resize(static_cast<size_t>(K) * P);
      for (int n = 0; n < N; ++n) {
        const T* gyn = gy->data() + static_cast<int64_t>(n) * Nout * P;
        detail::im2col(x.data() + static_cast<int64_t>(n) * M * H * W, M, H, W, Dk, stride, pad,
                       Hp, Wp, cols.data());
        gemm_nt(Nout, K, P, gyn, cols.data(), gk.data());
        if (want_gx) {
          std::fill(gcols.begin(), gcols.end(), T(0));
          gemm_tn(K, P, Nout, kernel.data(), gyn, gcols.data());
          detail::col2im_add(gcols.data(), M, H, W, Dk, stride, pad, Hp, Wp,
                             gx->data() + static_cast<int64_t>(n) * M * H * W);
        }
      }
    });
  }
  return y;
}

/// Depthwise convolution: one Dk x Dk filter per input channel, kernel
/// (M,1,Dk,Dk); output channel c depends only on input channel c.
template <class T>
TensorT<T> depthwise_conv2d(const TensorT<T>& x, const TensorT<T>& kernel, int stride, int pad,
                            ContextT<T> ctx = {}) {
  detail::check_4d(x, "depthwise_conv2d input");
  detail::check_4d(kernel, "depthwise_conv2d kernel");
  const int N = x.dim(0), M = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (kernel.dim(0) != M || kernel.dim(1) != 1) {
    throw DimensionError("depthwise kernel must be (" + std::to_string(M) + ",1,Dk,Dk), got " +
                         kernel.shape_string());
  }
  if (kernel.dim(2) != kernel.dim(3)) {
    throw DimensionError("depthwise kernel must be square, got " + kernel.shape_string());
  }
  const int Dk = kernel.dim(2);
  const int Hp = detail::conv_out_extent(H, pad, Dk, stride, "depthwise_conv2d");
  const int Wp = detail::conv_out_extent(W, pad, Dk, stride, "depthwise_conv2d");

  TensorT<T> y({N, M, Hp, Wp});
  MacCounter::instance().add(static_cast<uint64_t>(N) * M * Hp * Wp * Dk * Dk);
#ifdef _OPENMP
#pragma omp parallel for schedule(static) collapse(2) if (N * M > 4)
#endif
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < M; ++c) {
      const T* xc = x.data() + (static_cast<int64_t>(n) * M + c) * H * W;
      const T* kc = kernel.data() + static_cast<int64_t>(c) * Dk * Dk;
      T* yc = y.data() + (static_cast<int64_t>(n) * M + c) * Hp * Wp;
      for (int oy = 0; oy < Hp; ++oy) {
        for (int ox = 0; ox < Wp; ++ox) {
          double acc = 0.0;
          for (int kh = 0; kh < Dk; ++kh) {
            const int iy = oy * stride + kh - pad;
            if (iy < 0 || iy >= H) continue;
            for (int kw = 0; kw < Dk; ++kw) {
              const int ix = ox * stride + kw - pad;
              if (ix < 0 || ix >= W) continue;
              acc += static_cast<double>(xc[iy * W + ix]) * static_cast<double>(kc[kh * Dk + kw]);
            }
          }
          yc[oy * Wp + ox] = static_cast<T>(acc);
        }
      }
    }
  }

  if (ctx.tape) {
    ctx.tape->record(y, [x, kernel, y, stride, pad, Hp, Wp](TapeT<T>& tp) {
      const TensorT<T>* gy = tp.find_grad(y);
      if (!gy) return;
      const int N = x.dim(0), M = x.dim(1), H = x.dim(2), W = x.dim(3);
      const int Dk = kernel.dim(2);
      const bool want_gx = !tp.stopped(x);
      TensorT<T>& gk = tp.grad(kernel);
      TensorT<T>* gx = want_gx ? &tp.grad(x) : nullptr;
      for (int n = 0; n < N; ++n) {
        for (int c = 0; c < M; ++c) {
          const T* xc = x.data() + (static_cast<int64_t>(n) * M + c) * H * W;
          const T* kc = kernel.data() + static_cast<int64_t>(c) * Dk * Dk;
          const T* gyc = gy->data() + (static_cast<int64_t>(n) * M + c) * Hp * Wp;
          T* gkc = gk.data() + static_cast<int64_t>(c) * Dk * Dk;
          T* gxc = want_gx ? gx->data() + (static_cast<int64_t>(n) * M + c) * H * W : nullptr;
          for (int oy = 0; oy < Hp; ++oy) {
            for (int ox = 0; ox < Wp; ++ox) {
              const T g = gyc[oy * Wp + ox];
              if (g == T(0)) continue;
              for (int kh = 0; kh < Dk; ++kh) {
                const int iy = oy * stride + kh - pad;
                if (iy < 0 || iy >= H) continue;
                for (int kw = 0; kw < Dk; ++kw) {
                  const int ix = ox * stride + kw - pad;
                  if (ix < 0 || ix >= W) continue;
                  gkc[kh * Dk + kw] += g * xc[iy * W + ix];
                  if (want_gx) gxc[iy * W + ix] += g * kc[kh * Dk + kw];
                }
              }
            }
          }
        }
      }
    });
  }
  return y;
}

/// 1x1 convolution mixing channels per pixel; the second half of a
/// depthwise-separable convolution. Shares the conv2d path exactly.
template <class T>
TensorT<T> pointwise_conv2d(const TensorT<T>& x, const TensorT<T>& kernel, ContextT<T> ctx = {}) {
  detail::check_4d(kernel, "pointwise_conv2d kernel");
  if (kernel.dim(2) != 1 || kernel.dim(3) != 1) {
    throw DimensionError("pointwise kernel must be 1x1 spatial, got " + kernel.shape_string());
  }
  return conv2d(x, kernel, 1, 0, ctx);
}

/// (N,C,H,W) -> (N,C): mean over the spatial extent of each channel.
template <class T>
TensorT<T> global_avg_pool(const TensorT<T>& x, ContextT<T> ctx = {}) {
  detail::check_4d(x, "global_avg_pool input");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int HW = H * W;
  TensorT<T> y({N, C});
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const T* xc = x.data() + (static_cast<int64_t>(n) * C + c) * HW;
      double acc = 0.0;
      for (int i = 0; i < HW; ++i) acc += static_cast<double>(xc[i]);
      y[static_cast<int64_t>(n) * C + c] = static_cast<T>(acc / HW);
    }
  }
  if (ctx.tape) {
    ctx.tape->record(y, [x, y, N, C, HW](TapeT<T>& tp) {
      const TensorT<T>* gy = tp.find_grad(y);
      if (!gy || tp.stopped(x)) return;
      TensorT<T>& gx = tp.grad(x);
      const T inv = T(1) / static_cast<T>(HW);
      for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
          const T g = (*gy)[static_cast<int64_t>(n) * C + c] * inv;
          T* gxc = gx.data() + (static_cast<int64_t>(n) * C + c) * HW;
          for (int i = 0; i < HW; ++i) gxc[i] += g;
        }
      }
    });
  }
  return y;
}

/// Non-padded average pooling with floor output extents; rows/columns that
/// do not fill a window are dropped.
template <class T>
TensorT<T> avg_pool2d(const TensorT<T>& x, int window, int stride, ContextT<T> ctx = {}) {
  detail::check_4d(x, "avg_pool2d input");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (window < 1 || stride < 1) throw ConfigError("avg_pool2d: window and stride must be >= 1");
  if (H < window || W < window) {
    throw DimensionError("avg_pool2d: input " + x.shape_string() + " smaller than window " +
                         std::to_string(window));
  }
  const int Hp = (H - window) / stride + 1;
  const int Wp = (W - window) / stride + 1;
  TensorT<T> y({N, C, Hp, Wp});
  const double inv = 1.0 / (window * window);
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const T* xc = x.data() + (static_cast<int64_t>(n) * C + c) * H * W;
      T* yc = y.data() + (static_cast<int64_t>(n) * C + c) * Hp * Wp;
      for (int oy = 0; oy < Hp; ++oy) {
        for (int ox = 0; ox < Wp; ++ox) {
          double acc = 0.0;
          for (int kh = 0; kh < window; ++kh) {
            for (int kw = 0; kw < window; ++kw) {
              acc += static_cast<double>(xc[(oy * stride + kh) * W + ox * stride + kw]);
            }
          }
          yc[oy * Wp + ox] = static_cast<T>(acc * inv);
        }
      }
    }
  }
  if (ctx.tape) {
    ctx.tape->record(y, [x, y, window, stride, Hp, Wp](TapeT<T>& tp) {
      const TensorT<T>* gy = tp.find_grad(y);
      if (!gy || tp.stopped(x)) return;
      const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
      TensorT<T>& gx = tp.grad(x);
      const T inv = T(1) / static_cast<T>(window * window);
      for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
          const T* gyc = gy->data() + (static_cast<int64_t>(n) * C + c) * Hp * Wp;
          T* gxc = gx.data() + (static_cast<int64_t>(n) * C + c) * H * W;
          for (int oy = 0; oy < Hp; ++oy) {
            for (int ox = 0; ox < Wp; ++ox) {
              const T g = gyc[oy * Wp + ox] * inv;
              for (int kh = 0; kh < window; ++kh) {
                for (int kw = 0; kw < window; ++kw) {
                  gxc[(oy * stride + kh) * W + ox * stride + kw] += g;
                }
              }
            }
          }
        }
      }
    });
  }
  return y;
}

/// Zero-padded max pooling; ties resolve to the first element in scan order.
template <class T>
TensorT<T> max_pool2d(const TensorT<T>& x, int window, int stride, int pad, ContextT<T> ctx = {}) {
  detail::check_4d(x, "max_pool2d input");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Hp = detail::conv_out_extent(H, pad, window, stride, "max_pool2d");
  const int Wp = detail::conv_out_extent(W, pad, window, stride, "max_pool2d");
  TensorT<T> y({N, C, Hp, Wp});
  auto argmax = std::make_shared<std::vector<int>>(static_cast<size_t>(y.size()));
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const T* xc = x.data() + (static_cast<int64_t>(n) * C + c) * H * W;
      T* yc = y.data() + (static_cast<int64_t>(n) * C + c) * Hp * Wp;
      int* am = argmax->data() + (static_cast<int64_t>(n) * C + c) * Hp * Wp;
      for (int oy = 0; oy < Hp; ++oy) {
        for (int ox = 0; ox < Wp; ++ox) {
          T best = T(0);
          int best_idx = -1;
          for (int kh = 0; kh < window; ++kh) {
            const int iy = oy * stride + kh - pad;
            if (iy < 0 || iy >= H) continue;
            for (int kw = 0; kw < window; ++kw) {
              const int ix = ox * stride + kw - pad;
              if (ix < 0 || ix >= W) continue;
              const T v = xc[iy * W + ix];
              if (best_idx < 0 || v > best) {
                best = v;
                best_idx = iy * W + ix;
              }
            }
          }
          yc[oy * Wp + ox] = best;
          am[oy * Wp + ox] = best_idx;
        }
      }
    }
  }
  if (ctx.tape) {
    ctx.tape->record(y, [x, y, argmax, Hp, Wp](TapeT<T>& tp) {
      const TensorT<T>* gy = tp.find_grad(y);
      if (!gy || tp.stopped(x)) return;
      const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
      TensorT<T>& gx = tp.grad(x);
      const int P = Hp * Wp;
      for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
          const int64_t base = (static_cast<int64_t>(n) * C + c);
          const T* gyc = gy->data() + base * P;
          const int* am = argmax->data() + base * P;
          T* gxc = gx.data() + base * H * W;
          for (int i = 0; i < P; ++i) {
            if (am[i] >= 0) gxc[am[i]] += gyc[i];
          }
        }
      }
    });
  }
  return y;
}

template <class T>
TensorT<T> relu(const TensorT<T>& x, ContextT<T> ctx = {}) {
  TensorT<T> y(x.shape());
  const int64_t n = x.size();
  for (int64_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
  if (ctx.tape) {
    ctx.tape->record(y, [x, y, n](TapeT<T>& tp) {
      const TensorT<T>* gy = tp.find_grad(y);
      if (!gy || tp.stopped(x)) return;
      TensorT<T>& gx = tp.grad(x);
      for (int64_t i = 0; i < n; ++i) {
        if (x[i] > T(0)) gx[i] += (*gy)[i];
      }
    });
  }
  return y;
}

template <class T>
TensorT<T> sigmoid(const TensorT<T>& x, ContextT<T> ctx = {}) {
  TensorT<T> y(x.shape());
  const int64_t n = x.size();
  for (int64_t i = 0; i < n; ++i) {
    const double v = static_cast<double>(x[i]);
    y[i] = static_cast<T>(v >= 0 ? 1.0 / (1.0 + std::exp(-v))
                                 : std::exp(v) / (1.0 + std::exp(v)));
  }
  if (ctx.tape) {
    ctx.tape->record(y, [x, y, n](TapeT<T>& tp) {
      const TensorT<T>* gy = tp.find_grad(y);
      if (!gy || tp.stopped(x)) return;
      TensorT<T>& gx = tp.grad(x);
      for (int64_t i = 0; i < n; ++i) gx[i] += (*gy)[i] * y[i] * (T(1) - y[i]);
    });
  }
  return y;
}

/// Softmax over the last dimension, max-subtracted for stability.
template <class T>
TensorT<T> softmax(const TensorT<T>& x, ContextT<T> ctx = {}) {
  const int K = x.dim(x.rank() - 1);
  const int64_t rows = x.size() / K;
  TensorT<T> y(x.shape());
  for (int64_t r = 0; r < rows; ++r) {
    const T* xr = x.data() + r * K;
    T* yr = y.data() + r * K;
    double mx = static_cast<double>(xr[0]);
    for (int k = 1; k < K; ++k) mx = std::max(mx, static_cast<double>(xr[k]));
    double sum = 0.0;
    for (int k = 0; k < K; ++k) sum += std::exp(static_cast<double>(xr[k]) - mx);
    for (int k = 0; k < K; ++k) {
      yr[k] = static_cast<T>(std::exp(static_cast<double>(xr[k]) - mx) / sum);
    }
  }
  if (ctx.tape) {
    ctx.tape->record(y, [x, y, rows, K](TapeT<T>& tp) {
      const TensorT<T>* gy = tp.find_grad(y);
      if (!gy || tp.stopped(x)) return;
      TensorT<T>& gx = tp.grad(x);
      for (int64_t r = 0; r < rows; ++r) {
        const T* yr = y.data() + r * K;
        const T* gr = gy->data() + r * K;
        double dot = 0.0;
        for (int k = 0; k < K; ++k) dot += static_cast<double>(gr[k]) * static_cast<double>(yr[k]);
        T* gxr = gx.data() + r * K;
        for (int k = 0; k < K; ++k) {
          gxr[k] += static_cast<T>(static_cast<double>(yr[k]) *
                                   (static_cast<double>(gr[k]) - dot));
        }
      }
    });
  }
  return y;
}

template <class T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b, ContextT<T> ctx = {}) {
  if (!a.same_shape(b)) {
    throw DimensionError("add: shapes differ, " + a.shape_string() + " vs " + b.shape_string());
  }
  TensorT<T> y(a.shape());
  const int64_t n = a.size();
  for (int64_t i = 0; i < n; ++i) y[i] = a[i] + b[i];
  if (ctx.tape) {
    ctx.tape->record(y, [a, b, y, n](TapeT<T>& tp) {
      const TensorT<T>* gy = tp.find_grad(y);
      if (!gy) return;
      if (!tp.stopped(a)) {
        TensorT<T>& ga = tp.grad(a);
        for (int64_t i = 0; i < n; ++i) ga[i] += (*gy)[i];
      }
      if (!tp.stopped(b)) {
        TensorT<T>& gb = tp.grad(b);
        for (int64_t i = 0; i < n; ++i) gb[i] += (*gy)[i];
      }
    });
  }
  return y;
}

template <class T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b, ContextT<T> ctx = {}) {
  if (!a.same_shape(b)) {
    throw DimensionError("mul: shapes differ, " + a.shape_string() + " vs " + b.shape_string());
  }
  TensorT<T> y(a.shape());
  const int64_t n = a.size();
  for (int64_t i = 0; i < n; ++i) y[i] = a[i] * b[i];
  if (ctx.tape) {
    ctx.tape->record(y, [a, b, y, n](TapeT<T>& tp) {
      const TensorT<T>* gy = tp.find_grad(y);
      if (!gy) return;
      if (!tp.stopped(a)) {
        TensorT<T>& ga = tp.grad(a);
        for (int64_t i = 0; i < n; ++i) ga[i] += (*gy)[i] * b[i];
      }
      if (!tp.stopped(b)) {
        TensorT<T>& gb = tp.grad(b);
        for (int64_t i = 0; i < n; ++i) gb[i] += (*gy)[i] * a[i];
      }
    });
  }
  return y;
}

/// Rescales every channel of a feature map by a per-(sample, channel)
/// score: y[n,c,h,w] = x[n,c,h,w] * s[n,c].
template <class T>
TensorT<T> broadcast_mul(const TensorT<T>& x, const TensorT<T>& s, ContextT<T> ctx = {}) {
  detail::check_4d(x, "broadcast_mul input");
  if (s.rank() != 2 || s.dim(0) != x.dim(0) || s.dim(1) != x.dim(1)) {
    throw DimensionError("broadcast_mul: scores " + s.shape_string() + " do not match map " +
                         x.shape_string());
  }
  const int N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  TensorT<T> y(x.shape());
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const T sc = s[static_cast<int64_t>(n) * C + c];
      const T* xc = x.data() + (static_cast<int64_t>(n) * C + c) * HW;
      T* yc = y.data() + (static_cast<int64_t>(n) * C + c) * HW;
      for (int i = 0; i < HW; ++i) yc[i] = xc[i] * sc;
    }
  }
  if (ctx.tape) {
    ctx.tape->record(y, [x, s, y, N, C, HW](TapeT<T>& tp) {
      const TensorT<T>* gy = tp.find_grad(y);
      if (!gy) return;
      const bool want_gx = !tp.stopped(x);
      const bool want_gs = !tp.stopped(s);
      TensorT<T>* gx = want_gx ? &tp.grad(x) : nullptr;
      TensorT<T>* gs = want_gs ? &tp.grad(s) : nullptr;
      for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
          const int64_t base = (static_cast<int64_t>(n) * C + c) * HW;
          const T sc = s[static_cast<int64_t>(n) * C + c];
          double acc = 0.0;
          for (int i = 0; i < HW; ++i) {
            const T g = (*gy)[base + i];
            if (want_gx) (*gx)[base + i] += g * sc;
            acc += static_cast<double>(g) * static_cast<double>(x[base + i]);
          }
          if (want_gs) (*gs)[static_cast<int64_t>(n) * C + c] += static_cast<T>(acc);
        }
      }
    });
  }
  return y;
}

/// Fully connected map: x (N,in) * weight (out,in)^T + bias (out).
/// Pass an undefined bias tensor for a bias-free map.
template <class T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& weight, const TensorT<T>& bias,
                  ContextT<T> ctx = {}) {
  if (x.rank() != 2 || weight.rank() != 2 || x.dim(1) != weight.dim(1)) {
    throw DimensionError("linear: input " + x.shape_string() + " incompatible with weight " +
                         weight.shape_string());
  }
  const int N = x.dim(0), in = x.dim(1), out = weight.dim(0);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out)) {
    throw DimensionError("linear: bias " + bias.shape_string() + " must be [" +
                         std::to_string(out) + "]");
  }
  TensorT<T> y({N, out});
  gemm_nt(N, out, in, x.data(), weight.data(), y.data());
  if (bias.defined()) {
    for (int n = 0; n < N; ++n) {
      for (int o = 0; o < out; ++o) y[static_cast<int64_t>(n) * out + o] += bias[o];
    }
  }
  if (ctx.tape) {
    ctx.tape->record(y, [x, weight, bias, y, N, in, out](TapeT<T>& tp) {
      const TensorT<T>* gy = tp.find_grad(y);
      if (!gy) return;
      if (!tp.stopped(x)) {
        gemm_nn(N, in, out, gy->data(), weight.data(), tp.grad(x).data());
      }
      gemm_tn(out, in, N, gy->data(), x.data(), tp.grad(weight).data());
      if (bias.defined()) {
        TensorT<T>& gb = tp.grad(bias);
        for (int o = 0; o < out; ++o) {
          double acc = 0.0;
          for (int n = 0; n < N; ++n) acc += static_cast<double>((*gy)[static_cast<int64_t>(n) * out + o]);
          gb[o] += static_cast<T>(acc);
        }
      }
    });
  }
  return y;
}

/// Stacks feature maps along the channel axis.
template <class T>
TensorT<T> channel_concat(const std::vector<TensorT<T>>& parts, ContextT<T> ctx = {}) {
  if (parts.empty()) throw ContractError("channel_concat: no inputs");
  const int N = parts[0].dim(0), H = parts[0].dim(2), W = parts[0].dim(3);
  int C = 0;
  for (const auto& p : parts) {
    detail::check_4d(p, "channel_concat input");
    if (p.dim(0) != N || p.dim(2) != H || p.dim(3) != W) {
      throw DimensionError("channel_concat: mismatched shape " + p.shape_string());
    }
    C += p.dim(1);
  }
  TensorT<T> y({N, C, H, W});
  const int HW = H * W;
  for (int n = 0; n < N; ++n) {
    int c0 = 0;
    for (const auto& p : parts) {
      const int pc = p.dim(1);
      std::copy(p.data() + static_cast<int64_t>(n) * pc * HW,
                p.data() + static_cast<int64_t>(n + 1) * pc * HW,
                y.data() + (static_cast<int64_t>(n) * C + c0) * HW);
      c0 += pc;
    }
  }
  if (ctx.tape) {
    ctx.tape->record(y, [parts, y, N, C, HW](TapeT<T>& tp) {
      const TensorT<T>* gy = tp.find_grad(y);
      if (!gy) return;
      for (int n = 0; n < N; ++n) {
        int c0 = 0;
        for (const auto& p : parts) {
          const int pc = p.dim(1);
          if (!tp.stopped(p)) {
            TensorT<T>& gp = tp.grad(p);
            const T* src = gy->data() + (static_cast<int64_t>(n) * C + c0) * HW;
            T* dst = gp.data() + static_cast<int64_t>(n) * pc * HW;
            for (int64_t i = 0; i < static_cast<int64_t>(pc) * HW; ++i) dst[i] += src[i];
          }
          c0 += pc;
        }
      }
    });
  }
  return y;
}

/// Channel slice [c0, c1); plain view-copy utility, not differentiable.
template <class T>
TensorT<T> slice_channels(const TensorT<T>& x, int c0, int c1) {
  detail::check_4d(x, "slice_channels input");
  const int N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (c0 < 0 || c1 > C || c0 >= c1) {
    throw DimensionError("slice_channels: invalid range [" + std::to_string(c0) + "," +
                         std::to_string(c1) + ") for C=" + std::to_string(C));
  }
  TensorT<T> y({N, c1 - c0, x.dim(2), x.dim(3)});
  for (int n = 0; n < N; ++n) {
    std::copy(x.data() + (static_cast<int64_t>(n) * C + c0) * HW,
              x.data() + (static_cast<int64_t>(n) * C + c1) * HW,
              y.data() + static_cast<int64_t>(n) * (c1 - c0) * HW);
  }
  return y;
}

/// Batch normalisation over (N,H,W) per channel.
///
/// Train mode normalises by batch statistics (biased variance) and updates
/// the running estimates in place with `momentum` (running variance keeps
/// the unbiased estimate). Eval mode uses the running estimates; before any
/// batch has been seen those are the init values mean 0 / var 1.
template <class T>
TensorT<T> batchnorm2d(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                       TensorT<T>& running_mean, TensorT<T>& running_var, bool training,
                       double momentum, double eps, ContextT<T> ctx = {}) {
  detail::check_4d(x, "batchnorm2d input");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (gamma.size() != C || beta.size() != C || running_mean.size() != C ||
      running_var.size() != C) {
    throw DimensionError("batchnorm2d: parameter length does not match " + std::to_string(C) +
                         " channels");
  }
  const int64_t m = static_cast<int64_t>(N) * H * W;
  const int HW = H * W;
  TensorT<T> y(x.shape());
  TensorT<T> mean({C}), inv_std({C});

  if (training) {
    if (m < 2) {
      throw ContractError("batchnorm2d train mode needs N*H*W >= 2, got " + std::to_string(m));
    }
    for (int c = 0; c < C; ++c) {
      double sum = 0.0;
      for (int n = 0; n < N; ++n) {
        const T* xc = x.data() + (static_cast<int64_t>(n) * C + c) * HW;
        for (int i = 0; i < HW; ++i) sum += static_cast<double>(xc[i]);
      }
      const double mu = sum / static_cast<double>(m);
      double ss = 0.0;
      for (int n = 0; n < N; ++n) {
        const T* xc = x.data() + (static_cast<int64_t>(n) * C + c) * HW;
        for (int i = 0; i < HW; ++i) {
          const double d = static_cast<double>(xc[i]) - mu;
          ss += d * d;
        }
      }
      const double var = ss / static_cast<double>(m);
      mean[c] = static_cast<T>(mu);
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + eps));
      const double unbiased = ss / static_cast<double>(m - 1);
      running_mean[c] =
          static_cast<T>((1.0 - momentum) * static_cast<double>(running_mean[c]) + momentum * mu);
      running_var[c] = static_cast<T>((1.0 - momentum) * static_cast<double>(running_var[c]) +
                                      momentum * unbiased);
    }
  } else {
    for (int c = 0; c < C; ++c) {
      mean[c] = running_mean[c];
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var[c]) + eps));
    }
  }

  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const T* xc = x.data() + (static_cast<int64_t>(n) * C + c) * HW;
      T* yc = y.data() + (static_cast<int64_t>(n) * C + c) * HW;
      const T mu = mean[c], is = inv_std[c], g = gamma[c], b = beta[c];
      for (int i = 0; i < HW; ++i) yc[i] = (xc[i] - mu) * is * g + b;
    }
  }

  if (ctx.tape) {
    const bool train_stats = training;
    ctx.tape->record(y, [x, gamma, beta, y, mean, inv_std, train_stats, N, C, HW,
                         m](TapeT<T>& tp) {
      const TensorT<T>* gy = tp.find_grad(y);
      if (!gy) return;
      const bool want_gx = !tp.stopped(x);
      TensorT<T>& gg = tp.grad(gamma);
      TensorT<T>& gb = tp.grad(beta);
      TensorT<T>* gx = want_gx ? &tp.grad(x) : nullptr;
      for (int c = 0; c < C; ++c) {
        const T mu = mean[c], is = inv_std[c];
        double sum_gy = 0.0, sum_gy_xhat = 0.0;
        for (int n = 0; n < N; ++n) {
          const int64_t base = (static_cast<int64_t>(n) * C + c) * HW;
          for (int i = 0; i < HW; ++i) {
            const double g = static_cast<double>((*gy)[base + i]);
            const double xh = (static_cast<double>(x[base + i]) - mu) * is;
            sum_gy += g;
            sum_gy_xhat += g * xh;
          }
        }
        gg[c] += static_cast<T>(sum_gy_xhat);
        gb[c] += static_cast<T>(sum_gy);
        if (!want_gx) continue;
        const double gam = static_cast<double>(gamma[c]);
        if (train_stats) {
          const double k = gam * is / static_cast<double>(m);
          for (int n = 0; n < N; ++n) {
            const int64_t base = (static_cast<int64_t>(n) * C + c) * HW;
            for (int i = 0; i < HW; ++i) {
              const double g = static_cast<double>((*gy)[base + i]);
              const double xh = (static_cast<double>(x[base + i]) - mu) * is;
              (*gx)[base + i] +=
                  static_cast<T>(k * (static_cast<double>(m) * g - sum_gy - xh * sum_gy_xhat));
            }
          }
        } else {
          const double k = gam * is;
          for (int n = 0; n < N; ++n) {
            const int64_t base = (static_cast<int64_t>(n) * C + c) * HW;
            for (int i = 0; i < HW; ++i) {
              (*gx)[base + i] += static_cast<T>(k * static_cast<double>((*gy)[base + i]));
            }
          }
        }
      }
    });
  }
  return y;
}

/// Sum of all elements -> scalar tensor [1].
template <class T>
TensorT<T> reduce_sum(const TensorT<T>& x, ContextT<T> ctx = {}) {
  TensorT<T> y({1});
  double acc = 0.0;
  const int64_t n = x.size();
  for (int64_t i = 0; i < n; ++i) acc += static_cast<double>(x[i]);
  y[0] = static_cast<T>(acc);
  if (ctx.tape) {
    ctx.tape->record(y, [x, y, n](TapeT<T>& tp) {
      const TensorT<T>* gy = tp.find_grad(y);
      if (!gy || tp.stopped(x)) return;
      TensorT<T>& gx = tp.grad(x);
      const T g = (*gy)[0];
      for (int64_t i = 0; i < n; ++i) gx[i] += g;
    });
  }
  return y;
}

/// Mean of all elements -> scalar tensor [1].
template <class T>
TensorT<T> reduce_mean(const TensorT<T>& x, ContextT<T> ctx = {}) {
  TensorT<T> y({1});
  double acc = 0.0;
  const int64_t n = x.size();
  for (int64_t i = 0; i < n; ++i) acc += static_cast<double>(x[i]);
  y[0] = static_cast<T>(acc / static_cast<double>(n));
  if (ctx.tape) {
    ctx.tape->record(y, [x, y, n](TapeT<T>& tp) {
      const TensorT<T>* gy = tp.find_grad(y);
      if (!gy || tp.stopped(x)) return;
      TensorT<T>& gx = tp.grad(x);
      const T g = (*gy)[0] / static_cast<T>(n);
      for (int64_t i = 0; i < n; ++i) gx[i] += g;
    });
  }
  return y;
}

/// Extracts one element as a scalar tensor [1] (e.g. a single class logit).
template <class T>
TensorT<T> select_element(const TensorT<T>& x, int64_t flat_index, ContextT<T> ctx = {}) {
  if (flat_index < 0 || flat_index >= x.size()) {
    throw ContractError("select_element: index " + std::to_string(flat_index) +
                        " out of range for " + std::to_string(x.size()) + " elements");
  }
  TensorT<T> y({1});
  y[0] = x[flat_index];
  if (ctx.tape) {
    ctx.tape->record(y, [x, y, flat_index](TapeT<T>& tp) {
      const TensorT<T>* gy = tp.find_grad(y);
      if (!gy || tp.stopped(x)) return;
      tp.grad(x)[flat_index] += (*gy)[0];
    });
  }
  return y;
}

}  // namespace ops
}  // namespace attcdc

#endif  // ATTCDC_OPS_HPP_
