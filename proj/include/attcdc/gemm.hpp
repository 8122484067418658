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

#ifndef ATTCDC_GEMM_HPP_
#define ATTCDC_GEMM_HPP_

#include <atomic>
#include <cstdint>
#include <vector>

namespace attcdc {

/// Process-wide multiply-accumulate counter, fed by the convolution and
/// matmul kernels with the work they actually execute. Off by default.
class MacCounter {
 public:
  static MacCounter& instance() {
    static MacCounter c;
    return c;
  }
  void enable(bool on) { enabled_.store(on, std::memory_order_relaxed); }
  bool enabled() const { return enabled_.load(std::memory_order_relaxed); }
  void reset() { count_.store(0, std::memory_order_relaxed); }
  uint64_t count() const { return count_.load(std::memory_order_relaxed); }
  void add(uint64_t n) {
    if (enabled()) count_.fetch_add(n, std::memory_order_relaxed);
  }

 private:
  MacCounter() = default;
  std::atomic<bool> enabled_{false};
  std::atomic<uint64_t> count_{0};
};

namespace detail {

// Blocked row-major core: C(MxN) += Ad(MxK) * Bd(KxN), operands already
// widened to double. Each output element is one reduction over k in
// ascending order, so results are bitwise reproducible for any thread
// count and identical across the nn/nt/tn entry points.
template <class T>
inline void gemm_core(int M, int N, int K, const double* Ad, const double* Bd, T* C) {
  const int nblocks = (M + 3) / 4;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (static_cast<int64_t>(M) * N * K > (1 << 20))
#endif
  for (int blk = 0; blk < nblocks; ++blk) {
    const int i = blk * 4;
    const int rows = (M - i) < 4 ? (M - i) : 4;
    std::vector<double> acc(static_cast<size_t>(4) * N, 0.0);
    if (rows == 4) {
      const double* a0 = Ad + static_cast<int64_t>(i) * K;
      const double* a1 = a0 + K;
      const double* a2 = a1 + K;
      const double* a3 = a2 + K;
      double* c0 = acc.data();
      double* c1 = c0 + N;
      double* c2 = c1 + N;
      double* c3 = c2 + N;
      for (int k = 0; k < K; ++k) {
        const double v0 = a0[k], v1 = a1[k], v2 = a2[k], v3 = a3[k];
        const double* brow = Bd + static_cast<int64_t>(k) * N;
        for (int j = 0; j < N; ++j) {
          const double b = brow[j];
          c0[j] += v0 * b;
          c1[j] += v1 * b;
          c2[j] += v2 * b;
          c3[j] += v3 * b;
        }
      }
    } else {
      for (int r = 0; r < rows; ++r) {
        const double* arow = Ad + static_cast<int64_t>(i + r) * K;
        double* crow = acc.data() + static_cast<size_t>(r) * N;
        for (int k = 0; k < K; ++k) {
          const double a = arow[k];
          const double* brow = Bd + static_cast<int64_t>(k) * N;
          for (int j = 0; j < N; ++j) crow[j] += a * brow[j];
        }
      }
    }
    for (int r = 0; r < rows; ++r) {
      T* crow = C + static_cast<int64_t>(i + r) * N;
      const double* arow = acc.data() + static_cast<size_t>(r) * N;
      for (int j = 0; j < N; ++j) crow[j] += static_cast<T>(arow[j]);
    }
  }
}

inline std::vector<double>& gemm_scratch_a() {
  static thread_local std::vector<double> buf;
  return buf;
}
inline std::vector<double>& gemm_scratch_b() {
  static thread_local std::vector<double> buf;
  return buf;
}

template <class T>
inline const double* widen(const T* src, int64_t n, std::vector<double>& buf) {
  if (static_cast<int64_t>(buf.size()) < n) buf.resize(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) buf[static_cast<size_t>(i)] = static_cast<double>(src[i]);
  return buf.data();
}

// rows x cols source, written transposed as cols x rows.
template <class T>
inline const double* widen_transposed(const T* src, int rows, int cols,
                                      std::vector<double>& buf) {
  const int64_t n = static_cast<int64_t>(rows) * cols;
  if (static_cast<int64_t>(buf.size()) < n) buf.resize(static_cast<size_t>(n));
  for (int r = 0; r < rows; ++r) {
    const T* s = src + static_cast<int64_t>(r) * cols;
    for (int c = 0; c < cols; ++c) {
      buf[static_cast<size_t>(c) * rows + r] = static_cast<double>(s[c]);
    }
  }
  return buf.data();
}

}  // namespace detail

/// C(MxN) += A(MxK) * B(KxN)
template <class T>
inline void gemm_nn(int M, int N, int K, const T* A, const T* B, T* C) {
  MacCounter::instance().add(static_cast<uint64_t>(M) * N * K);
  const double* Ad = detail::widen(A, static_cast<int64_t>(M) * K, detail::gemm_scratch_a());
  const double* Bd = detail::widen(B, static_cast<int64_t>(K) * N, detail::gemm_scratch_b());
  detail::gemm_core(M, N, K, Ad, Bd, C);
}

/// C(MxN) += A(MxK) * B(NxK)^T
template <class T>
inline void gemm_nt(int M, int N, int K, const T* A, const T* B, T* C) {
  MacCounter::instance().add(static_cast<uint64_t>(M) * N * K);
  const double* Ad = detail::widen(A, static_cast<int64_t>(M) * K, detail::gemm_scratch_a());
  const double* Bd = detail::widen_transposed(B, N, K, detail::gemm_scratch_b());
  detail::gemm_core(M, N, K, Ad, Bd, C);
}

/// C(MxN) += A(KxM)^T * B(KxN)
template <class T>
inline void gemm_tn(int M, int N, int K, const T* A, const T* B, T* C) {
  MacCounter::instance().add(static_cast<uint64_t>(M) * N * K);
  const double* Ad = detail::widen_transposed(A, K, M, detail::gemm_scratch_a());
  const double* Bd = detail::widen(B, static_cast<int64_t>(K) * N, detail::gemm_scratch_b());
  detail::gemm_core(M, N, K, Ad, Bd, C);
}

}  // namespace attcdc

#endif  // ATTCDC_GEMM_HPP_
