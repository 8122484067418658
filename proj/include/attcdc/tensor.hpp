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

#ifndef ATTCDC_TENSOR_HPP_
#define ATTCDC_TENSOR_HPP_

#include <cstdint>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "attcdc/error.hpp"
#include "attcdc/random.hpp"

namespace attcdc {

/// Dense n-dimensional array with contiguous row-major storage.
///
/// Copies are shallow: the buffer is shared and, by library convention,
/// never mutated once an operation has produced the tensor. Image batches
/// use the (N, C, H, W) layout. The buffer address doubles as the tensor's
/// identity for gradient bookkeeping.
template <class T>
class TensorT {
 public:
  TensorT() = default;

  explicit TensorT(std::vector<int> shape) {
    init_shape(std::move(shape));
    data_ = std::make_shared<std::vector<T>>(static_cast<size_t>(size_), T(0));
  }

  static TensorT zeros(std::vector<int> shape) { return TensorT(std::move(shape)); }

  static TensorT full(std::vector<int> shape, T value) {
    TensorT t(std::move(shape));
    for (auto& v : *t.data_) v = value;
    return t;
  }

  static TensorT ones(std::vector<int> shape) { return full(std::move(shape), T(1)); }

  static TensorT from_data(std::vector<int> shape, std::vector<T> values) {
    TensorT t;
    t.init_shape(std::move(shape));
    if (static_cast<int64_t>(values.size()) != t.size_) {
      throw DimensionError("tensor data length " + std::to_string(values.size()) +
                           " does not match shape " + t.shape_string());
    }
    t.data_ = std::make_shared<std::vector<T>>(std::move(values));
    return t;
  }

  /// Kaiming-style fan-in init: N(0, sqrt(2 / fan_in)).
  static TensorT kaiming(std::vector<int> shape, int fan_in, Rng& rng) {
    TensorT t(std::move(shape));
    const double scale = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& v : *t.data_) v = static_cast<T>(rng.normal() * scale);
    return t;
  }

  static TensorT uniform(std::vector<int> shape, double lo, double hi, Rng& rng) {
    TensorT t(std::move(shape));
    for (auto& v : *t.data_) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
  }

  bool defined() const { return static_cast<bool>(data_); }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t size() const { return size_; }
  const std::vector<int>& shape() const { return shape_; }

  int dim(int i) const {
    if (i < 0 || i >= rank()) {
      throw DimensionError("dim index " + std::to_string(i) + " out of range for rank " +
                           std::to_string(rank()));
    }
    return shape_[static_cast<size_t>(i)];
  }

  T* data() { return data_->data(); }
  const T* data() const { return data_->data(); }

  T& operator[](int64_t i) { return (*data_)[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return (*data_)[static_cast<size_t>(i)]; }

  /// Buffer identity; stable for the lifetime of any copy of this tensor.
  const void* id() const { return static_cast<const void*>(data_->data()); }

  bool same_shape(const TensorT& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (const T& v : *data_) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  /// Deep copy with a fresh buffer (and fresh identity).
  TensorT clone() const {
    TensorT t;
    t.shape_ = shape_;
    t.size_ = size_;
    t.data_ = std::make_shared<std::vector<T>>(*data_);
    return t;
  }

  /// Same buffer viewed under a different shape of equal element count.
  TensorT reshaped(std::vector<int> shape) const {
    TensorT t;
    t.init_shape(std::move(shape));
    if (t.size_ != size_) {
      throw DimensionError("reshape from " + shape_string() + " to " + t.shape_string() +
                           " changes element count");
    }
    t.data_ = data_;
    return t;
  }

  template <class U>
  TensorT<U> cast() const {
    TensorT<U> t(shape_);
    const T* src = data();
    U* dst = t.data();
    for (int64_t i = 0; i < size_; ++i) dst[i] = static_cast<U>(src[i]);
    return t;
  }

  std::string shape_string() const {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape_.size(); ++i) {
      if (i) os << 'x';
      os << shape_[i];
    }
    os << ']';
    return os.str();
  }

 private:
  template <class U>
  friend class TensorT;

  void init_shape(std::vector<int> shape) {
    if (shape.empty()) throw DimensionError("tensor shape must have at least one dimension");
    int64_t n = 1;
    for (int d : shape) {
      if (d < 1) throw DimensionError("tensor dimensions must be >= 1, got " + std::to_string(d));
      n *= d;
    }
    shape_ = std::move(shape);
    size_ = n;
  }

  std::vector<int> shape_;
  int64_t size_ = 0;
  std::shared_ptr<std::vector<T>> data_;
};

using Tensor = TensorT<float>;

}  // namespace attcdc

#endif  // ATTCDC_TENSOR_HPP_
