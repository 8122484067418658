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

#ifndef ATTCDC_TAPE_HPP_
#define ATTCDC_TAPE_HPP_

#include <functional>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "attcdc/error.hpp"
#include "attcdc/tensor.hpp"

namespace attcdc {

/// Define-by-run gradient tape.
///
/// Every differentiable primitive executed under a tape appends one record
/// holding the closure that propagates the output gradient to the inputs.
/// backward() replays the records in exact reverse application order, so a
/// tensor consumed by k operations accumulates the sum of k contributions
/// before the record that produced it runs.
///
/// A tape is owned by a single forward/backward pass; it is rebuilt per pass.
template <class T>
class TapeT {
 public:
  struct Record {
    const void* output_id;
    std::function<void(TapeT&)> apply;
  };

  TapeT() = default;
  TapeT(const TapeT&) = delete;
  TapeT& operator=(const TapeT&) = delete;

  void record(const TensorT<T>& output, std::function<void(TapeT&)> apply) {
    records_.push_back(Record{output.id(), std::move(apply)});
  }

  /// Mutable accumulated gradient for `t`, zero-initialised on first touch.
  TensorT<T>& grad(const TensorT<T>& t) {
    auto it = grads_.find(t.id());
    if (it == grads_.end()) {
      it = grads_.emplace(t.id(), TensorT<T>::zeros(t.shape())).first;
    }
    return it->second;
  }

  /// Gradient of `t` if any contribution reached it, else nullptr.
  const TensorT<T>* find_grad(const TensorT<T>& t) const {
    auto it = grads_.find(t.id());
    return it == grads_.end() ? nullptr : &it->second;
  }

  /// Keeps the gradient of a non-leaf tensor alive through backward();
  /// feature-map gradients for visual explanations opt in through this.
  void watch(const TensorT<T>& t) { watched_.insert(t.id()); }

  /// Marks a tensor as not needing a gradient (e.g. the input image batch);
  /// primitives skip that propagation branch.
  void stop_gradient(const TensorT<T>& t) { stopped_.insert(t.id()); }
  bool stopped(const TensorT<T>& t) const { return stopped_.find(t.id()) != stopped_.end(); }

  size_t num_records() const { return records_.size(); }

  /// Seeds d(loss)/d(loss) = 1 and replays the tape in reverse.
  ///
  /// Gradients of interior tensors are released as soon as the record that
  /// produced them has consumed them; leaves (parameters, inputs) and
  /// watched tensors keep theirs. The records themselves are destroyed as
  /// they run, releasing the captured activations.
  void backward(const TensorT<T>& loss) {
    if (loss.size() != 1) {
      throw ContractError("backward requires a scalar output, got shape " + loss.shape_string());
    }
    grad(loss).data()[0] = T(1);
    for (size_t i = records_.size(); i > 0; --i) {
      Record& rec = records_[i - 1];
      rec.apply(*this);
      if (watched_.find(rec.output_id) == watched_.end()) {
        grads_.erase(rec.output_id);
      }
      rec.apply = nullptr;  // drop captured tensors eagerly
    }
    records_.clear();
  }

 private:
  std::vector<Record> records_;
  std::unordered_map<const void*, TensorT<T>> grads_;
  std::unordered_set<const void*> watched_;
  std::unordered_set<const void*> stopped_;
};

using Tape = TapeT<float>;

/// Execution context threaded through layers and primitives.
/// tape == nullptr means plain inference; training toggles batch-statistics
/// behaviour in normalisation layers.
template <class T>
struct ContextT {
  TapeT<T>* tape = nullptr;
  bool training = false;
};

using Context = ContextT<float>;

}  // namespace attcdc

#endif  // ATTCDC_TAPE_HPP_
