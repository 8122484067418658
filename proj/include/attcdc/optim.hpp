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

#ifndef ATTCDC_OPTIM_HPP_
#define ATTCDC_OPTIM_HPP_

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "attcdc/tape.hpp"
#include "attcdc/tensor.hpp"

namespace attcdc {

struct AdamHyper {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam over a fixed, ordered parameter list. Parameters are
/// updated in list order with double arithmetic per element, so runs are
/// bitwise reproducible.
template <class T>
class AdamT {
 public:
  AdamT(std::vector<std::pair<std::string, TensorT<T>*>> params, AdamHyper hyper)
      : params_(std::move(params)), hyper_(hyper) {
    for (auto& [name, p] : params_) {
      m_.push_back(TensorT<T>::zeros(p->shape()));
      v_.push_back(TensorT<T>::zeros(p->shape()));
    }
  }

  const AdamHyper& hyper() const { return hyper_; }
  int64_t step_count() const { return t_; }
  void set_step_count(int64_t t) { t_ = t; }

  /// One update from the gradients accumulated on `tape`. A parameter with
  /// no gradient entry contributes g = 0.
  void step(TapeT<T>& tape) {
    ++t_;
    const double bc1 = 1.0 - std::pow(hyper_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(hyper_.beta2, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
      TensorT<T>& p = *params_[i].second;
      const TensorT<T>* g = tape.find_grad(p);
      TensorT<T>& m = m_[i];
      TensorT<T>& v = v_[i];
      const int64_t n = p.size();
      for (int64_t j = 0; j < n; ++j) {
        const double gj = g ? static_cast<double>((*g)[j]) : 0.0;
        const double mj = hyper_.beta1 * static_cast<double>(m[j]) + (1.0 - hyper_.beta1) * gj;
        const double vj =
            hyper_.beta2 * static_cast<double>(v[j]) + (1.0 - hyper_.beta2) * gj * gj;
        m[j] = static_cast<T>(mj);
        v[j] = static_cast<T>(vj);
        const double mhat = mj / bc1;
        const double vhat = vj / bc2;
        p[j] = static_cast<T>(static_cast<double>(p[j]) -
                              hyper_.lr * mhat / (std::sqrt(vhat) + hyper_.eps));
      }
    }
  }

  /// Moment tensors under stable names, for checkpointing.
  std::vector<std::pair<std::string, TensorT<T>*>> named_state() {
    std::vector<std::pair<std::string, TensorT<T>*>> out;
    for (size_t i = 0; i < params_.size(); ++i) {
      out.emplace_back("opt.m." + params_[i].first, &m_[i]);
      out.emplace_back("opt.v." + params_[i].first, &v_[i]);
    }
    return out;
  }

 private:
  std::vector<std::pair<std::string, TensorT<T>*>> params_;
  std::vector<TensorT<T>> m_, v_;
  AdamHyper hyper_;
  int64_t t_ = 0;
};

using Adam = AdamT<float>;

}  // namespace attcdc

#endif  // ATTCDC_OPTIM_HPP_
