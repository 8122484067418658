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

#ifndef ATTCDC_METRICS_HPP_
#define ATTCDC_METRICS_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "attcdc/error.hpp"

namespace attcdc {

/// Confusion-matrix derived metrics. Rows of the matrix are true classes,
/// columns predictions. Precision and recall are macro averaged: the
/// unweighted mean over classes, with 0 substituted where a class has no
/// predictions (precision) or no samples (recall).
struct MetricsReport {
  std::vector<std::vector<int64_t>> confusion;
  int64_t total = 0;
  double accuracy = 0.0;
  std::vector<double> per_class_precision;
  std::vector<double> per_class_recall;
  double macro_precision = 0.0;
  double macro_recall = 0.0;

  nlohmann::json to_json() const {
    return nlohmann::json{{"confusion", confusion},
                          {"total", total},
                          {"accuracy", accuracy},
                          {"per_class_precision", per_class_precision},
                          {"per_class_recall", per_class_recall},
                          {"macro_precision", macro_precision},
                          {"macro_recall", macro_recall}};
  }
};

inline MetricsReport compute_metrics(const std::vector<int>& predictions,
                                     const std::vector<int>& truths, int num_classes) {
  if (predictions.size() != truths.size()) {
    throw ContractError("compute_metrics: " + std::to_string(predictions.size()) +
                        " predictions vs " + std::to_string(truths.size()) + " truths");
  }
  if (predictions.empty()) throw ContractError("compute_metrics: empty input");
  if (num_classes < 1) throw ContractError("compute_metrics: need at least one class");

  MetricsReport r;
  r.confusion.assign(static_cast<size_t>(num_classes),
                     std::vector<int64_t>(static_cast<size_t>(num_classes), 0));
  r.total = static_cast<int64_t>(predictions.size());
  for (size_t i = 0; i < predictions.size(); ++i) {
    const int p = predictions[i], t = truths[i];
    if (p < 0 || p >= num_classes || t < 0 || t >= num_classes) {
      throw ContractError("compute_metrics: class index outside [0," +
                          std::to_string(num_classes) + ")");
    }
    r.confusion[static_cast<size_t>(t)][static_cast<size_t>(p)]++;
  }

  int64_t trace = 0;
  r.per_class_precision.resize(static_cast<size_t>(num_classes));
  r.per_class_recall.resize(static_cast<size_t>(num_classes));
  for (int c = 0; c < num_classes; ++c) {
    const int64_t tp = r.confusion[static_cast<size_t>(c)][static_cast<size_t>(c)];
    trace += tp;
    int64_t col = 0, row = 0;
    for (int k = 0; k < num_classes; ++k) {
      col += r.confusion[static_cast<size_t>(k)][static_cast<size_t>(c)];
      row += r.confusion[static_cast<size_t>(c)][static_cast<size_t>(k)];
    }
    r.per_class_precision[static_cast<size_t>(c)] =
        col == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(col);
    r.per_class_recall[static_cast<size_t>(c)] =
        row == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(row);
    r.macro_precision += r.per_class_precision[static_cast<size_t>(c)];
    r.macro_recall += r.per_class_recall[static_cast<size_t>(c)];
  }
  r.accuracy = static_cast<double>(trace) / static_cast<double>(r.total);
  r.macro_precision /= num_classes;
  r.macro_recall /= num_classes;
  return r;
}

}  // namespace attcdc

#endif  // ATTCDC_METRICS_HPP_
