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

#ifndef ATTCDC_TRAIN_HPP_
#define ATTCDC_TRAIN_HPP_

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "attcdc/checkpoint.hpp"
#include "attcdc/data.hpp"
#include "attcdc/loss.hpp"
#include "attcdc/metrics.hpp"
#include "attcdc/model.hpp"
#include "attcdc/optim.hpp"

namespace attcdc {

enum class LossKind { kFocal, kCrossEntropy };

inline const char* loss_name(LossKind k) {
  return k == LossKind::kFocal ? "focal" : "cross_entropy";
}

/// Optimisation protocol settings. Defaults follow the 20-epoch experiment:
/// batch 64, learning rate 0.001, Adam.
struct TrainConfig {
  int batch_size = 64;
  double learning_rate = 0.001;
  int epochs = 20;
  LossKind loss = LossKind::kFocal;
  double focal_gamma = 2.0;
  bool focal_alpha_inverse_freq = false;
  uint64_t seed = 0;
  int input_size = 224;
  Normalization normalization;
  AugmentConfig augment;
  SplitFractions fractions;

  void validate() const {
    if (batch_size < 1) throw ConfigError("train: batch size must be >= 1");
    if (learning_rate <= 0.0) throw ConfigError("train: learning rate must be > 0");
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (focal_gamma < 0.0) throw ConfigError("train: focal gamma must be >= 0");
    if (input_size < 32) throw ConfigError("train: input size must be >= 32");
    fractions.validate();
  }

  nlohmann::json to_json() const {
    return nlohmann::json{{"batch_size", batch_size},
                          {"learning_rate", learning_rate},
                          {"epochs", epochs},
                          {"loss", loss_name(loss)},
                          {"focal_gamma", focal_gamma},
                          {"focal_alpha_inverse_freq", focal_alpha_inverse_freq},
                          {"seed", seed},
                          {"input_size", input_size},
                          {"normalize_mean", normalization.mean},
                          {"normalize_std", normalization.stddev},
                          {"augment", augment.enabled},
                          {"fractions",
                           {{"train", fractions.train}, {"val", fractions.val}, {"test", fractions.test}}},
                          {"optimizer", "adam"},
                          {"adam_beta1", 0.9},
                          {"adam_beta2", 0.999},
                          {"adam_eps", 1e-8}};
  }

  static TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.batch_size = j.at("batch_size").get<int>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.epochs = j.at("epochs").get<int>();
    c.loss = j.at("loss").get<std::string>() == "focal" ? LossKind::kFocal
                                                        : LossKind::kCrossEntropy;
    c.focal_gamma = j.at("focal_gamma").get<double>();
    c.focal_alpha_inverse_freq = j.at("focal_alpha_inverse_freq").get<bool>();
    c.seed = j.at("seed").get<uint64_t>();
    c.input_size = j.at("input_size").get<int>();
    c.normalization.mean = j.at("normalize_mean").get<double>();
    c.normalization.stddev = j.at("normalize_std").get<double>();
    c.augment.enabled = j.at("augment").get<bool>();
    c.fractions.train = j.at("fractions").at("train").get<double>();
    c.fractions.val = j.at("fractions").at("val").get<double>();
    c.fractions.test = j.at("fractions").at("test").get<double>();
    return c;
  }
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  Split split = Split::kTrain;
  double loss = 0.0;
  double accuracy = 0.0;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double seconds = 0.0;

  bool same_metrics(const EpochRecord& o) const {
    return epoch == o.epoch && split == o.split && loss == o.loss && accuracy == o.accuracy &&
           macro_precision == o.macro_precision && macro_recall == o.macro_recall;
  }
};

class MetricSink {
 public:
  virtual ~MetricSink() = default;
  virtual void on_record(const EpochRecord& rec) = 0;
};

/// Appends `epoch,split,loss,accuracy,precision,recall,seconds` rows.
class CsvSink : public MetricSink {
 public:
  explicit CsvSink(const std::string& path) : out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw IoError("cannot open metrics csv: " + path);
    out_ << "epoch,split,loss,accuracy,precision,recall,seconds\n";
  }

  void on_record(const EpochRecord& rec) override {
    char line[256];
    std::snprintf(line, sizeof(line), "%d,%s,%.6f,%.6f,%.6f,%.6f,%.3f\n", rec.epoch,
                  split_name(rec.split), rec.loss, rec.accuracy, rec.macro_precision,
                  rec.macro_recall, rec.seconds);
    out_ << line;
    out_.flush();
  }

 private:
  std::ofstream out_;
};

class MemorySink : public MetricSink {
 public:
  void on_record(const EpochRecord& rec) override { records.push_back(rec); }
  std::vector<EpochRecord> records;
};

struct EvalResult {
  double loss = 0.0;
  MetricsReport metrics;
  std::vector<int> predictions;
  std::vector<int> truths;
  double seconds = 0.0;
};

namespace detail {

inline std::vector<std::vector<int>> make_batches(std::vector<int> indices, int batch_size) {
  std::vector<std::vector<int>> batches;
  for (size_t i = 0; i < indices.size(); i += static_cast<size_t>(batch_size)) {
    const size_t end = std::min(indices.size(), i + static_cast<size_t>(batch_size));
    batches.emplace_back(indices.begin() + static_cast<std::ptrdiff_t>(i),
                         indices.begin() + static_cast<std::ptrdiff_t>(end));
  }
  // fold a singleton tail into the previous batch: batchnorm needs >= 2
  // values per channel in train mode
  if (batches.size() > 1 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back()[0]);
    batches.pop_back();
  }
  return batches;
}

inline std::vector<int> argmax_rows(const Tensor& logits) {
  const int N = logits.dim(0), K = logits.dim(1);
  std::vector<int> out(static_cast<size_t>(N));
  for (int n = 0; n < N; ++n) {
    int best = 0;
    for (int k = 1; k < K; ++k) {
      if (logits[static_cast<int64_t>(n) * K + k] > logits[static_cast<int64_t>(n) * K + best]) {
        best = k;
      }
    }
    out[static_cast<size_t>(n)] = best;
  }
  return out;
}

inline FocalLossConfig focal_config(const TrainConfig& cfg, const DatasetManifest& manifest,
                                    const std::vector<int>& train_indices) {
  FocalLossConfig fl;
  fl.gamma = cfg.focal_gamma;
  if (cfg.focal_alpha_inverse_freq) {
    std::vector<int64_t> counts(static_cast<size_t>(manifest.num_classes()), 0);
    for (int i : train_indices) counts[static_cast<size_t>(manifest.entries[static_cast<size_t>(i)].label)]++;
    fl.alpha = FocalLossConfig::inverse_frequency(counts);
  }
  return fl;
}

}  // namespace detail

/// Eval-mode pass over one index set; loss uses the configured kind.
inline EvalResult evaluate(Model& model, const DatasetManifest& manifest,
                           const std::vector<int>& indices, const TrainConfig& cfg,
                           const FocalLossConfig& focal) {
  if (indices.empty()) throw ContractError("evaluate: empty split");
  const auto t0 = std::chrono::steady_clock::now();
  EvalResult res;
  double loss_sum = 0.0;
  for (const auto& batch_idx : detail::make_batches(indices, cfg.batch_size)) {
    auto [batch, labels] = load_batch(manifest, batch_idx, cfg.input_size, cfg.normalization);
    Tensor logits = model.forward(batch, {});
    const double batch_loss = cfg.loss == LossKind::kFocal
                                  ? static_cast<double>(focal_loss(logits, labels, focal)[0])
                                  : static_cast<double>(cross_entropy(logits, labels)[0]);
    loss_sum += batch_loss * static_cast<double>(labels.size());
    std::vector<int> preds = detail::argmax_rows(logits);
    res.predictions.insert(res.predictions.end(), preds.begin(), preds.end());
    res.truths.insert(res.truths.end(), labels.begin(), labels.end());
  }
  res.loss = loss_sum / static_cast<double>(indices.size());
  res.metrics = compute_metrics(res.predictions, res.truths, manifest.num_classes());
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

/// Resumable training state: the optimizer plus the epoch cursor.
struct FitState {
  std::unique_ptr<Adam> optimizer;
  int epochs_done = 0;

  static FitState fresh(Model& model, const TrainConfig& cfg) {
    FitState s;
    AdamHyper hyper;
    hyper.lr = cfg.learning_rate;
    s.optimizer = std::make_unique<Adam>(model.named_parameters(), hyper);
    return s;
  }
};

/// Runs epochs epochs_done+1 .. cfg.epochs: shuffled train pass, then a
/// validation pass, per epoch. Records go to every sink, train row first.
/// With a checkpoint directory set, writes last.ckpt each epoch and
/// best.ckpt whenever validation accuracy improves.
///
/// Fixed (seed, config, data) give bitwise-identical parameter trajectories
/// and metric streams; wall-time fields are the only nondeterministic output.
inline std::vector<EpochRecord> fit(Model& model, const DatasetManifest& manifest,
                                    const SplitAssignment& split, const TrainConfig& cfg,
                                    const std::vector<MetricSink*>& sinks, FitState& state,
                                    const std::string& checkpoint_dir = {}) {
  cfg.validate();
  const std::vector<int> train_indices = split.indices_of(Split::kTrain);
  const std::vector<int> val_indices = split.indices_of(Split::kVal);
  if (train_indices.empty() || val_indices.empty()) {
    throw ContractError("fit: train and validation splits must both be non-empty");
  }
  const FocalLossConfig focal = detail::focal_config(cfg, manifest, train_indices);

  double best_val_acc = -1.0;
  std::vector<EpochRecord> records;
  for (int epoch = state.epochs_done + 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<int> order = train_indices;
    Rng shuffle_rng = Rng::stream(cfg.seed, static_cast<uint64_t>(epoch));
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    std::vector<int> preds, truths;
    const auto batches = detail::make_batches(order, cfg.batch_size);
    for (size_t b = 0; b < batches.size(); ++b) {
      auto [batch, labels] = load_batch(manifest, batches[b], cfg.input_size, cfg.normalization);
      if (cfg.augment.enabled) {
        batch = augment(batch, cfg.augment,
                        Rng::stream(cfg.seed, (static_cast<uint64_t>(epoch) << 32) | (b + 1))
                            .next_u64());
      }
      Tape tape;
      Context ctx{&tape, true};
      tape.stop_gradient(batch);
      Tensor logits = model.forward(batch, ctx);
      Tensor loss = cfg.loss == LossKind::kFocal ? focal_loss(logits, labels, focal, ctx)
                                                 : cross_entropy(logits, labels, ctx);
      const double loss_val = loss[0];
      if (!std::isfinite(loss_val)) {
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(b));
      }
      loss_sum += loss_val * static_cast<double>(labels.size());
      std::vector<int> batch_preds = detail::argmax_rows(logits);
      preds.insert(preds.end(), batch_preds.begin(), batch_preds.end());
      truths.insert(truths.end(), labels.begin(), labels.end());

      tape.backward(loss);
      state.optimizer->step(tape);
    }

    MetricsReport train_metrics = compute_metrics(preds, truths, manifest.num_classes());
    EpochRecord train_rec;
    train_rec.epoch = epoch;
    train_rec.split = Split::kTrain;
    train_rec.loss = loss_sum / static_cast<double>(train_indices.size());
    train_rec.accuracy = train_metrics.accuracy;
    train_rec.macro_precision = train_metrics.macro_precision;
    train_rec.macro_recall = train_metrics.macro_recall;
    train_rec.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    EvalResult val = evaluate(model, manifest, val_indices, cfg, focal);
    EpochRecord val_rec;
    val_rec.epoch = epoch;
    val_rec.split = Split::kVal;
    val_rec.loss = val.loss;
    val_rec.accuracy = val.metrics.accuracy;
    val_rec.macro_precision = val.metrics.macro_precision;
    val_rec.macro_recall = val.metrics.macro_recall;
    val_rec.seconds = val.seconds;

    for (MetricSink* s : sinks) {
      s->on_record(train_rec);
      s->on_record(val_rec);
    }
    records.push_back(train_rec);
    records.push_back(val_rec);
    state.epochs_done = epoch;

    if (!checkpoint_dir.empty()) {
      namespace fs = std::filesystem;
      nlohmann::json extra{{"train_config", cfg.to_json()}};
      Checkpoint ckpt = make_checkpoint(model, state.optimizer.get(), epoch, cfg.seed, extra);
      save_checkpoint((fs::path(checkpoint_dir) / "last.ckpt").string(), ckpt);
      if (val_rec.accuracy > best_val_acc) {
        best_val_acc = val_rec.accuracy;
        save_checkpoint((fs::path(checkpoint_dir) / "best.ckpt").string(), ckpt);
      }
    }
  }
  return records;
}

}  // namespace attcdc

#endif  // ATTCDC_TRAIN_HPP_
