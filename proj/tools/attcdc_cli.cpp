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

// Command-line front end: synthetic data generation, training, evaluation,
// parameter/complexity reports and Grad-CAM overlays.
//
// Exit codes: 0 success, 2 usage/configuration/io problem, 3 numerical
// failure during training.

#include <filesystem>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"

#include "attcdc/checkpoint.hpp"
#include "attcdc/data.hpp"
#include "attcdc/gradcam.hpp"
#include "attcdc/model.hpp"
#include "attcdc/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;

struct ModelFlags {
  std::string model = "enhanced";
  int classes = 4;
  int attention_reduction = 16;
  std::string conv_mode;  // empty = follow --model
  int input_size = 224;

  attcdc::ModelConfig resolve() const {
    attcdc::ModelConfig cfg = model == "baseline" ? attcdc::ModelConfig::baseline(classes)
                                                  : attcdc::ModelConfig::enhanced(classes);
    cfg.attention_reduction = attention_reduction;
    cfg.input_size = input_size;
    if (!conv_mode.empty()) {
      cfg.conv_mode = conv_mode == "standard" ? attcdc::ConvMode::kStandard
                                              : attcdc::ConvMode::kDepthwiseSeparable;
    }
    return cfg;
  }
};

void add_model_flags(CLI::App* cmd, ModelFlags& flags) {
  cmd->add_option("--model", flags.model, "Architecture: enhanced (attention + depthwise) or baseline")
      ->check(CLI::IsMember({"enhanced", "baseline"}))
      ->capture_default_str();
  cmd->add_option("--classes", flags.classes, "Number of classes")->capture_default_str();
  cmd->add_option("--attention-reduction", flags.attention_reduction,
                  "Channel reduction ratio of the attention blocks")
      ->capture_default_str();
  cmd->add_option("--conv-mode", flags.conv_mode,
                  "Override the 3x3 convolution mode: standard or depthwise_separable")
      ->check(CLI::IsMember({"standard", "depthwise_separable"}));
  cmd->add_option("--input-size", flags.input_size, "Square input resolution")
      ->capture_default_str();
}

void print_effective(const std::string& command, const json& cfg) {
  json out = cfg;
  out["command"] = command;
  std::cout << "effective configuration: " << out.dump() << "\n";
}

attcdc::DatasetManifest prepare_data(const std::string& data_dir, const std::string& synth_preset,
                                     const fs::path& out_dir, uint64_t seed) {
  if (!synth_preset.empty()) {
    attcdc::SyntheticSpec spec = synth_preset == "easy" ? attcdc::SyntheticSpec::easy(seed)
                                                        : attcdc::SyntheticSpec::imbalanced(seed);
    const fs::path root = out_dir / "synth_data";
    attcdc::DatasetManifest m = attcdc::generate_synthetic(spec, root.string());
    std::cout << "generated synthetic dataset under " << root.string() << "\n";
    return m;
  }
  return attcdc::scan_image_folder(data_dir);
}

void print_class_counts(const attcdc::DatasetManifest& m) {
  const auto counts = m.class_counts();
  for (int c = 0; c < m.num_classes(); ++c) {
    std::cout << "  class " << c << " (" << m.class_names[static_cast<size_t>(c)]
              << "): " << counts[static_cast<size_t>(c)] << " images\n";
  }
}

int run_train(const std::string& data_dir, const std::string& synth_preset,
              const ModelFlags& model_flags, attcdc::TrainConfig train_cfg,
              const std::string& out_dir, const std::string& focal_alpha) {
  if (data_dir.empty() == synth_preset.empty()) {
    std::cerr << "train: exactly one of --data or --synth is required\n";
    return kExitUsage;
  }
  if (!data_dir.empty() && !fs::is_directory(data_dir)) {
    std::cerr << "train: data directory does not exist: " << data_dir << "\n";
    return kExitUsage;
  }
  fs::create_directories(out_dir);
  if (!fs::is_directory(out_dir)) {
    std::cerr << "train: cannot create output directory: " << out_dir << "\n";
    return kExitUsage;
  }

  attcdc::ModelConfig model_cfg = model_flags.resolve();
  model_cfg.input_size = train_cfg.input_size;
  train_cfg.focal_alpha_inverse_freq = focal_alpha == "inverse-frequency";

  json effective{{"model", model_cfg.to_json()},
                 {"train", train_cfg.to_json()},
                 {"data", data_dir.empty() ? "synth:" + synth_preset : data_dir},
                 {"out", out_dir}};
  print_effective("train", effective);
  {
    std::ofstream f(fs::path(out_dir) / "effective_config.json");
    f << effective.dump(2) << "\n";
  }

  attcdc::DatasetManifest manifest =
      prepare_data(data_dir, synth_preset, out_dir, train_cfg.seed);
  print_class_counts(manifest);
  manifest.save_csv((fs::path(out_dir) / "manifest.csv").string());
  attcdc::SplitAssignment split =
      attcdc::split_dataset(manifest, train_cfg.fractions, train_cfg.seed);
  split.save_csv((fs::path(out_dir) / "split.csv").string(), manifest);

  attcdc::Model model(model_cfg, train_cfg.seed);
  std::cout << "model parameters: " << model.count_parameters() << "\n";
  attcdc::FitState state = attcdc::FitState::fresh(model, train_cfg);
  attcdc::CsvSink csv((fs::path(out_dir) / "metrics.csv").string());

  struct EchoSink : attcdc::MetricSink {
    void on_record(const attcdc::EpochRecord& r) override {
      std::cout << "epoch " << r.epoch << " " << attcdc::split_name(r.split) << ": loss "
                << r.loss << ", accuracy " << r.accuracy << ", precision " << r.macro_precision
                << ", recall " << r.macro_recall << " (" << r.seconds << "s)\n";
    }
  } echo;

  attcdc::fit(model, manifest, split, train_cfg, {&csv, &echo}, state, out_dir);
  std::cout << "wrote " << (fs::path(out_dir) / "metrics.csv").string()
            << ", last.ckpt, best.ckpt\n";
  return 0;
}

attcdc::TrainConfig train_config_from_checkpoint(const attcdc::Checkpoint& ckpt) {
  if (ckpt.extra.contains("train_config")) {
    return attcdc::TrainConfig::from_json(ckpt.extra.at("train_config"));
  }
  attcdc::TrainConfig cfg;
  cfg.seed = ckpt.seed;
  cfg.input_size = ckpt.model_config.input_size;
  return cfg;
}

int run_evaluate(const std::string& checkpoint_path, const std::string& data_dir,
                 const std::string& split_name_arg, const std::string& out_file) {
  attcdc::Checkpoint ckpt = attcdc::load_checkpoint(checkpoint_path);
  attcdc::TrainConfig cfg = train_config_from_checkpoint(ckpt);
  json effective{{"checkpoint", checkpoint_path},
                 {"data", data_dir},
                 {"split", split_name_arg},
                 {"model", ckpt.model_config.to_json()},
                 {"train", cfg.to_json()}};
  print_effective("evaluate", effective);

  attcdc::Model model(ckpt.model_config, ckpt.seed);
  attcdc::apply_checkpoint(ckpt, model, nullptr);

  attcdc::DatasetManifest manifest = attcdc::scan_image_folder(data_dir);
  attcdc::SplitAssignment split = attcdc::split_dataset(manifest, cfg.fractions, cfg.seed);
  const attcdc::Split which =
      split_name_arg == "val" ? attcdc::Split::kVal : attcdc::Split::kTest;
  attcdc::FocalLossConfig focal;
  focal.gamma = cfg.focal_gamma;
  attcdc::EvalResult res =
      attcdc::evaluate(model, manifest, split.indices_of(which), cfg, focal);

  json report = res.metrics.to_json();
  report["loss"] = res.loss;
  report["split"] = split_name_arg;
  report["samples"] = res.truths.size();
  if (!out_file.empty()) {
    std::ofstream f(out_file);
    if (!f) {
      std::cerr << "evaluate: cannot write " << out_file << "\n";
      return kExitUsage;
    }
    f << report.dump(2) << "\n";
  }
  std::cout << "split " << split_name_arg << ": loss " << res.loss << ", accuracy "
            << res.metrics.accuracy << ", macro precision " << res.metrics.macro_precision
            << ", macro recall " << res.metrics.macro_recall << " over " << res.truths.size()
            << " samples\n";
  return 0;
}

int run_gradcam(const std::string& checkpoint_path, const std::string& image_path,
                const std::string& class_arg, const std::string& layer,
                const std::string& out_file, const std::string& heatmap_csv) {
  attcdc::Checkpoint ckpt = attcdc::load_checkpoint(checkpoint_path);
  attcdc::TrainConfig cfg = train_config_from_checkpoint(ckpt);
  json effective{{"checkpoint", checkpoint_path}, {"image", image_path},
                 {"class", class_arg},            {"layer", layer.empty() ? "(final block)" : layer},
                 {"out", out_file},               {"input_size", cfg.input_size}};
  print_effective("gradcam", effective);

  attcdc::Model model(ckpt.model_config, ckpt.seed);
  attcdc::apply_checkpoint(ckpt, model, nullptr);

  attcdc::Tensor input =
      attcdc::load_image_tensor(image_path, cfg.input_size, cfg.normalization);
  attcdc::Tensor logits = model.forward(input, {});
  attcdc::Tensor probs = attcdc::ops::softmax(logits);
  int predicted = 0;
  for (int k = 1; k < logits.dim(1); ++k) {
    if (probs[k] > probs[predicted]) predicted = k;
  }

  int target;
  if (class_arg == "predicted") {
    target = predicted;
  } else {
    try {
      target = std::stoi(class_arg);
    } catch (const std::exception&) {
      std::cerr << "gradcam: --class must be 'predicted' or an index\n";
      return kExitUsage;
    }
  }

  attcdc::HeatmapResult heatmap = attcdc::grad_cam(model, input, target, layer);

  attcdc::ImageU8 raw_img = attcdc::png::read_file(image_path);
  attcdc::TensorT<float> gray =
      attcdc::bilinear_resize(attcdc::to_gray_float(raw_img), cfg.input_size, cfg.input_size);
  attcdc::export_overlay(gray, heatmap.upsampled, out_file);
  if (!heatmap_csv.empty()) attcdc::save_heatmap_csv(heatmap.raw, heatmap_csv);

  std::cout << "predicted class " << predicted << " (p=" << probs[predicted]
            << "), heatmap target class " << target << ", layer " << heatmap.layer << "\n";
  std::cout << "wrote overlay " << out_file << "\n";
  return 0;
}

int run_params(const ModelFlags& flags, bool as_json) {
  attcdc::ModelConfig cfg = flags.resolve();
  attcdc::Model model(cfg, 0);
  attcdc::ModelSummary summary = model.summarize(flags.input_size);
  if (as_json) {
    std::cout << summary.to_json().dump(2) << "\n";
    return 0;
  }
  print_effective("params", json{{"model", cfg.to_json()}, {"input_size", flags.input_size}});
  std::cout << summary.to_text();
  attcdc::ComplexityReport report = attcdc::complexity_report(model, flags.input_size);
  std::cout << "total parameters: " << model.count_parameters() << "\n";
  std::cout << "conv MACs standard mode:  " << report.total_standard << "\n";
  std::cout << "conv MACs separable mode: " << report.total_separable << "\n";
  std::cout << "separable/standard ratio: " << report.ratio() << "\n";
  return 0;
}

int run_synth(const std::string& preset, const std::string& out_dir, uint64_t seed, bool force) {
  print_effective("synth", json{{"preset", preset}, {"out", out_dir}, {"seed", seed}});
  if (fs::exists(out_dir) && !fs::is_empty(out_dir) && !force) {
    std::cerr << "synth: destination exists and is not empty (use --force): " << out_dir << "\n";
    return kExitUsage;
  }
  attcdc::SyntheticSpec spec =
      preset == "easy" ? attcdc::SyntheticSpec::easy(seed) : attcdc::SyntheticSpec::imbalanced(seed);
  attcdc::DatasetManifest m = attcdc::generate_synthetic(spec, out_dir);
  std::cout << "generated " << m.entries.size() << " images\n";
  print_class_counts(m);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"AttCDCNet: attention-enhanced DenseNet-121 classifier for chest X-ray images"};
  app.require_subcommand(1);
  app.set_config("--config", "", "key=value file with defaults; flags override");

  // train
  auto* train = app.add_subcommand("train", "Train a model on an image folder or synthetic preset");
  std::string data_dir, synth_preset, out_dir, focal_alpha = "uniform", loss = "focal";
  ModelFlags train_model;
  attcdc::TrainConfig tc;
  train->add_option("--data", data_dir, "Dataset root: one subdirectory per class");
  train->add_option("--synth", synth_preset, "Generate and train on a synthetic preset")
      ->check(CLI::IsMember({"easy", "imbalanced"}));
  add_model_flags(train, train_model);
  train->add_option("--loss", loss, "Loss function")->check(CLI::IsMember({"focal", "ce"}))
      ->capture_default_str();
  train->add_option("--focal-gamma", tc.focal_gamma, "Focal loss focusing exponent")
      ->capture_default_str();
  train->add_option("--focal-alpha", focal_alpha,
                    "Focal class weights: uniform or inverse-frequency")
      ->check(CLI::IsMember({"uniform", "inverse-frequency"}))
      ->capture_default_str();
  train->add_option("--batch-size", tc.batch_size, "Mini-batch size")->capture_default_str();
  train->add_option("--lr", tc.learning_rate, "Adam learning rate")->capture_default_str();
  train->add_option("--epochs", tc.epochs, "Training epochs")->capture_default_str();
  train->add_option("--seed", tc.seed, "Master seed (init, split, shuffling)")
      ->capture_default_str();
  train->add_option("--out", out_dir, "Output directory for checkpoints, metrics, configs")
      ->required();
  train->add_flag("--augment", tc.augment.enabled, "Enable flip/rotation augmentation");
  train->add_option("--train-frac", tc.fractions.train, "Training fraction")->capture_default_str();
  train->add_option("--val-frac", tc.fractions.val, "Validation fraction")->capture_default_str();
  train->add_option("--test-frac", tc.fractions.test, "Test fraction")->capture_default_str();

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "Evaluate a checkpoint on a dataset split");
  std::string eval_ckpt, eval_data, eval_split = "test", eval_out;
  evaluate->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
  evaluate->add_option("--data", eval_data, "Dataset root")->required();
  evaluate->add_option("--split", eval_split, "Which split to score")
      ->check(CLI::IsMember({"test", "val"}))
      ->capture_default_str();
  evaluate->add_option("--out", eval_out, "Write the metrics report JSON here");

  // gradcam
  auto* gradcam = app.add_subcommand("gradcam", "Export a Grad-CAM overlay for one image");
  std::string cam_ckpt, cam_image, cam_class = "predicted", cam_layer, cam_out, cam_csv;
  gradcam->add_option("--checkpoint", cam_ckpt, "Checkpoint file")->required();
  gradcam->add_option("--image", cam_image, "Input image (PNG)")->required();
  gradcam->add_option("--class", cam_class, "Target class index or 'predicted'")
      ->capture_default_str();
  gradcam->add_option("--layer", cam_layer,
                      "Feature tap (stem, block1..block4); default final block");
  gradcam->add_option("--out", cam_out, "Overlay PNG path")->required();
  gradcam->add_option("--heatmap-csv", cam_csv, "Optional raw heatmap CSV grid");

  // params
  auto* params = app.add_subcommand("params", "Parameter counts and convolution complexity");
  ModelFlags params_model;
  bool params_json = false;
  add_model_flags(params, params_model);
  params->add_flag("--json", params_json, "Emit the per-layer summary as JSON");

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic image-folder dataset");
  std::string synth_kind = "easy", synth_out;
  uint64_t synth_seed = 0;
  bool synth_force = false;
  synth->add_option("--preset", synth_kind, "easy (balanced) or imbalanced (corpus ratios / 50)")
      ->check(CLI::IsMember({"easy", "imbalanced"}))
      ->capture_default_str();
  synth->add_option("--out", synth_out, "Destination directory")->required();
  synth->add_option("--seed", synth_seed, "Generator seed")->capture_default_str();
  synth->add_flag("--force", synth_force, "Write into a non-empty destination");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    if (train->parsed()) {
      tc.loss = loss == "focal" ? attcdc::LossKind::kFocal : attcdc::LossKind::kCrossEntropy;
      tc.input_size = train_model.input_size;
      return run_train(data_dir, synth_preset, train_model, tc, out_dir, focal_alpha);
    }
    if (evaluate->parsed()) return run_evaluate(eval_ckpt, eval_data, eval_split, eval_out);
    if (gradcam->parsed()) {
      return run_gradcam(cam_ckpt, cam_image, cam_class, cam_layer, cam_out, cam_csv);
    }
    if (params->parsed()) return run_params(params_model, params_json);
    if (synth->parsed()) return run_synth(synth_kind, synth_out, synth_seed, synth_force);
  } catch (const attcdc::NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
