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

#ifndef ATTCDC_MODEL_HPP_
#define ATTCDC_MODEL_HPP_

#include <cstdint>
#include <iomanip>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "attcdc/layers.hpp"

namespace attcdc {

/// Architectural description of the classifier. The defaults give the
/// DenseNet-121 backbone; `enhanced()` switches on the channel-attention
/// blocks and depthwise-separable 3x3 stages.
struct ModelConfig {
  std::vector<int> block_layout{6, 12, 24, 16};
  int growth_rate = 32;
  double compression = 0.5;
  int num_classes = 4;
  ConvMode conv_mode = ConvMode::kStandard;
  bool attention = false;
  int attention_reduction = 16;
  int input_channels = 3;
  int input_size = 224;

  static ModelConfig baseline(int classes = 4) {
    ModelConfig c;
    c.num_classes = classes;
    return c;
  }

  static ModelConfig enhanced(int classes = 4) {
    ModelConfig c;
    c.num_classes = classes;
    c.conv_mode = ConvMode::kDepthwiseSeparable;
    c.attention = true;
    return c;
  }

  int stem_channels() const { return 2 * growth_rate; }

  void validate() const {
    if (block_layout.empty()) throw ConfigError("model: block layout must not be empty");
    for (int n : block_layout) {
      if (n < 1) throw ConfigError("model: dense blocks need at least one layer");
    }
    if (growth_rate < 1) throw ConfigError("model: growth rate must be >= 1");
    if (compression <= 0.0 || compression > 1.0) {
      throw ConfigError("model: compression must be in (0, 1]");
    }
    if (num_classes < 2) throw ConfigError("model: need at least 2 classes");
    if (input_channels < 1) throw ConfigError("model: need at least 1 input channel");
    if (attention_reduction < 1) throw ConfigError("model: attention reduction must be >= 1");
    if (input_size < 32) throw ConfigError("model: input size must be >= 32");
  }

  nlohmann::json to_json() const {
    return nlohmann::json{{"block_layout", block_layout},
                          {"growth_rate", growth_rate},
                          {"compression", compression},
                          {"num_classes", num_classes},
                          {"conv_mode", conv_mode == ConvMode::kStandard ? "standard"
                                                                         : "depthwise_separable"},
                          {"attention", attention},
                          {"attention_reduction", attention_reduction},
                          {"input_channels", input_channels},
                          {"input_size", input_size}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.block_layout = j.at("block_layout").get<std::vector<int>>();
    c.growth_rate = j.at("growth_rate").get<int>();
    c.compression = j.at("compression").get<double>();
    c.num_classes = j.at("num_classes").get<int>();
    c.conv_mode = j.at("conv_mode").get<std::string>() == "standard"
                      ? ConvMode::kStandard
                      : ConvMode::kDepthwiseSeparable;
    c.attention = j.at("attention").get<bool>();
    c.attention_reduction = j.at("attention_reduction").get<int>();
    c.input_channels = j.at("input_channels").get<int>();
    c.input_size = j.at("input_size").get<int>();
    return c;
  }

  bool operator==(const ModelConfig& o) const {
    return block_layout == o.block_layout && growth_rate == o.growth_rate &&
           compression == o.compression && num_classes == o.num_classes &&
           conv_mode == o.conv_mode && attention == o.attention &&
           attention_reduction == o.attention_reduction && input_channels == o.input_channels &&
           input_size == o.input_size;
  }
};

struct SummaryRow {
  std::string name;
  std::vector<int> out_shape;  // (C,H,W) after the row's layer
  int64_t params = 0;
  uint64_t macs_standard = 0;
  uint64_t macs_separable = 0;
};

/// Forward-ordered per-layer accounting. MAC columns cover convolution
/// sites only and give the Table-style per-sample cost of the site under
/// both convolution modes; sites that are never substituted carry the same
/// value in both columns.
struct ModelSummary {
  std::vector<SummaryRow> rows;
  int64_t total_params = 0;
  uint64_t total_macs_standard = 0;
  uint64_t total_macs_separable = 0;

  double ratio() const {
    return total_macs_standard == 0
               ? 0.0
               : static_cast<double>(total_macs_separable) /
                     static_cast<double>(total_macs_standard);
  }

  nlohmann::json to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : rows) {
      arr.push_back({{"name", r.name},
                     {"out_shape", r.out_shape},
                     {"params", r.params},
                     {"macs_standard", r.macs_standard},
                     {"macs_separable", r.macs_separable}});
    }
    return arr;
  }

  std::string to_text() const {
    std::ostringstream os;
    os << std::left << std::setw(28) << "layer" << std::setw(18) << "output" << std::right
       << std::setw(12) << "params" << std::setw(16) << "macs_std" << std::setw(16) << "macs_dws"
       << '\n';
    for (const auto& r : rows) {
      std::ostringstream shape;
      shape << '(';
      for (size_t i = 0; i < r.out_shape.size(); ++i) {
        if (i) shape << ',';
        shape << r.out_shape[i];
      }
      shape << ')';
      os << std::left << std::setw(28) << r.name << std::setw(18) << shape.str() << std::right
         << std::setw(12) << r.params << std::setw(16) << r.macs_standard << std::setw(16)
         << r.macs_separable << '\n';
    }
    os << std::left << std::setw(46) << "total" << std::right << std::setw(12) << total_params
       << std::setw(16) << total_macs_standard << std::setw(16) << total_macs_separable << '\n';
    return os.str();
  }
};

namespace detail {

inline uint64_t conv_site_macs(int out_ch, int dp_h, int dp_w, int k, int in_ch) {
  return static_cast<uint64_t>(out_ch) * dp_h * dp_w * k * k * in_ch;
}

inline uint64_t separable_site_macs(int out_ch, int dp_h, int dp_w, int k, int in_ch) {
  return static_cast<uint64_t>(in_ch) * dp_h * dp_w *
         (static_cast<uint64_t>(k) * k + static_cast<uint64_t>(out_ch));
}

}  // namespace detail

/// DenseNet-121 style classifier with optional post-block channel attention
/// and a per-config choice of standard or depthwise-separable 3x3 stages.
///
/// Layout: stem (7x7 stride-2 conv, bn, relu, 3x3 stride-2 maxpool) ->
/// [dense block -> attention -> transition] x (B-1) -> dense block ->
/// attention -> bn -> relu -> GAP -> linear head. Attention sites exist
/// only when the config enables them.
template <class T>
class ModelT {
 public:
  ModelT(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    stem_conv_ = Conv2dT<T>(cfg_.stem_channels(), cfg_.input_channels, 7, 2, 3, rng);
    stem_bn_ = BatchNorm2dT<T>(cfg_.stem_channels());
    int channels = cfg_.stem_channels();
    const int B = static_cast<int>(cfg_.block_layout.size());
    for (int b = 0; b < B; ++b) {
      blocks_.emplace_back(cfg_.block_layout[static_cast<size_t>(b)], channels, cfg_.growth_rate,
                           cfg_.conv_mode, rng);
      channels = blocks_.back().out_channels();
      if (cfg_.attention) {
        attns_.emplace_back(channels, cfg_.attention_reduction, rng);
      }
      if (b + 1 < B) {
        transitions_.emplace_back(channels, cfg_.compression, rng);
        channels = transitions_.back().out_channels;
      }
    }
    feature_channels_ = channels;
    final_bn_ = BatchNorm2dT<T>(channels);
    head_ = LinearT<T>(cfg_.num_classes, channels, rng);
  }

  const ModelConfig& config() const { return cfg_; }
  int feature_channels() const { return feature_channels_; }

  /// Valid feature-tap names in forward order: the stem output, each dense
  /// block's post-attention output, and "final" for the features after the
  /// last batchnorm + relu (the map the classifier head reads through GAP).
  std::vector<std::string> tap_names() const {
    std::vector<std::string> names{"stem"};
    for (size_t b = 0; b < blocks_.size(); ++b) names.push_back("block" + std::to_string(b + 1));
    names.push_back("final");
    return names;
  }

  /// The last dense block's post-attention tap (the default explanation
  /// target).
  std::string last_block_tap() const { return "block" + std::to_string(blocks_.size()); }

  /// Classifies a batch; logits out. An optional tap captures one named
  /// intermediate feature map (post-attention for block taps).
  TensorT<T> forward(const TensorT<T>& x, ContextT<T> ctx, const std::string& tap = {},
                     TensorT<T>* tap_out = nullptr) {
    validate_input(x);
    if (!tap.empty()) {
      bool known = false;
      for (const auto& n : tap_names()) known = known || n == tap;
      if (!known) throw ContractError("unknown feature tap '" + tap + "'");
      if (!tap_out) throw ContractError("feature tap requested without an output slot");
    }
    TensorT<T> h = stem_conv_.forward(x, ctx);
    h = ops::relu(stem_bn_.forward(h, ctx), ctx);
    h = ops::max_pool2d(h, 3, 2, 1, ctx);
    if (tap == "stem" && tap_out) *tap_out = h;
    for (size_t b = 0; b < blocks_.size(); ++b) {
      h = blocks_[b].forward(h, ctx);
      if (cfg_.attention) h = attns_[b].forward(h, ctx);
      if (tap == "block" + std::to_string(b + 1) && tap_out) *tap_out = h;
      if (b + 1 < blocks_.size()) h = transitions_[b].forward(h, ctx);
    }
    h = ops::relu(final_bn_.forward(h, ctx), ctx);
    if (tap == "final" && tap_out) *tap_out = h;
    TensorT<T> pooled = ops::global_avg_pool(h, ctx);
    return head_.forward(pooled, ctx);
  }

  void visit(const ParamVisitor<T>& v) {
    stem_conv_.visit("stem.conv", v);
    stem_bn_.visit("stem.bn", v);
    for (size_t b = 0; b < blocks_.size(); ++b) {
      const std::string bp = "block" + std::to_string(b + 1);
      blocks_[b].visit(bp, v);
      if (cfg_.attention) attns_[b].visit(bp + ".attn", v);
      if (b + 1 < blocks_.size()) {
        transitions_[b].visit("trans" + std::to_string(b + 1), v);
      }
    }
    final_bn_.visit("final.bn", v);
    head_.visit("head", v);
  }

  std::vector<std::pair<std::string, TensorT<T>*>> named_parameters() {
    std::vector<std::pair<std::string, TensorT<T>*>> out;
    visit([&out](const std::string& name, TensorT<T>& t, bool trainable) {
      if (trainable) out.emplace_back(name, &t);
    });
    return out;
  }

  std::vector<std::pair<std::string, TensorT<T>*>> named_buffers() {
    std::vector<std::pair<std::string, TensorT<T>*>> out;
    visit([&out](const std::string& name, TensorT<T>& t, bool trainable) {
      if (!trainable) out.emplace_back(name, &t);
    });
    return out;
  }

  int64_t count_parameters() {
    int64_t total = 0;
    visit([&total](const std::string&, TensorT<T>& t, bool trainable) {
      if (trainable) total += t.size();
    });
    return total;
  }

  /// Diagnostic: make every attention site behave as if its scores were 1.
  void set_attention_identity(bool on) {
    for (auto& a : attns_) a.force_identity = on;
  }

  AttentionBlockT<T>* attention_block(size_t index) {
    return index < attns_.size() ? &attns_[index] : nullptr;
  }

  /// Per-layer accounting for a given input size (default: the config's).
  ModelSummary summarize(int input_size = 0) {
    if (input_size <= 0) input_size = cfg_.input_size;
    ModelSummary s;
    int H = input_size;
    auto add = [&s](const std::string& name, int C, int h, int w, int64_t params,
                    uint64_t macs_std, uint64_t macs_sep) {
      s.rows.push_back(SummaryRow{name, {C, h, w}, params, macs_std, macs_sep});
      s.total_params += params;
      s.total_macs_standard += macs_std;
      s.total_macs_separable += macs_sep;
    };
    // stem
    int h1 = ops::detail::conv_out_extent(H, 3, 7, 2, "stem.conv");
    const int S = cfg_.stem_channels();
    add("stem.conv", S, h1, h1, tensor_size(stem_conv_.weight),
        detail::conv_site_macs(S, h1, h1, 7, cfg_.input_channels),
        detail::conv_site_macs(S, h1, h1, 7, cfg_.input_channels));
    add("stem.bn", S, h1, h1, 2 * S, 0, 0);
    int hp = ops::detail::conv_out_extent(h1, 1, 3, 2, "stem.pool");
    add("stem.pool", S, hp, hp, 0, 0, 0);
    int C = S, h = hp;
    for (size_t b = 0; b < blocks_.size(); ++b) {
      const std::string bp = "block" + std::to_string(b + 1);
      for (size_t l = 0; l < blocks_[b].layers.size(); ++l) {
        auto& layer = blocks_[b].layers[l];
        const std::string lp = bp + ".layer" + std::to_string(l + 1);
        const int mid = 4 * cfg_.growth_rate;
        add(lp + ".bn1", layer.in_channels, h, h, 2 * layer.in_channels, 0, 0);
        add(lp + ".conv1", mid, h, h, static_cast<int64_t>(mid) * layer.in_channels,
            detail::conv_site_macs(mid, h, h, 1, layer.in_channels),
            detail::conv_site_macs(mid, h, h, 1, layer.in_channels));
        add(lp + ".bn2", mid, h, h, 2 * mid, 0, 0);
        const int64_t p3 = cfg_.conv_mode == ConvMode::kStandard
                               ? static_cast<int64_t>(cfg_.growth_rate) * mid * 9
                               : static_cast<int64_t>(mid) * 9 +
                                     static_cast<int64_t>(mid) * cfg_.growth_rate;
        add(lp + ".conv3", layer.out_channels(), h, h, p3,
            detail::conv_site_macs(cfg_.growth_rate, h, h, 3, mid),
            detail::separable_site_macs(cfg_.growth_rate, h, h, 3, mid));
        C = layer.out_channels();
      }
      if (cfg_.attention) {
        const int red = C / cfg_.attention_reduction;
        add(bp + ".attn.fc1", C, h, h, static_cast<int64_t>(red) * C + red, 0, 0);
        add(bp + ".attn.fc2", C, h, h, static_cast<int64_t>(C) * red + C, 0, 0);
      }
      if (b + 1 < blocks_.size()) {
        const std::string tp = "trans" + std::to_string(b + 1);
        const int out = transitions_[b].out_channels;
        add(tp + ".bn", C, h, h, 2 * C, 0, 0);
        add(tp + ".conv", out, h, h, static_cast<int64_t>(out) * C,
            detail::conv_site_macs(out, h, h, 1, C), detail::conv_site_macs(out, h, h, 1, C));
        h = (h - 2) / 2 + 1;
        add(tp + ".pool", out, h, h, 0, 0, 0);
        C = out;
      }
    }
    add("final.bn", C, h, h, 2 * C, 0, 0);
    add("gap", C, 1, 1, 0, 0, 0);
    add("head", cfg_.num_classes, 1, 1, static_cast<int64_t>(cfg_.num_classes) * C + cfg_.num_classes,
        0, 0);
    return s;
  }

 private:
  static int64_t tensor_size(const TensorT<T>& t) { return t.size(); }

  void validate_input(const TensorT<T>& x) const {
    if (x.rank() != 4) {
      throw DimensionError("model input must be (N,C,H,W), got " + x.shape_string());
    }
    if (x.dim(1) != cfg_.input_channels) {
      throw DimensionError("model expects " + std::to_string(cfg_.input_channels) +
                           " input channels, got " + std::to_string(x.dim(1)));
    }
    const int H = x.dim(2), W = x.dim(3);
    if (H < 32 || W < 32) {
      throw DimensionError("stem: input " + x.shape_string() +
                           " is undersized, the pooling cascade needs H,W >= 32");
    }
    // walk the cascade so an error can name the stage that starves
    int h = ops::detail::conv_out_extent(std::min(H, W), 3, 7, 2, "stem.conv");
    h = ops::detail::conv_out_extent(h, 1, 3, 2, "stem.pool");
    for (size_t b = 0; b + 1 < blocks_.size(); ++b) {
      if (h < 2) {
        throw DimensionError("trans" + std::to_string(b + 1) +
                             ": average pool needs H,W >= 2, input size too small");
      }
      h = (h - 2) / 2 + 1;
    }
    if (h < 1) throw DimensionError("final stage has no spatial extent left");
  }

  ModelConfig cfg_;
  Conv2dT<T> stem_conv_;
  BatchNorm2dT<T> stem_bn_;
  std::vector<DenseBlockT<T>> blocks_;
  std::vector<AttentionBlockT<T>> attns_;
  std::vector<TransitionT<T>> transitions_;
  BatchNorm2dT<T> final_bn_;
  LinearT<T> head_;
  int feature_channels_ = 0;
};

using Model = ModelT<float>;

/// Convolution-site complexity under both modes for one input size.
struct ComplexityReport {
  std::vector<SummaryRow> sites;
  uint64_t total_standard = 0;
  uint64_t total_separable = 0;

  double ratio() const {
    return total_standard == 0
               ? 0.0
               : static_cast<double>(total_separable) / static_cast<double>(total_standard);
  }
};

template <class T>
ComplexityReport complexity_report(ModelT<T>& model, int input_size = 0) {
  ModelSummary s = model.summarize(input_size);
  ComplexityReport r;
  for (const auto& row : s.rows) {
    if (row.macs_standard == 0) continue;
    r.sites.push_back(row);
    r.total_standard += row.macs_standard;
    r.total_separable += row.macs_separable;
  }
  return r;
}

}  // namespace attcdc

#endif  // ATTCDC_MODEL_HPP_
