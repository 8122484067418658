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

#ifndef ATTCDC_GRADCAM_HPP_
#define ATTCDC_GRADCAM_HPP_

#include <functional>
#include <string>

#include "attcdc/image.hpp"
#include "attcdc/model.hpp"
#include "attcdc/ops.hpp"

namespace attcdc {

struct HeatmapResult {
  TensorT<float> raw;        // target-layer resolution, ReLU'd weighted sum
  TensorT<float> upsampled;  // input resolution, min-max normalised to [0,1]
  int class_index = 0;
  std::string layer;
};

/// Forward closure for gradient-weighted class activation maps: runs the
/// network on `x` under `ctx`, stores the target feature map in `tap`,
/// returns logits (1,K).
using GradCamForward =
    std::function<TensorT<float>(const TensorT<float>&, Context, TensorT<float>*)>;

/// weights_c = spatial mean of d(logit_class)/d(map_c);
/// heatmap = ReLU(sum_c weights_c * map_c), bilinear upsample, min-max.
inline HeatmapResult grad_cam_from_forward(const GradCamForward& forward,
                                           const TensorT<float>& image, int class_index,
                                           const std::string& layer_label, int out_size) {
  if (image.rank() != 4 || image.dim(0) != 1) {
    throw ContractError("grad_cam expects a single image batch (1,C,H,W), got " +
                        image.shape_string());
  }
  Tape tape;
  Context ctx{&tape, false};
  tape.stop_gradient(image);
  TensorT<float> tap;
  TensorT<float> logits = forward(image, ctx, &tap);
  if (!tap.defined() || tap.rank() != 4 || tap.dim(0) != 1) {
    throw ContractError("grad_cam: forward did not produce a 4-D feature map tap");
  }
  if (logits.rank() != 2 || class_index < 0 || class_index >= logits.dim(1)) {
    throw ContractError("grad_cam: class index " + std::to_string(class_index) +
                        " outside [0," + std::to_string(logits.dim(1)) + ")");
  }
  tape.watch(tap);
  TensorT<float> target = ops::select_element(logits, class_index, ctx);
  tape.backward(target);
  const TensorT<float>* grad = tape.find_grad(tap);

  const int C = tap.dim(1), H = tap.dim(2), W = tap.dim(3);
  HeatmapResult res;
  res.class_index = class_index;
  res.layer = layer_label;
  res.raw = TensorT<float>::zeros({H, W});
  if (grad) {
    std::vector<double> weights(static_cast<size_t>(C), 0.0);
    for (int c = 0; c < C; ++c) {
      double acc = 0.0;
      const float* g = grad->data() + static_cast<int64_t>(c) * H * W;
      for (int i = 0; i < H * W; ++i) acc += g[i];
      weights[static_cast<size_t>(c)] = acc / (H * W);
    }
    for (int i = 0; i < H * W; ++i) {
      double acc = 0.0;
      for (int c = 0; c < C; ++c) {
        acc += weights[static_cast<size_t>(c)] * tap[static_cast<int64_t>(c) * H * W + i];
      }
      res.raw[i] = acc > 0.0 ? static_cast<float>(acc) : 0.0f;
    }
  }

  res.upsampled = bilinear_resize(res.raw, out_size, out_size);
  float lo = res.upsampled[0], hi = res.upsampled[0];
  for (int64_t i = 1; i < res.upsampled.size(); ++i) {
    lo = std::min(lo, res.upsampled[i]);
    hi = std::max(hi, res.upsampled[i]);
  }
  if (hi > lo) {
    for (int64_t i = 0; i < res.upsampled.size(); ++i) {
      res.upsampled[i] = (res.upsampled[i] - lo) / (hi - lo);
    }
  } else if (hi > 0.0f) {
    for (int64_t i = 0; i < res.upsampled.size(); ++i) res.upsampled[i] = 1.0f;
  }
  return res;
}

/// Grad-CAM against a classifier model; the default target layer is the
/// final dense block's post-attention output.
inline HeatmapResult grad_cam(Model& model, const TensorT<float>& image, int class_index,
                              std::string layer = {}) {
  if (layer.empty()) layer = model.last_block_tap();
  const int out_size = image.dim(2);
  auto forward = [&model, &layer](const TensorT<float>& x, Context ctx, TensorT<float>* tap) {
    return model.forward(x, ctx, layer, tap);
  };
  return grad_cam_from_forward(forward, image, class_index, layer, out_size);
}

/// Fraction of total heatmap mass inside quadrant q (0 TL, 1 TR, 2 BL, 3 BR).
inline double quadrant_mass_fraction(const TensorT<float>& heatmap, int quadrant) {
  const int H = heatmap.dim(0), W = heatmap.dim(1);
  const int y0 = (quadrant / 2) ? H / 2 : 0;
  const int y1 = (quadrant / 2) ? H : H / 2;
  const int x0 = (quadrant % 2) ? W / 2 : 0;
  const int x1 = (quadrant % 2) ? W : W / 2;
  double total = 0.0, inside = 0.0;
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const double v = heatmap[static_cast<int64_t>(y) * W + x];
      total += v;
      if (y >= y0 && y < y1 && x >= x0 && x < x1) inside += v;
    }
  }
  return total > 0.0 ? inside / total : 0.0;
}

namespace detail {

// five-stop jet-style map over [0,1]
inline void jet_colormap(double v, uint8_t rgb[3]) {
  v = std::min(1.0, std::max(0.0, v));
  const double r = std::min(1.0, std::max(0.0, 1.5 - std::abs(4.0 * v - 3.0)));
  const double g = std::min(1.0, std::max(0.0, 1.5 - std::abs(4.0 * v - 2.0)));
  const double b = std::min(1.0, std::max(0.0, 1.5 - std::abs(4.0 * v - 1.0)));
  rgb[0] = static_cast<uint8_t>(r * 255.0 + 0.5);
  rgb[1] = static_cast<uint8_t>(g * 255.0 + 0.5);
  rgb[2] = static_cast<uint8_t>(b * 255.0 + 0.5);
}

}  // namespace detail

/// Writes the grayscale image with the heatmap alpha-blended on top:
/// out = (1 - 0.4 h) gray + 0.4 h jet(h). A zero heatmap reproduces the
/// grayscale rendering exactly.
inline ImageU8 render_overlay(const TensorT<float>& gray, const TensorT<float>& heatmap) {
  if (gray.rank() != 2 || !gray.same_shape(heatmap)) {
    throw DimensionError("overlay: image " + gray.shape_string() + " and heatmap " +
                         heatmap.shape_string() + " must be equal 2-D shapes");
  }
  const int H = gray.dim(0), W = gray.dim(1);
  ImageU8 out;
  out.width = W;
  out.height = H;
  out.channels = 3;
  out.pixels.resize(static_cast<size_t>(H) * W * 3);
  for (int64_t i = 0; i < static_cast<int64_t>(H) * W; ++i) {
    const double g = std::min(1.0, std::max(0.0, static_cast<double>(gray[i])));
    const double h = std::min(1.0, std::max(0.0, static_cast<double>(heatmap[i])));
    uint8_t rgb[3];
    detail::jet_colormap(h, rgb);
    const double a = 0.4 * h;
    for (int c = 0; c < 3; ++c) {
      const double v = (1.0 - a) * g * 255.0 + a * rgb[c];
      out.pixels[static_cast<size_t>(i) * 3 + static_cast<size_t>(c)] =
          static_cast<uint8_t>(std::min(255.0, std::max(0.0, v)) + 0.5);
    }
  }
  return out;
}

inline void export_overlay(const TensorT<float>& gray, const TensorT<float>& heatmap,
                           const std::string& path) {
  png::write_file(path, render_overlay(gray, heatmap));
}

/// Raw heatmap as a CSV grid, one row per line.
inline void save_heatmap_csv(const TensorT<float>& heatmap, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write heatmap csv: " + path);
  const int H = heatmap.dim(0), W = heatmap.dim(1);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.6f", heatmap[static_cast<int64_t>(y) * W + x]);
      f << buf << (x + 1 < W ? "," : "\n");
    }
  }
}

}  // namespace attcdc

#endif  // ATTCDC_GRADCAM_HPP_
