#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "attcdc/gradcam.hpp"

#include "support/oracles.hpp"

using namespace attcdc;
namespace fs = std::filesystem;

namespace {

ModelConfig cam_config() {
  ModelConfig cfg;
  cfg.block_layout = {1, 1};
  cfg.growth_rate = 8;
  cfg.num_classes = 4;
  cfg.attention = true;
  cfg.attention_reduction = 4;
  cfg.conv_mode = ConvMode::kDepthwiseSeparable;
  cfg.input_size = 64;
  return cfg;
}

}  // namespace

TEST_CASE("grad_cam: constant feature maps give a spatially uniform heatmap") {
  // tap = relu(x) on a constant positive image; logits = linear(GAP(tap))
  Rng rng(1);
  Tensor w = Tensor::uniform({2, 1}, 0.1, 1.0, rng);
  Tensor b = Tensor::zeros({2});
  auto forward = [&](const Tensor& x, Context ctx, Tensor* tap) {
    Tensor f = ops::relu(x, ctx);
    if (tap) *tap = f;
    return ops::linear(ops::global_avg_pool(f, ctx), w, b, ctx);
  };
  Tensor image = Tensor::full({1, 1, 6, 6}, 0.75f);
  HeatmapResult r = grad_cam_from_forward(forward, image, 0, "relu", 6);
  for (int64_t i = 0; i < r.raw.size(); ++i) CHECK(r.raw[i] == r.raw[0]);
  // constant positive map normalises to all ones
  for (int64_t i = 0; i < r.upsampled.size(); ++i) CHECK(r.upsampled[i] == 1.0f);
}

TEST_CASE("grad_cam: linear-head analytic case matches within 1e-5") {
  // tap = conv(x); logit_k = GAP(tap) . W_k with W selecting channel 0, so
  // the analytic heatmap is ReLU(tap_0) up to the positive 1/(HW) factor.
  Rng rng(2);
  const int C = 3, S = 8;
  Tensor kernel = Tensor::uniform({C, 1, 3, 3}, -1, 1, rng);
  Tensor w = Tensor::zeros({2, C});
  w[0 * C + 0] = 1.0f;   // class 0 reads channel 0
  w[1 * C + 2] = -0.5f;  // class 1 reads channel 2
  Tensor b = Tensor::zeros({2});
  Tensor tap_saved;
  auto forward = [&](const Tensor& x, Context ctx, Tensor* tap) {
    Tensor f = ops::conv2d(x, kernel, 1, 1, ctx);
    if (tap) *tap = f;
    tap_saved = f;
    return ops::linear(ops::global_avg_pool(f, ctx), w, b, ctx);
  };
  Tensor image = Tensor::uniform({1, 1, S, S}, -1, 1, rng);
  HeatmapResult r = grad_cam_from_forward(forward, image, 0, "conv", S);

  // oracle: weights = (1/(HW), 0, 0); cam = ReLU(tap_0 / (HW))
  TensorT<float> expect({S, S});
  for (int i = 0; i < S * S; ++i) {
    const float v = tap_saved[i] / static_cast<float>(S * S);
    expect[i] = v > 0 ? v : 0.0f;
  }
  CHECK(oracles::max_abs_diff(r.raw, expect) < 1e-5);
}

TEST_CASE("grad_cam: identical inputs give identical heatmaps") {
  Model model(cam_config(), 3);
  Rng rng(4);
  Tensor image = Tensor::uniform({1, 3, 64, 64}, -1, 1, rng);
  HeatmapResult a = grad_cam(model, image, 2);
  HeatmapResult b = grad_cam(model, image, 2);
  for (int64_t i = 0; i < a.upsampled.size(); ++i) CHECK(a.upsampled[i] == b.upsampled[i]);
  CHECK(a.layer == "block2");  // default target: final block tap
}

TEST_CASE("grad_cam: heatmap unaffected by non-target logit paths") {
  Model model(cam_config(), 5);
  Rng rng(6);
  Tensor image = Tensor::uniform({1, 3, 64, 64}, -1, 1, rng);
  HeatmapResult before = grad_cam(model, image, 1);
  // shift another class's bias; the target logit path is untouched
  auto params = model.named_parameters();
  for (auto& [name, t] : params) {
    if (name == "head.bias") (*t)[3] += 5.0f;
  }
  HeatmapResult after = grad_cam(model, image, 1);
  for (int64_t i = 0; i < before.upsampled.size(); ++i) {
    CHECK(before.upsampled[i] == after.upsampled[i]);
  }
}

TEST_CASE("grad_cam: shape contracts and error cases") {
  Model model(cam_config(), 7);
  Rng rng(8);
  Tensor image = Tensor::uniform({1, 3, 64, 64}, -1, 1, rng);
  HeatmapResult r = grad_cam(model, image, 0, "block1");
  CHECK(r.raw.dim(0) == 16);  // 64 through the stride-4 stem
  CHECK(r.upsampled.shape() == std::vector<int>{64, 64});
  for (int64_t i = 0; i < r.raw.size(); ++i) CHECK(r.raw[i] >= 0.0f);
  float mx = 0;
  for (int64_t i = 0; i < r.upsampled.size(); ++i) mx = std::max(mx, r.upsampled[i]);
  CHECK((mx == 1.0f || mx == 0.0f));

  CHECK_THROWS_AS(grad_cam(model, image, 99), ContractError);
  CHECK_THROWS_AS(grad_cam(model, image, 0, "nonsense"), ContractError);
  Tensor batch2 = Tensor::ones({2, 3, 64, 64});
  CHECK_THROWS_AS(grad_cam(model, batch2, 0), ContractError);
}

TEST_CASE("quadrant mass fractions partition the heatmap") {
  Rng rng(9);
  TensorT<float> h({10, 10});
  for (int64_t i = 0; i < h.size(); ++i) h[i] = static_cast<float>(rng.uniform(0, 1));
  double sum = 0;
  for (int q = 0; q < 4; ++q) sum += quadrant_mass_fraction(h, q);
  CHECK(sum == doctest::Approx(1.0));

  TensorT<float> corner = TensorT<float>::zeros({8, 8});
  corner[0] = 3.0f;  // top-left
  CHECK(quadrant_mass_fraction(corner, 0) == doctest::Approx(1.0));
  CHECK(quadrant_mass_fraction(corner, 3) == doctest::Approx(0.0));
}

TEST_CASE("overlay: zero heatmap reproduces the grayscale rendering") {
  Rng rng(10);
  TensorT<float> gray({12, 12});
  for (int64_t i = 0; i < gray.size(); ++i) gray[i] = static_cast<float>(rng.uniform(0, 1));
  TensorT<float> zero = TensorT<float>::zeros({12, 12});
  ImageU8 img = render_overlay(gray, zero);
  CHECK(img.width == 12);
  CHECK(img.height == 12);
  CHECK(img.channels == 3);
  for (int64_t i = 0; i < gray.size(); ++i) {
    const uint8_t expected = static_cast<uint8_t>(gray[i] * 255.0 + 0.5);
    for (int c = 0; c < 3; ++c) {
      CHECK(img.pixels[static_cast<size_t>(i) * 3 + static_cast<size_t>(c)] == expected);
    }
  }
}

TEST_CASE("overlay: dimensions match and the png bytes are reproducible") {
  Rng rng(11);
  TensorT<float> gray({16, 16});
  TensorT<float> heat({16, 16});
  for (int64_t i = 0; i < gray.size(); ++i) {
    gray[i] = static_cast<float>(rng.uniform(0, 1));
    heat[i] = static_cast<float>(rng.uniform(0, 1));
  }
  fs::path dir = fs::temp_directory_path() / "attcdc_overlay";
  fs::remove_all(dir);
  fs::create_directories(dir);
  export_overlay(gray, heat, (dir / "a.png").string());
  export_overlay(gray, heat, (dir / "b.png").string());
  std::ifstream fa(dir / "a.png", std::ios::binary), fb(dir / "b.png", std::ios::binary);
  std::vector<char> ba((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
  std::vector<char> bb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
  CHECK(!ba.empty());
  CHECK(ba == bb);

  ImageU8 back = png::read_file((dir / "a.png").string());
  CHECK(back.width == 16);
  CHECK(back.channels == 3);

  save_heatmap_csv(heat, (dir / "h.csv").string());
  std::ifstream hc(dir / "h.csv");
  std::string first;
  std::getline(hc, first);
  CHECK(std::count(first.begin(), first.end(), ',') == 15);
  CHECK_THROWS_AS(export_overlay(gray, heat, (dir / "nodir" / "x.png").string()), IoError);
}

TEST_CASE("heatmap mass concentrates differently for different target layers") {
  // structural smoke check that layer selection routes the tap correctly
  Model model(cam_config(), 12);
  Rng rng(13);
  Tensor image = Tensor::uniform({1, 3, 64, 64}, -1, 1, rng);
  HeatmapResult b1 = grad_cam(model, image, 0, "block1");
  HeatmapResult b2 = grad_cam(model, image, 0, "block2");
  CHECK(b1.raw.dim(0) > b2.raw.dim(0));
}
