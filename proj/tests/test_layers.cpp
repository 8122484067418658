#include "doctest.h"

#include "attcdc/layers.hpp"

#include "support/oracles.hpp"

using namespace attcdc;
using DTensor = TensorT<double>;
using DContext = ContextT<double>;

namespace {

Tensor seeded_uniform(std::vector<int> shape, uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  return Tensor::uniform(std::move(shape), lo, hi, rng);
}

// Independent composition of the attention pipeline in plain loops.
Tensor attention_reference(const AttentionBlockT<float>& blk, const Tensor& x) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int R = C / blk.reduction;
  Tensor out(x.shape());
  for (int n = 0; n < N; ++n) {
    std::vector<double> pooled(static_cast<size_t>(C), 0.0);
    for (int c = 0; c < C; ++c) {
      double acc = 0.0;
      for (int i = 0; i < H * W; ++i) acc += x[(static_cast<int64_t>(n) * C + c) * H * W + i];
      pooled[static_cast<size_t>(c)] = acc / (H * W);
    }
    std::vector<double> hidden(static_cast<size_t>(R), 0.0);
    for (int r = 0; r < R; ++r) {
      double acc = static_cast<double>(blk.fc1.bias[r]);
      for (int c = 0; c < C; ++c) acc += static_cast<double>(blk.fc1.weight[r * C + c]) * pooled[static_cast<size_t>(c)];
      hidden[static_cast<size_t>(r)] = acc > 0.0 ? acc : 0.0;
    }
    for (int c = 0; c < C; ++c) {
      double acc = static_cast<double>(blk.fc2.bias[c]);
      for (int r = 0; r < R; ++r) acc += static_cast<double>(blk.fc2.weight[c * R + r]) * hidden[static_cast<size_t>(r)];
      const double score = 1.0 / (1.0 + std::exp(-acc));
      for (int i = 0; i < H * W; ++i) {
        const int64_t idx = (static_cast<int64_t>(n) * C + c) * H * W + i;
        out[idx] = static_cast<float>(static_cast<double>(x[idx]) * score);
      }
    }
  }
  return out;
}

}  // namespace

TEST_CASE("attention: zero weights and biases halve the map") {
  Rng rng(1);
  AttentionBlockT<float> blk(8, 4, rng);
  for (auto* t : {&blk.fc1.weight, &blk.fc1.bias, &blk.fc2.weight, &blk.fc2.bias}) {
    for (int64_t i = 0; i < t->size(); ++i) (*t)[i] = 0.0f;
  }
  Tensor x = seeded_uniform({2, 8, 3, 3}, 2);
  Tensor scores;
  Tensor y = blk.forward(x, {}, &scores);
  for (int64_t i = 0; i < scores.size(); ++i) CHECK(scores[i] == doctest::Approx(0.5f));
  for (int64_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(0.5f * x[i]));
}

TEST_CASE("attention: large positive fc2 bias saturates scores to 1") {
  Rng rng(3);
  AttentionBlockT<float> blk(8, 4, rng);
  for (int64_t i = 0; i < blk.fc2.bias.size(); ++i) blk.fc2.bias[i] = 20.0f;
  Tensor x = seeded_uniform({1, 8, 4, 4}, 4);
  Tensor y = blk.forward(x, {});
  CHECK(oracles::max_abs_diff(y, x) < 1e-6);
}

TEST_CASE("attention: matches the independent composition oracle") {
  Rng rng(5);
  AttentionBlockT<float> blk(4, 2, rng);
  Tensor x = seeded_uniform({1, 4, 2, 2}, 6);
  Tensor y = blk.forward(x, {});
  Tensor ref = attention_reference(blk, x);
  CHECK(oracles::max_abs_diff(y, ref) < 1e-5);
}

TEST_CASE("attention: scores lie in (0,1), rescale never increases magnitudes") {
  Rng rng(7);
  AttentionBlockT<float> blk(16, 4, rng);
  for (uint64_t s = 0; s < 8; ++s) {
    Tensor x = seeded_uniform({2, 16, 3, 3}, 100 + s, 0.0, 2.0);
    Tensor scores;
    Tensor y = blk.forward(x, {}, &scores);
    for (int64_t i = 0; i < scores.size(); ++i) {
      CHECK(scores[i] > 0.0f);
      CHECK(scores[i] < 1.0f);
    }
    for (int64_t i = 0; i < y.size(); ++i) CHECK(y[i] <= x[i]);
  }
}

TEST_CASE("attention: channel/reduction divisibility enforced") {
  Rng rng(8);
  CHECK_THROWS_AS(AttentionBlockT<float>(10, 4, rng), ConfigError);
  AttentionBlockT<float> blk(8, 4, rng);
  CHECK_THROWS_AS(blk.forward(Tensor::ones({1, 6, 2, 2}), {}), DimensionError);
}

TEST_CASE("attention: forced identity equals pass-through") {
  Rng rng(9);
  AttentionBlockT<float> blk(8, 4, rng);
  blk.force_identity = true;
  Tensor x = seeded_uniform({2, 8, 3, 3}, 10);
  Tensor y = blk.forward(x, {});
  for (int64_t i = 0; i < x.size(); ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("depthwise separable: delta depthwise + identity pointwise is the identity") {
  const int M = 3;
  Rng rng(11);
  DepthwiseSeparableConvT<float> layer(M, M, 3, 1, 1, rng);
  for (int64_t i = 0; i < layer.depthwise.size(); ++i) layer.depthwise[i] = 0.0f;
  for (int c = 0; c < M; ++c) layer.depthwise[c * 9 + 4] = 1.0f;  // centred delta
  for (int64_t i = 0; i < layer.pointwise.size(); ++i) layer.pointwise[i] = 0.0f;
  for (int c = 0; c < M; ++c) layer.pointwise[c * M + c] = 1.0f;
  Tensor x = seeded_uniform({2, M, 5, 5}, 12);
  Tensor y = layer.forward(x, {});
  CHECK(oracles::max_abs_diff(y, x) < 1e-6);
}

TEST_CASE("depthwise separable: parameter count formula") {
  Rng rng(13);
  DepthwiseSeparableConvT<float> layer(32, 128, 3, 1, 1, rng);
  CHECK(param_count<float>(layer) == 128 * 9 + 128 * 32);
  CHECK(param_count<float>(layer) == 5248);
}

TEST_CASE("depthwise separable vs standard MAC counts match the complexity formulas") {
  // M=128, N=32, Dk=3, Dp=28
  Rng rng(14);
  Tensor x = Tensor::uniform({1, 128, 28, 28}, -1, 1, rng);
  auto& counter = MacCounter::instance();

  counter.enable(true);
  counter.reset();
  Tensor ks = Tensor::uniform({32, 128, 3, 3}, -1, 1, rng);
  ops::conv2d(x, ks, 1, 1);
  const uint64_t standard = counter.count();

  counter.reset();
  Tensor kd = Tensor::uniform({128, 1, 3, 3}, -1, 1, rng);
  Tensor kp = Tensor::uniform({32, 128, 1, 1}, -1, 1, rng);
  ops::pointwise_conv2d(ops::depthwise_conv2d(x, kd, 1, 1), kp);
  const uint64_t separable = counter.count();
  counter.enable(false);

  CHECK(standard == 28901376ULL);   // N*Dp^2*Dk^2*M
  CHECK(separable == 4114432ULL);   // M*Dp^2*(Dk^2+N)
  const double ratio = static_cast<double>(separable) / static_cast<double>(standard);
  CHECK(ratio == doctest::Approx(1.0 / 32 + 1.0 / 9).epsilon(1e-9));
}

TEST_CASE("dense layer: parameter counts and output channels") {
  Rng rng(15);
  DenseLayerT<float> std_layer(64, 32, ConvMode::kStandard, rng);
  CHECK(param_count<float>(std_layer) == 45440);
  DenseLayerT<float> dws_layer(64, 32, ConvMode::kDepthwiseSeparable, rng);
  CHECK(param_count<float>(dws_layer) == 13824);
  CHECK(std_layer.out_channels() == 96);

  Tensor x = seeded_uniform({2, 64, 4, 4}, 16);
  Tensor y = std_layer.forward(x, {});
  CHECK(y.dim(1) == 96);
  // concat preserves the input half bitwise
  for (int n = 0; n < 2; ++n) {
    for (int i = 0; i < 64 * 16; ++i) {
      CHECK(y[(n * 96) * 16 + i] == x[(n * 64) * 16 + i]);
    }
  }
}

TEST_CASE("transition: compression, halving, constant preservation") {
  Rng rng(17);
  TransitionT<float> t(256, 0.5, rng);
  CHECK(t.out_channels == 128);
  Tensor x = seeded_uniform({1, 256, 56, 56}, 18);
  Tensor y = t.forward(x, {});
  CHECK(y.shape() == std::vector<int>{1, 128, 28, 28});

  // identity-like single-channel path: bn at init stats, 1x1 conv weight 1
  TransitionT<float> tiny(1, 1.0, rng);
  tiny.conv.weight[0] = 1.0f;
  Tensor c = Tensor::full({1, 1, 4, 4}, 0.75f);
  Tensor yc = tiny.forward(c, {});
  for (int64_t i = 0; i < yc.size(); ++i) {
    CHECK(yc[i] == doctest::Approx(0.75f).epsilon(1e-4));
  }

  CHECK_THROWS_AS(t.forward(Tensor::ones({1, 256, 1, 1}), {}), DimensionError);
}

TEST_CASE("layer parameter counts: attention, batchnorm, linear") {
  Rng rng(19);
  AttentionBlockT<float> attn(256, 16, rng);
  CHECK(param_count<float>(attn) == 256 * 16 + 16 + 16 * 256 + 256);
  CHECK(param_count<float>(attn) == 8464);

  BatchNorm2dT<float> bn(77);
  CHECK(param_count<float>(bn) == 154);

  LinearT<float> head(4, 1024, rng);
  CHECK(param_count<float>(head) == 4100);
}

TEST_CASE("parameter-count formulas hold for randomized configurations") {
  Rng rng(20);
  for (int trial = 0; trial < 12; ++trial) {
    const int r = 1 << rng.bounded(4);                       // 1,2,4,8
    const int C = r * static_cast<int>(1 + rng.bounded(24));  // divisible by r
    AttentionBlockT<float> attn(C, r, rng);
    CHECK(param_count<float>(attn) == 2LL * C * (C / r) + C / r + C);

    const int M = 1 + static_cast<int>(rng.bounded(64));
    const int N = 1 + static_cast<int>(rng.bounded(64));
    const int Dk = 1 + 2 * static_cast<int>(rng.bounded(3));
    DepthwiseSeparableConvT<float> dws(N, M, Dk, 1, Dk / 2, rng);
    CHECK(param_count<float>(dws) == static_cast<int64_t>(M) * Dk * Dk + static_cast<int64_t>(M) * N);

    const int k = 4 * (1 + static_cast<int>(rng.bounded(12)));
    const int Cin = 1 + static_cast<int>(rng.bounded(128));
    DenseLayerT<float> layer(Cin, k, ConvMode::kStandard, rng);
    CHECK(param_count<float>(layer) ==
          2LL * Cin + static_cast<int64_t>(Cin) * 4 * k + 8LL * k + 36LL * k * k);
  }
}

TEST_CASE("fd: gradients flow through whole layers") {
  Rng rng(21);
  DTensor x = DTensor::uniform({2, 8, 5, 5}, -1, 1, rng);

  SUBCASE("attention block") {
    AttentionBlockT<double> blk(8, 4, rng);
    auto op = [&](DContext ctx) { return blk.forward(x, ctx); };
    std::vector<DTensor*> params{&x, &blk.fc1.weight, &blk.fc1.bias, &blk.fc2.weight,
                                 &blk.fc2.bias};
    DTensor probe = op(DContext{});
    Rng wr(900);
    DTensor w(probe.shape());
    for (int64_t i = 0; i < w.size(); ++i) w[i] = wr.uniform() < 0.5 ? -1.0 : 1.0;
    auto build = [&](DContext ctx) { return ops::reduce_sum(ops::mul(op(ctx), w, ctx), ctx); };
    auto [lv, grads] = oracles::taped_grads(params, build);
    (void)lv;
    auto fd = [&]() { return static_cast<double>(build(DContext{})[0]); };
    oracles::FdResult r = oracles::fd_compare(params, grads, fd);
    CHECK(r.max_rel_err < 1e-3);
    CHECK(r.skipped_fraction() < 0.1);
  }

  SUBCASE("depthwise separable layer") {
    DepthwiseSeparableConvT<double> layer(6, 8, 3, 1, 1, rng);
    std::vector<DTensor*> params{&x, &layer.depthwise, &layer.pointwise};
    auto build = [&](DContext ctx) {
      return ops::reduce_sum(layer.forward(x, ctx), ctx);
    };
    auto [lv, grads] = oracles::taped_grads(params, build);
    (void)lv;
    auto fd = [&]() { return static_cast<double>(build(DContext{})[0]); };
    oracles::FdResult r = oracles::fd_compare(params, grads, fd);
    CHECK(r.max_rel_err < 1e-3);
    CHECK(r.skipped_fraction() < 0.1);
  }

  SUBCASE("dense layer, both conv modes") {
    for (ConvMode mode : {ConvMode::kStandard, ConvMode::kDepthwiseSeparable}) {
      DenseLayerT<double> layer(8, 4, mode, rng);
      std::vector<DTensor*> params{&x};
      layer.visit("dl", [&params](const std::string&, DTensor& t, bool trainable) {
        if (trainable) params.push_back(&t);
      });
      auto build = [&](DContext ctx) { return ops::reduce_sum(layer.forward(x, ctx), ctx); };
      auto [lv, grads] = oracles::taped_grads(params, build);
      (void)lv;
      auto fd = [&]() { return static_cast<double>(build(DContext{nullptr, true})[0]); };
      oracles::FdResult r = oracles::fd_compare(params, grads, fd);
      CHECK(r.max_rel_err < 1e-3);
      CHECK(r.skipped_fraction() < 0.1);
    }
  }

  SUBCASE("transition") {
    TransitionT<double> t(8, 0.5, rng);
    std::vector<DTensor*> params{&x};
    t.visit("t", [&params](const std::string&, DTensor& tns, bool trainable) {
      if (trainable) params.push_back(&tns);
    });
    auto build = [&](DContext ctx) { return ops::reduce_sum(t.forward(x, ctx), ctx); };
    auto [lv, grads] = oracles::taped_grads(params, build);
    (void)lv;
    auto fd = [&]() { return static_cast<double>(build(DContext{nullptr, true})[0]); };
    oracles::FdResult r = oracles::fd_compare(params, grads, fd);
    CHECK(r.max_rel_err < 1e-3);
    CHECK(r.skipped_fraction() < 0.1);
  }
}
