#include "doctest.h"

#include "attcdc/ops.hpp"

#include "support/oracles.hpp"

using namespace attcdc;

namespace {

Tensor seeded_uniform(std::vector<int> shape, uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  return Tensor::uniform(std::move(shape), lo, hi, rng);
}

}  // namespace

TEST_CASE("conv2d: all-ones 3x3 input with 2x2 ones kernel gives 4.0 everywhere") {
  Tensor x = Tensor::ones({1, 1, 3, 3});
  Tensor k = Tensor::ones({1, 1, 2, 2});
  Tensor y = ops::conv2d(x, k, 1, 0);
  CHECK(y.shape() == std::vector<int>{1, 1, 2, 2});
  for (int64_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(4.0f));
}

TEST_CASE("conv2d: one-hot 1x1 kernel selects a channel") {
  Tensor x = seeded_uniform({2, 3, 5, 4}, 11);
  for (int c = 0; c < 3; ++c) {
    Tensor k = Tensor::zeros({1, 3, 1, 1});
    k[c] = 1.0f;
    Tensor y = ops::conv2d(x, k, 1, 0);
    for (int n = 0; n < 2; ++n) {
      for (int i = 0; i < 20; ++i) {
        CHECK(y[n * 20 + i] == x[(n * 3 + c) * 20 + i]);
      }
    }
  }
}

TEST_CASE("conv2d: matches the direct nested-loop oracle") {
  Tensor x = seeded_uniform({1, 2, 4, 4}, 42);
  Tensor k = seeded_uniform({3, 2, 3, 3}, 43);
  Tensor y = ops::conv2d(x, k, 1, 1);
  Tensor ref = oracles::direct_conv2d(x, k, 1, 1);
  CHECK(oracles::max_abs_diff(y, ref) < 1e-5);

  // a strided case as well
  Tensor x2 = seeded_uniform({2, 3, 9, 7}, 44);
  Tensor k2 = seeded_uniform({4, 3, 3, 3}, 45);
  Tensor y2 = ops::conv2d(x2, k2, 2, 1);
  Tensor ref2 = oracles::direct_conv2d(x2, k2, 2, 1);
  CHECK(y2.same_shape(ref2));
  CHECK(oracles::max_abs_diff(y2, ref2) < 1e-5);
}

TEST_CASE("conv2d: same-padding with odd kernel preserves spatial dims") {
  for (int dk : {1, 3, 5}) {
    Tensor x = seeded_uniform({1, 2, 8, 6}, 7 + dk);
    Tensor k = seeded_uniform({3, 2, dk, dk}, 8 + dk);
    Tensor y = ops::conv2d(x, k, 1, (dk - 1) / 2);
    CHECK(y.dim(2) == 8);
    CHECK(y.dim(3) == 6);
  }
}

TEST_CASE("conv2d: shape and configuration errors") {
  Tensor x = Tensor::ones({1, 2, 4, 4});
  CHECK_THROWS_AS(ops::conv2d(x, Tensor::ones({1, 3, 2, 2}), 1, 0), DimensionError);
  CHECK_THROWS_AS(ops::conv2d(x, Tensor::ones({1, 2, 2, 2}), 0, 0), ConfigError);
  CHECK_THROWS_AS(ops::conv2d(x, Tensor::ones({1, 2, 2, 2}), 1, -1), ConfigError);
  CHECK_THROWS_AS(ops::conv2d(x, Tensor::ones({1, 2, 6, 6}), 1, 0), DimensionError);
  CHECK_THROWS_AS(ops::conv2d(x.reshaped({2, 4, 4}), Tensor::ones({1, 2, 2, 2}), 1, 0),
                  DimensionError);
}

TEST_CASE("conv2d: identical seeds give bitwise identical results") {
  Tensor a = ops::conv2d(seeded_uniform({1, 3, 6, 6}, 5), seeded_uniform({2, 3, 3, 3}, 6), 1, 1);
  Tensor b = ops::conv2d(seeded_uniform({1, 3, 6, 6}, 5), seeded_uniform({2, 3, 3, 3}, 6), 1, 1);
  for (int64_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("depthwise_conv2d: per-channel 1x1 kernels scale channels") {
  Tensor x({1, 2, 2, 2});
  for (int i = 0; i < 4; ++i) x[i] = 1.0f;
  for (int i = 4; i < 8; ++i) x[i] = 2.0f;
  Tensor k = Tensor::full({2, 1, 1, 1}, 3.0f);
  Tensor y = ops::depthwise_conv2d(x, k, 1, 0);
  for (int i = 0; i < 4; ++i) CHECK(y[i] == doctest::Approx(3.0f));
  for (int i = 4; i < 8; ++i) CHECK(y[i] == doctest::Approx(6.0f));
}

TEST_CASE("depthwise_conv2d: zero kernel annihilates") {
  Tensor y = ops::depthwise_conv2d(seeded_uniform({1, 3, 4, 4}, 1), Tensor::zeros({3, 1, 3, 3}),
                                   1, 1);
  for (int64_t i = 0; i < y.size(); ++i) CHECK(y[i] == 0.0f);
}

TEST_CASE("depthwise_conv2d: matches per-channel loop oracle") {
  Tensor x = seeded_uniform({2, 4, 6, 5}, 21);
  Tensor k = seeded_uniform({4, 1, 3, 3}, 22);
  Tensor y = ops::depthwise_conv2d(x, k, 1, 1);
  Tensor ref = oracles::direct_depthwise(x, k, 1, 1);
  CHECK(oracles::max_abs_diff(y, ref) < 1e-5);
}

TEST_CASE("depthwise_conv2d: output channel c only depends on input channel c") {
  Tensor x = seeded_uniform({1, 3, 5, 5}, 31);
  Tensor k = seeded_uniform({3, 1, 3, 3}, 32);
  Tensor y0 = ops::depthwise_conv2d(x, k, 1, 1);
  Tensor x2 = x.clone();
  for (int i = 0; i < 25; ++i) x2[25 + i] += 5.0f;  // perturb channel 1 only
  Tensor y1 = ops::depthwise_conv2d(x2, k, 1, 1);
  for (int i = 0; i < 25; ++i) {
    CHECK(y0[i] == y1[i]);            // channel 0 untouched, bitwise
    CHECK(y0[50 + i] == y1[50 + i]);  // channel 2 untouched, bitwise
  }
  CHECK_THROWS_AS(ops::depthwise_conv2d(x, Tensor::ones({2, 1, 3, 3}), 1, 1), DimensionError);
}

TEST_CASE("pointwise_conv2d: identity mix reproduces the input") {
  const int M = 3;
  Tensor x = seeded_uniform({2, M, 4, 4}, 9);
  Tensor k = Tensor::zeros({M, M, 1, 1});
  for (int i = 0; i < M; ++i) k[i * M + i] = 1.0f;
  Tensor y = ops::pointwise_conv2d(x, k);
  CHECK(oracles::max_abs_diff(y, x) < 1e-6);
}

TEST_CASE("pointwise_conv2d: all-ones 1-filter kernel sums channels") {
  Tensor x = seeded_uniform({1, 3, 2, 2}, 10);
  Tensor y = ops::pointwise_conv2d(x, Tensor::ones({1, 3, 1, 1}));
  for (int i = 0; i < 4; ++i) {
    double s = static_cast<double>(x[i]) + x[4 + i] + x[8 + i];
    CHECK(y[i] == doctest::Approx(s).epsilon(1e-6));
  }
}

TEST_CASE("pointwise_conv2d: bitwise identical to conv2d on the same arguments") {
  Tensor x = seeded_uniform({2, 5, 3, 3}, 12);
  Tensor k = seeded_uniform({4, 5, 1, 1}, 13);
  Tensor a = ops::pointwise_conv2d(x, k);
  Tensor b = ops::conv2d(x, k, 1, 0);
  for (int64_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  CHECK_THROWS_AS(ops::pointwise_conv2d(x, seeded_uniform({4, 5, 3, 3}, 14)), DimensionError);
}

TEST_CASE("global_avg_pool: constants and a hand mean") {
  Tensor c = Tensor::full({2, 3, 4, 4}, 7.0f);
  Tensor y = ops::global_avg_pool(c);
  CHECK(y.shape() == std::vector<int>{2, 3});
  for (int64_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(7.0f));

  Tensor m = Tensor::from_data({1, 1, 2, 2}, {1.0f, 2.0f, 3.0f, 4.0f});
  CHECK(ops::global_avg_pool(m)[0] == doctest::Approx(2.5f));
}

TEST_CASE("batchnorm2d: eval with init stats and unit affine is identity-like") {
  Tensor x = seeded_uniform({2, 3, 4, 4}, 15);
  Tensor gamma = Tensor::ones({3}), beta = Tensor::zeros({3});
  Tensor rm = Tensor::zeros({3}), rv = Tensor::ones({3});
  Tensor y = ops::batchnorm2d(x, gamma, beta, rm, rv, false, 0.1, 1e-12);
  CHECK(oracles::max_abs_diff(y, x) < 1e-5);
}

TEST_CASE("batchnorm2d: train mode normalises {0,2} to about -1,+1") {
  Tensor x = Tensor::from_data({2, 1, 1, 1}, {0.0f, 2.0f});
  Tensor gamma = Tensor::ones({1}), beta = Tensor::zeros({1});
  Tensor rm = Tensor::zeros({1}), rv = Tensor::ones({1});
  Tensor y = ops::batchnorm2d(x, gamma, beta, rm, rv, true, 0.1, 1e-5);
  CHECK(y[0] == doctest::Approx(-0.99999).epsilon(1e-4));
  CHECK(y[1] == doctest::Approx(0.99999).epsilon(1e-4));
  // running stats moved toward the batch: mean 1, unbiased var 2
  CHECK(rm[0] == doctest::Approx(0.1f));
  CHECK(rv[0] == doctest::Approx(0.9f + 0.1f * 2.0f));
}

TEST_CASE("batchnorm2d: gamma 0 pins output to beta") {
  Tensor x = seeded_uniform({2, 2, 3, 3}, 16);
  Tensor gamma = Tensor::zeros({2}), beta = Tensor::full({2}, 5.0f);
  Tensor rm = Tensor::zeros({2}), rv = Tensor::ones({2});
  Tensor y = ops::batchnorm2d(x, gamma, beta, rm, rv, true, 0.1, 1e-5);
  for (int64_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(5.0f));
}

TEST_CASE("batchnorm2d: train mode needs at least two values per channel") {
  Tensor x = Tensor::ones({1, 2, 1, 1});
  Tensor gamma = Tensor::ones({2}), beta = Tensor::zeros({2});
  Tensor rm = Tensor::zeros({2}), rv = Tensor::ones({2});
  CHECK_THROWS_AS(ops::batchnorm2d(x, gamma, beta, rm, rv, true, 0.1, 1e-5), ContractError);
}

TEST_CASE("sigmoid at zero, softmax of equal logits") {
  Tensor z = Tensor::zeros({1, 1});
  CHECK(ops::sigmoid(z)[0] == doctest::Approx(0.5f));
  Tensor logits = Tensor::full({1, 4}, 3.25f);
  Tensor p = ops::softmax(logits);
  for (int i = 0; i < 4; ++i) CHECK(p[i] == doctest::Approx(0.25f));
}

TEST_CASE("channel_concat stacks and complementary slices recover bitwise") {
  Tensor a = seeded_uniform({2, 3, 4, 4}, 17);
  Tensor b = seeded_uniform({2, 5, 4, 4}, 18);
  Tensor y = ops::channel_concat<float>({a, b});
  CHECK(y.dim(1) == 8);
  Tensor sa = ops::slice_channels(y, 0, 3);
  Tensor sb = ops::slice_channels(y, 3, 8);
  for (int64_t i = 0; i < a.size(); ++i) CHECK(sa[i] == a[i]);
  for (int64_t i = 0; i < b.size(); ++i) CHECK(sb[i] == b[i]);
  CHECK_THROWS_AS(ops::channel_concat<float>({a, seeded_uniform({2, 3, 5, 4}, 19)}),
                  DimensionError);
}

TEST_CASE("avg/max pool basics") {
  Tensor x = Tensor::from_data({1, 1, 2, 2}, {1.0f, 2.0f, 3.0f, 4.0f});
  CHECK(ops::avg_pool2d(x, 2, 2)[0] == doctest::Approx(2.5f));
  CHECK(ops::max_pool2d(x, 2, 2, 0)[0] == doctest::Approx(4.0f));
  // odd extents drop the trailing row/column under floor semantics
  Tensor o = seeded_uniform({1, 1, 5, 5}, 20);
  CHECK(ops::avg_pool2d(o, 2, 2).dim(2) == 2);
  CHECK_THROWS_AS(ops::avg_pool2d(Tensor::ones({1, 1, 1, 3}), 2, 2), DimensionError);
}

TEST_CASE("broadcast_mul rescales per channel") {
  Tensor x = Tensor::ones({1, 2, 2, 2});
  Tensor s = Tensor::from_data({1, 2}, {0.5f, 2.0f});
  Tensor y = ops::broadcast_mul(x, s);
  for (int i = 0; i < 4; ++i) CHECK(y[i] == doctest::Approx(0.5f));
  for (int i = 4; i < 8; ++i) CHECK(y[i] == doctest::Approx(2.0f));
  CHECK_THROWS_AS(ops::broadcast_mul(x, Tensor::ones({1, 3})), DimensionError);
}

TEST_CASE("linear applies weight and bias") {
  Tensor x = Tensor::from_data({1, 2}, {1.0f, 2.0f});
  Tensor w = Tensor::from_data({2, 2}, {1.0f, 0.0f, 0.0f, 1.0f});
  Tensor b = Tensor::from_data({2}, {0.5f, -0.5f});
  Tensor y = ops::linear(x, w, b);
  CHECK(y[0] == doctest::Approx(1.5f));
  CHECK(y[1] == doctest::Approx(1.5f));
  CHECK_THROWS_AS(ops::linear(x, Tensor::ones({2, 3}), b), DimensionError);
}

TEST_CASE("public ops keep finite inputs finite") {
  Tensor x = seeded_uniform({2, 4, 6, 6}, 23, -3.0, 3.0);
  Tensor k = seeded_uniform({4, 4, 3, 3}, 24);
  CHECK(ops::conv2d(x, k, 1, 1).all_finite());
  CHECK(ops::softmax(seeded_uniform({3, 7}, 25, -80.0, 80.0)).all_finite());
  CHECK(ops::sigmoid(seeded_uniform({40}, 26, -100.0, 100.0)).all_finite());
  Tensor gamma = Tensor::ones({4}), beta = Tensor::zeros({4});
  Tensor rm = Tensor::zeros({4}), rv = Tensor::ones({4});
  CHECK(ops::batchnorm2d(x, gamma, beta, rm, rv, true, 0.1, 1e-5).all_finite());
}

TEST_CASE("tensor invariants") {
  CHECK_THROWS_AS(Tensor::zeros({2, 0, 3}), DimensionError);
  CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1.0f, 2.0f}), DimensionError);
  Tensor t = Tensor::zeros({2, 3});
  CHECK(t.size() == 6);
  CHECK_THROWS_AS(t.reshaped({4, 2}), DimensionError);
  CHECK(t.reshaped({3, 2}).dim(0) == 3);
}
