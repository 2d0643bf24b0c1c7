#include <doctest.h>

#include <cmath>

#include "whitebox/kernels.hpp"
#include "test_util.hpp"

using namespace whitebox;
using test::fd_check;
using test::random_tensor;
using test::random_tensor_no_kink;

TEST_CASE("relu clamps negatives") {
  Tensor x({1, 1, 1, 3}, {-1.0f, 0.0f, 2.0f});
  Tensor y = relu_forward(x);
  CHECK(y[0] == 0.0f);
  CHECK(y[1] == 0.0f);
  CHECK(y[2] == 2.0f);
}

TEST_CASE("relu backward matches finite differences away from the kink") {
  RandomStream rng(3);
  DTensor x = random_tensor_no_kink<double>({2, 2, 3, 3}, rng);
  DTensor probe = random_tensor<double>(x.shape(), rng);
  auto loss = [&]() {
    DTensor y = relu_forward(x);
    double acc = 0.0;
    for (int64_t i = 0; i < y.numel(); ++i) acc += y[i] * probe[i];
    return acc;
  };
  DTensor gx = relu_backward(probe, x);
  CHECK(fd_check(x, gx.vec(), loss) < 1e-4);
}

TEST_CASE("global_avgpool of a constant map is that constant") {
  Tensor x({1, 2, 4, 4});
  for (int64_t i = 0; i < 16; ++i) x[i] = 3.25f;
  for (int64_t i = 16; i < 32; ++i) x[i] = -1.5f;
  Tensor y = global_avgpool_forward(x);
  CHECK(y[0] == doctest::Approx(3.25f));
  CHECK(y[1] == doctest::Approx(-1.5f));
}

TEST_CASE("global_avgpool backward spreads gradient uniformly") {
  RandomStream rng(9);
  DTensor x = random_tensor<double>({2, 3, 4, 4}, rng);
  DTensor probe = random_tensor<double>({2, 3}, rng);
  auto loss = [&]() {
    DTensor y = global_avgpool_forward(x);
    double acc = 0.0;
    for (int64_t i = 0; i < y.numel(); ++i) acc += y[i] * probe[i];
    return acc;
  };
  DTensor gx = global_avgpool_backward(probe, x.shape());
  CHECK(fd_check(x, gx.vec(), loss) < 1e-4);
}

TEST_CASE("maxpool picks window maxima and routes gradient to them") {
  Tensor x({1, 1, 2, 4}, {1.0f, 5.0f, 2.0f, 0.5f,
                          3.0f, -1.0f, 7.0f, 2.0f});
  std::vector<int64_t> argmax;
  Tensor y = maxpool2d_forward(x, 2, 2, &argmax);
  REQUIRE(y.shape() == std::vector<int64_t>{1, 1, 1, 2});
  CHECK(y[0] == 5.0f);
  CHECK(y[1] == 7.0f);

  Tensor go({1, 1, 1, 2}, {1.0f, 2.0f});
  Tensor gx = maxpool2d_backward(go, argmax, x.shape());
  CHECK(gx[1] == 1.0f);  // position of the 5
  CHECK(gx[6] == 2.0f);  // position of the 7
  CHECK(gx[0] == 0.0f);
}

TEST_CASE("maxpool backward matches finite differences") {
  RandomStream rng(13);
  for (int it = 0; it < 4; ++it) {
    DTensor x = random_tensor<double>({2, 2, 4, 4}, rng);
    // separate window competitors so the max is locally stable under h
    for (int64_t i = 0; i < x.numel(); ++i) x[i] = x[i] * 0.5 + 0.002 * static_cast<double>(i % 17);
    std::vector<int64_t> argmax;
    DTensor y0 = maxpool2d_forward(x, 2, 2, &argmax);
    DTensor probe = random_tensor<double>(y0.shape(), rng);
    auto loss = [&]() {
      std::vector<int64_t> am;
      DTensor y = maxpool2d_forward(x, 2, 2, &am);
      double acc = 0.0;
      for (int64_t i = 0; i < y.numel(); ++i) acc += y[i] * probe[i];
      return acc;
    };
    DTensor gx = maxpool2d_backward(probe, argmax, x.shape());
    CHECK(fd_check(x, gx.vec(), loss) < 1e-4);
  }
}

TEST_CASE("linear gradients match finite differences") {
  RandomStream rng(17);
  DTensor x = random_tensor<double>({3, 5}, rng);
  DTensor w = random_tensor<double>({4, 5}, rng);
  DTensor b = random_tensor<double>({4}, rng);
  DTensor probe = random_tensor<double>({3, 4}, rng);
  auto loss = [&]() {
    DTensor y = linear_forward<double>(x, w, &b);
    double acc = 0.0;
    for (int64_t i = 0; i < y.numel(); ++i) acc += y[i] * probe[i];
    return acc;
  };
  DTensor gx, gw, gb;
  linear_backward<double>(probe, x, w, &gx, &gw, &gb);
  CHECK(fd_check(x, gx.vec(), loss) < 1e-4);
  CHECK(fd_check(w, gw.vec(), loss) < 1e-4);
  CHECK(fd_check(b, gb.vec(), loss) < 1e-4);
}

TEST_CASE("batchnorm train output has zero mean and unit variance per channel") {
  RandomStream rng(19);
  const int64_t n = 8, c = 3, h = 5, w = 5;
  Tensor x = random_tensor<float>({n, c, h, w}, rng, -3.0, 5.0);
  Tensor gamma({c}), beta({c}), rm({c}), rv({c});
  gamma.fill(1.0f);
  rv.fill(1.0f);
  BatchNormCache<float> cache;
  Tensor y = batchnorm2d_forward_train<float>(x, gamma, beta, rm, rv, 0.1f,
                                              1e-5f, &cache);
  const int64_t plane = h * w;
  for (int64_t ci = 0; ci < c; ++ci) {
    double mean = 0.0, var = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      for (int64_t p = 0; p < plane; ++p) mean += y[(i * c + ci) * plane + p];
    }
    mean /= static_cast<double>(n * plane);
    for (int64_t i = 0; i < n; ++i) {
      for (int64_t p = 0; p < plane; ++p) {
        const double d = y[(i * c + ci) * plane + p] - mean;
        var += d * d;
      }
    }
    var /= static_cast<double>(n * plane);
    CHECK(std::abs(mean) < 1e-4);
    CHECK(std::abs(var - 1.0) < 1e-4);
  }
}

TEST_CASE("batchnorm running statistics blend with momentum 0.1") {
  RandomStream rng(29);
  Tensor x = random_tensor<float>({4, 2, 3, 3}, rng, 0.0, 2.0);
  Tensor gamma({2}), beta({2}), rm({2}), rv({2});
  gamma.fill(1.0f);
  rm.fill(0.0f);
  rv.fill(1.0f);
  BatchNormCache<float> cache;
  batchnorm2d_forward_train<float>(x, gamma, beta, rm, rv, 0.1f, 1e-5f,
                                   &cache);
  // running mean moved toward the batch mean by 10%
  double batch_mean = 0.0;
  for (int64_t i = 0; i < 4; ++i) {
    for (int64_t p = 0; p < 9; ++p) batch_mean += x[(i * 2) * 9 + p];
  }
  batch_mean /= 36.0;
  CHECK(rm[0] == doctest::Approx(0.1 * batch_mean).epsilon(1e-4));
}

TEST_CASE("batchnorm backward matches finite differences") {
  RandomStream rng(37);
  const int64_t n = 3, c = 2, h = 3, w = 2;
  DTensor x = random_tensor<double>({n, c, h, w}, rng);
  DTensor gamma = random_tensor<double>({c}, rng, 0.5, 1.5);
  DTensor beta = random_tensor<double>({c}, rng);
  DTensor probe = random_tensor<double>(x.shape(), rng);
  auto loss = [&]() {
    DTensor rm({c}), rv({c});
    BatchNormCache<double> cache;
    DTensor y = batchnorm2d_forward_train<double>(x, gamma, beta, rm, rv, 0.1,
                                                  1e-5, &cache);
    double acc = 0.0;
    for (int64_t i = 0; i < y.numel(); ++i) acc += y[i] * probe[i];
    return acc;
  };
  DTensor rm({c}), rv({c});
  BatchNormCache<double> cache;
  batchnorm2d_forward_train<double>(x, gamma, beta, rm, rv, 0.1, 1e-5, &cache);
  DTensor gx, ggamma, gbeta;
  batchnorm2d_backward<double>(probe, cache, gamma, &gx, &ggamma, &gbeta);
  CHECK(fd_check(x, gx.vec(), loss) < 1e-4);
  CHECK(fd_check(gamma, ggamma.vec(), loss) < 1e-4);
  CHECK(fd_check(beta, gbeta.vec(), loss) < 1e-4);
}

TEST_CASE("cross entropy of uniform logits is ln D") {
  Tensor logits({1, 10});
  Tensor labels({1, 10});
  labels[3] = 1.0f;
  const float loss = softmax_cross_entropy<float>(logits, labels, nullptr);
  CHECK(loss == doctest::Approx(std::log(10.0)).epsilon(1e-6));
}

TEST_CASE("cross entropy vanishes at infinite margin") {
  Tensor logits({1, 4});
  logits[2] = 60.0f;  // huge margin for the correct class
  Tensor labels({1, 4});
  labels[2] = 1.0f;
  const float loss = softmax_cross_entropy<float>(logits, labels, nullptr);
  CHECK(loss < 1e-9f);
}

TEST_CASE("cross entropy gradient is (softmax - label)/N and passes FD") {
  RandomStream rng(41);
  DTensor logits = random_tensor<double>({4, 6}, rng, -2.0, 2.0);
  DTensor labels({4, 6});
  for (int64_t i = 0; i < 4; ++i) {
    labels[i * 6 + rng.uniform_int(6)] = 1.0;
  }
  DTensor grad;
  const double base = softmax_cross_entropy<double>(logits, labels, &grad);
  CHECK(base > 0.0);
  auto loss = [&]() {
    return softmax_cross_entropy<double>(logits, labels, nullptr);
  };
  CHECK(fd_check(logits, grad.vec(), loss) < 1e-4);
}

TEST_CASE("cross entropy rejects bad labels") {
  Tensor logits({2, 3});
  Tensor labels({2, 3});
  labels[0] = 1.0f;
  labels[1] = 1.0f;  // two ones in row 0, row 1 all zero
  CHECK_THROWS_AS(softmax_cross_entropy<float>(logits, labels, nullptr), Error);
  CHECK_THROWS_AS(
      softmax_cross_entropy<float>(logits, Tensor({2, 4}), nullptr), Error);
}
