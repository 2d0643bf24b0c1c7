#include <doctest.h>

#include "whitebox/kernels.hpp"
#include "whitebox/reference.hpp"
#include "test_util.hpp"

using namespace whitebox;
using test::fd_check;
using test::random_tensor;

TEST_CASE("conv2d: all-ones 3x3 against all-ones kernel sums to 9") {
  Tensor x({1, 1, 3, 3});
  x.fill(1.0f);
  Tensor w({1, 1, 3, 3});
  w.fill(1.0f);
  Tensor y = conv2d_forward<float>(x, w, nullptr, 1, 0);
  REQUIRE(y.shape() == std::vector<int64_t>{1, 1, 1, 1});
  CHECK(y[0] == doctest::Approx(9.0f));
}

TEST_CASE("conv2d: 1x1 identity kernel reproduces the input") {
  RandomStream rng(11);
  Tensor x = random_tensor<float>({2, 1, 5, 4}, rng);
  Tensor w({1, 1, 1, 1});
  w[0] = 1.0f;
  Tensor y = conv2d_forward<float>(x, w, nullptr, 1, 0);
  REQUIRE(y.shape() == x.shape());
  CHECK(y.vec() == x.vec());
}

TEST_CASE("conv2d matches the six-loop reference on random shapes") {
  RandomStream rng(23);
  // the spec's pinned instance first
  {
    Tensor x = random_tensor<float>({2, 3, 8, 8}, rng);
    Tensor w = random_tensor<float>({4, 3, 3, 3}, rng);
    Tensor fast = conv2d_forward<float>(x, w, nullptr, 1, 1);
    Tensor slow = ref::conv2d_forward_naive<float>(x, w, nullptr, 1, 1);
    CHECK(test::max_abs_diff(fast, slow) < 1e-5);
  }
  for (int it = 0; it < 12; ++it) {
    const int64_t n = 1 + rng.uniform_int(3);
    const int64_t cin = 1 + rng.uniform_int(4);
    const int64_t cout = 1 + rng.uniform_int(5);
    const int64_t k = 1 + 2 * rng.uniform_int(2);  // 1 or 3
    const int64_t h = k + rng.uniform_int(7);
    const int64_t w_dim = k + rng.uniform_int(7);
    const int stride = 1 + static_cast<int>(rng.uniform_int(2));
    const int pad = static_cast<int>(rng.uniform_int(2));
    Tensor x = random_tensor<float>({n, cin, h, w_dim}, rng);
    Tensor w = random_tensor<float>({cout, cin, k, k}, rng);
    Tensor b = random_tensor<float>({cout}, rng);
    Tensor fast = conv2d_forward<float>(x, w, &b, stride, pad);
    Tensor slow = ref::conv2d_forward_naive<float>(x, w, &b, stride, pad);
    REQUIRE(fast.shape() == slow.shape());
    CHECK(test::max_abs_diff(fast, slow) < 1e-5);
  }
}

TEST_CASE("conv2d output geometry follows the floor formula") {
  RandomStream rng(5);
  Tensor x = random_tensor<float>({1, 2, 11, 7}, rng);
  Tensor w = random_tensor<float>({3, 2, 3, 3}, rng);
  Tensor y = conv2d_forward<float>(x, w, nullptr, 2, 1);
  CHECK(y.dim(2) == (11 + 2 - 3) / 2 + 1);
  CHECK(y.dim(3) == (7 + 2 - 3) / 2 + 1);
}

TEST_CASE("conv2d rejects mismatched shapes with both shapes named") {
  Tensor x({1, 3, 4, 4});
  Tensor w({2, 5, 3, 3});
  try {
    conv2d_forward<float>(x, w, nullptr, 1, 1);
    FAIL("expected a shape error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kShape);
    CHECK(std::string(e.what()).find("[1x3x4x4]") != std::string::npos);
    CHECK(std::string(e.what()).find("[2x5x3x3]") != std::string::npos);
  }
  CHECK_THROWS_AS(conv2d_forward<float>(x, Tensor({2, 3, 3, 3}), nullptr, 0, 1),
                  Error);
  CHECK_THROWS_AS(conv2d_forward<float>(x, Tensor({2, 3, 3, 3}), nullptr, 1, -1),
                  Error);
}

TEST_CASE("conv2d_backward: zero upstream gradient zeroes everything") {
  RandomStream rng(31);
  Tensor x = random_tensor<float>({2, 2, 5, 5}, rng);
  Tensor w = random_tensor<float>({3, 2, 3, 3}, rng);
  Tensor go({2, 3, 3, 3});  // zeros
  auto g = conv2d_backward<float>(go, x, w, true, 1, 0);
  for (int64_t i = 0; i < g.grad_input.numel(); ++i) CHECK(g.grad_input[i] == 0.0f);
  for (int64_t i = 0; i < g.grad_weight.numel(); ++i) CHECK(g.grad_weight[i] == 0.0f);
  for (int64_t i = 0; i < g.grad_bias.numel(); ++i) CHECK(g.grad_bias[i] == 0.0f);
}

TEST_CASE("conv2d_backward: scalar conv follows the product rule") {
  Tensor x({1, 1, 1, 1});
  x[0] = 2.5f;
  Tensor w({1, 1, 1, 1});
  w[0] = -0.75f;
  Tensor go({1, 1, 1, 1});
  go[0] = 1.0f;
  auto g = conv2d_backward<float>(go, x, w, false, 1, 0);
  CHECK(g.grad_weight[0] == doctest::Approx(2.5f));
  CHECK(g.grad_input[0] == doctest::Approx(-0.75f));
}

TEST_CASE("conv2d_backward requires the saved activation") {
  Tensor w({1, 1, 1, 1});
  Tensor go({1, 1, 1, 1});
  CHECK_THROWS_AS(conv2d_backward<float>(go, Tensor{}, w, false, 1, 0), Error);
}

TEST_CASE("conv2d gradients match central finite differences") {
  RandomStream rng(47);
  for (int it = 0; it < 5; ++it) {
    const int64_t n = 1 + rng.uniform_int(2);
    const int64_t cin = 1 + rng.uniform_int(2);
    const int64_t cout = 1 + rng.uniform_int(3);
    const int64_t k = 1 + 2 * rng.uniform_int(2);
    const int64_t h = k + rng.uniform_int(4);
    const int64_t wd = k + rng.uniform_int(4);
    const int stride = 1 + static_cast<int>(rng.uniform_int(2));
    const int pad = static_cast<int>(rng.uniform_int(2));

    DTensor x = random_tensor<double>({n, cin, h, wd}, rng);
    DTensor w = random_tensor<double>({cout, cin, k, k}, rng);
    DTensor b = random_tensor<double>({cout}, rng);
    DTensor probe;  // fixed random reduction weights -> scalar loss
    {
      DTensor y = conv2d_forward<double>(x, w, &b, stride, pad);
      probe = random_tensor<double>(y.shape(), rng);
    }
    auto loss = [&]() {
      DTensor y = conv2d_forward<double>(x, w, &b, stride, pad);
      double acc = 0.0;
      for (int64_t i = 0; i < y.numel(); ++i) acc += y[i] * probe[i];
      return acc;
    };
    auto grads = conv2d_backward<double>(probe, x, w, true, stride, pad);
    CHECK(fd_check(x, grads.grad_input.vec(), loss) < 1e-4);
    CHECK(fd_check(w, grads.grad_weight.vec(), loss) < 1e-4);
    CHECK(fd_check(b, grads.grad_bias.vec(), loss) < 1e-4);
  }
}

TEST_CASE("conv kernels are invariant to partitioning differences") {
  // The OpenMP path must equal the serial reference bitwise on workloads
  // that split across threads.
  RandomStream rng(71);
  Tensor x = random_tensor<float>({7, 3, 9, 9}, rng);
  Tensor w = random_tensor<float>({5, 3, 3, 3}, rng);
  Tensor b = random_tensor<float>({5}, rng);
  Tensor fast = conv2d_forward<float>(x, w, &b, 1, 1);
  Tensor slow = ref::conv2d_forward_naive<float>(x, w, &b, 1, 1);
  CHECK(test::max_abs_diff(fast, slow) < 1e-5);
}
