#include <doctest.h>

#include "whitebox/kernels.hpp"
#include "whitebox/reference.hpp"
#include "test_util.hpp"

using namespace whitebox;
using test::fd_check;
using test::random_tensor;

TEST_CASE("channel_scale with unit scale is the identity, bitwise") {
  RandomStream rng(53);
  Tensor x = random_tensor<float>({3, 4, 5, 5}, rng);
  Tensor s({3, 4});
  s.fill(1.0f);
  Tensor y = channel_scale_forward(x, s);
  CHECK(y.vec() == x.vec());
}

TEST_CASE("channel_scale with zero scale annihilates") {
  RandomStream rng(59);
  Tensor x = random_tensor<float>({2, 3, 4, 4}, rng);
  Tensor s({2, 3});
  Tensor y = channel_scale_forward(x, s);
  for (int64_t i = 0; i < y.numel(); ++i) CHECK(y[i] == 0.0f);
}

TEST_CASE("channel_scale equals the elementwise loop oracle exactly") {
  RandomStream rng(61);
  Tensor x = random_tensor<float>({4, 6, 7, 3}, rng);
  Tensor s = random_tensor<float>({4, 6}, rng);
  Tensor fast = channel_scale_forward(x, s);
  Tensor slow = ref::channel_scale_naive(x, s);
  CHECK(fast.vec() == slow.vec());
}

TEST_CASE("channel_scale rejects dimension mismatches") {
  Tensor x({2, 3, 4, 4});
  CHECK_THROWS_AS(channel_scale_forward(x, Tensor({2, 4})), Error);
  CHECK_THROWS_AS(channel_scale_forward(x, Tensor({3, 3})), Error);
}

TEST_CASE("channel_scale gradients match finite differences") {
  RandomStream rng(67);
  DTensor x = random_tensor<double>({2, 3, 4, 4}, rng);
  DTensor s = random_tensor<double>({2, 3}, rng);
  DTensor probe = random_tensor<double>(x.shape(), rng);
  auto loss = [&]() {
    DTensor y = channel_scale_forward(x, s);
    double acc = 0.0;
    for (int64_t i = 0; i < y.numel(); ++i) acc += y[i] * probe[i];
    return acc;
  };
  DTensor gx, gs;
  channel_scale_backward<double>(probe, x, s, &gx, &gs);
  CHECK(fd_check(x, gx.vec(), loss) < 1e-4);
  CHECK(fd_check(s, gs.vec(), loss) < 1e-4);
}
