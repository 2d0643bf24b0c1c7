#include <doctest.h>

#include "whitebox/optim.hpp"

using namespace whitebox;

TEST_CASE("sgd without momentum or decay moves by lr * grad") {
  Tensor p({2}, {1.0f, -2.0f});
  p.grad() = {0.5f, -0.25f};
  SgdOptimizer opt(0.1f, 0.0f, 0.0f);
  opt.register_param(&p);
  opt.step();
  CHECK(p[0] == doctest::Approx(1.0f - 0.1f * 0.5f));
  CHECK(p[1] == doctest::Approx(-2.0f + 0.1f * 0.25f));
}

TEST_CASE("momentum keeps parameters moving on zero gradient") {
  // hand-unrolled recurrence: with grad 0, v <- m*v, param -= lr*m*v
  Tensor p({1}, {1.0f});
  p.grad() = {1.0f};
  SgdOptimizer opt(0.1f, 0.9f, 0.0f);
  opt.register_param(&p);
  opt.step();  // v = 1, p = 1 - 0.1
  CHECK(p[0] == doctest::Approx(0.9f));
  p.zero_grad();
  opt.step();  // v = 0.9, p -= 0.1*0.9
  CHECK(p[0] == doctest::Approx(0.9f - 0.1f * 0.9f));
}

TEST_CASE("two momentum steps on constant gradient displace lr*g*(1+1.9)") {
  const float g = 0.37f;
  Tensor p({1}, {5.0f});
  SgdOptimizer opt(0.01f, 0.9f, 0.0f);
  opt.register_param(&p);
  p.grad() = {g};
  opt.step();  // v=g, delta = lr*g
  p.grad() = {g};
  opt.step();  // v=1.9g, delta += lr*1.9g
  CHECK(p[0] == doctest::Approx(5.0f - 0.01f * g * (1.0f + 1.9f)));
}

TEST_CASE("weight decay adds the L2 pull, but not for no-decay params") {
  Tensor decayed({1}, {2.0f});
  Tensor mask_like({1}, {2.0f});
  decayed.grad() = {0.0f};
  mask_like.grad() = {0.0f};
  SgdOptimizer opt(0.1f, 0.0f, 0.01f);
  opt.register_param(&decayed, /*decay=*/true);
  opt.register_param(&mask_like, /*decay=*/false);
  opt.step();
  CHECK(decayed[0] == doctest::Approx(2.0f - 0.1f * 0.01f * 2.0f));
  CHECK(mask_like[0] == doctest::Approx(2.0f));
}
