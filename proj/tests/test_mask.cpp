#include <doctest.h>

#include <cmath>

#include "whitebox/mask.hpp"
#include "whitebox/network.hpp"
#include "whitebox/optim.hpp"
#include "whitebox/reference.hpp"
#include "test_util.hpp"

using namespace whitebox;
using test::fd_check;
using test::random_tensor;

TEST_CASE("soften_labels: sigma=0, mu=0 degenerates to the one-hot") {
  RandomStream rng(101);
  Tensor y({3, 4});
  y[0 * 4 + 1] = 1.0f;
  y[1 * 4 + 3] = 1.0f;
  y[2 * 4 + 0] = 1.0f;
  SoftLabelBatch soft = soften_labels(y, 0.0, 0.0, rng);
  CHECK(soft.values.vec() == y.vec());
}

TEST_CASE("soften_labels: sigma=0, mu=0.5 fills off-class entries with 0.5") {
  RandomStream rng(103);
  Tensor y({2, 3});
  y[0 * 3 + 2] = 1.0f;
  y[1 * 3 + 0] = 1.0f;
  SoftLabelBatch soft = soften_labels(y, 0.5, 0.0, rng);
  CHECK(soft.values[0 * 3 + 2] == 1.0f);
  CHECK(soft.values[0 * 3 + 0] == 0.5f);
  CHECK(soft.values[0 * 3 + 1] == 0.5f);
  CHECK(soft.values[1 * 3 + 0] == 1.0f);
  CHECK(soft.values[1 * 3 + 1] == 0.5f);
}

TEST_CASE("soften_labels: off-class draws follow Normal(mu, sigma)") {
  RandomStream rng(107);
  const int64_t n = 10000, d = 2;
  Tensor y({n, d});
  for (int64_t i = 0; i < n; ++i) y[i * d] = 1.0f;  // truth = class 0
  SoftLabelBatch soft = soften_labels(y, 0.5, 1.0, rng);
  double sum = 0.0, sum_sq = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double v = soft.values[i * d + 1];
    sum += v;
    sum_sq += v * v;
  }
  const double mean = sum / static_cast<double>(n);
  const double stddev =
      std::sqrt(sum_sq / static_cast<double>(n) - mean * mean);
  CHECK(std::abs(mean - 0.5) < 0.05);
  CHECK(std::abs(stddev - 1.0) < 0.05);
}

TEST_CASE("soften_labels is deterministic per seed and rejects bad rows") {
  Tensor y({1, 3});
  y[1] = 1.0f;
  RandomStream a(5), b(5);
  CHECK(soften_labels(y, 0.5, 1.0, a).values.vec() ==
        soften_labels(y, 0.5, 1.0, b).values.vec());
  Tensor bad({1, 3});
  bad[0] = 0.4f;
  RandomStream c(5);
  CHECK_THROWS_AS(soften_labels(bad, 0.5, 1.0, c), Error);
}

TEST_CASE("aggregate_scale: identity and one-hot selection") {
  // D=1, soft=1, mask=1 -> scale 1
  Tensor soft1({1, 1});
  soft1[0] = 1.0f;
  Tensor m1({1, 1});
  m1[0] = 1.0f;
  CHECK(aggregate_scale_t<float>(soft1, m1)[0] == 1.0f);

  // soft row (1,0) against mask [[2],[5]] selects 2
  Tensor soft({1, 2});
  soft[0] = 1.0f;
  Tensor m({2, 1});
  m[0] = 2.0f;
  m[1] = 5.0f;
  CHECK(aggregate_scale_t<float>(soft, m)[0] == doctest::Approx(2.0f));
}

TEST_CASE("aggregated scale equals the literal per-class convolution sum") {
  // the linearity reduction is a tested property, not an assumption
  RandomStream rng(113);
  const int64_t n = 2, d = 3, cin = 2, cout = 4, h = 6, w = 6;
  Tensor x = random_tensor<float>({n, cin, h, w}, rng);
  Tensor weight = random_tensor<float>({cout, cin, 3, 3}, rng);
  Tensor soft = random_tensor<float>({n, d}, rng);
  Tensor mask = random_tensor<float>({d, cout}, rng);

  // aggregated path
  Tensor raw = conv2d_forward<float>(x, weight, nullptr, 1, 1);
  Tensor scale = aggregate_scale_t<float>(soft, mask);
  Tensor fast = channel_scale_forward(raw, scale);

  // literal path: one convolution per class with per-class scaled weights
  Tensor slow(fast.shape());
  for (int64_t i = 0; i < n; ++i) {
    Tensor xi({1, cin, h, w});
    std::copy(x.data() + i * cin * h * w, x.data() + (i + 1) * cin * h * w,
              xi.data());
    for (int64_t di = 0; di < d; ++di) {
      Tensor wd = weight;
      for (int64_t co = 0; co < cout; ++co) {
        const float s = soft[i * d + di] * mask[di * cout + co];
        float* wp = wd.data() + co * cin * 9;
        for (int64_t k = 0; k < cin * 9; ++k) wp[k] *= s;
      }
      Tensor yd = ref::conv2d_forward_naive<float>(xi, wd, nullptr, 1, 1);
      float* dst = slow.data() + i * cout * yd.dim(2) * yd.dim(3);
      for (int64_t k = 0; k < yd.numel(); ++k) dst[k] += yd[k];
    }
  }
  CHECK(test::max_abs_diff(fast, slow) < 1e-4);
}

TEST_CASE("masked conv reduces to the plain conv under ones and hard labels") {
  RandomStream rng(127);
  ModelGraph g = build_cnn({4}, 3, 8, 8, 2);
  init_weights(g, rng);
  MaskSet masks = init_masks(g, 2);
  Tensor x = random_tensor<float>({2, 3, 8, 8}, rng);
  Tensor labels({2, 2});
  labels[0] = 1.0f;
  labels[3] = 1.0f;
  RandomStream r2(1);
  SoftLabelBatch soft = soften_labels(labels, 0.0, 0.0, r2);

  Network net(g);
  Tensor masked = net.forward(x, true, &masks, &soft.values);
  Tensor plain = net.forward(x, true);
  CHECK(test::max_rel_diff(masked, plain) < 1e-5);
}

TEST_CASE("zero mask row annihilates the conv output, bias aside") {
  RandomStream rng(131);
  const int64_t cout = 3;
  Tensor x = random_tensor<float>({1, 2, 5, 5}, rng);
  Tensor weight = random_tensor<float>({cout, 2, 3, 3}, rng);
  Tensor bias = random_tensor<float>({cout}, rng);
  Tensor mask({2, cout});
  for (int64_t c = 0; c < cout; ++c) {
    mask[0 * cout + c] = 0.0f;  // class 0: all zero
    mask[1 * cout + c] = 1.0f;
  }
  Tensor soft({1, 2});
  soft[0] = 1.0f;  // hard label class 0

  Tensor raw = conv2d_forward<float>(x, weight, nullptr, 1, 1);
  Tensor scale = aggregate_scale_t<float>(soft, mask);
  Tensor out = channel_scale_forward(raw, scale);
  // output is exactly zero before the bias is added back
  for (int64_t i = 0; i < out.numel(); ++i) CHECK(out[i] == 0.0f);
}

TEST_CASE("mask gradients through the full loss pass finite differences") {
  RandomStream rng(137);
  const int64_t n = 2, d = 3, cin = 2, cout = 3, h = 5, w = 5;
  DTensor x = random_tensor<double>({n, cin, h, w}, rng);
  DTensor weight = random_tensor<double>({cout, cin, 3, 3}, rng);
  DTensor mask = random_tensor<double>({d, cout}, rng, 0.2, 1.5);
  DTensor soft = random_tensor<double>({n, d}, rng);
  DTensor head = random_tensor<double>({d, cout}, rng);  // linear classifier
  DTensor labels({n, d});
  labels[0 * d + 1] = 1.0;
  labels[1 * d + 2] = 1.0;

  auto loss = [&]() {
    DTensor raw = conv2d_forward<double>(x, weight, nullptr, 1, 1);
    DTensor scale = aggregate_scale_t<double>(soft, mask);
    DTensor scaled = channel_scale_forward(raw, scale);
    DTensor pooled = global_avgpool_forward(scaled);
    DTensor logits = linear_forward<double>(pooled, head, nullptr);
    double ce = softmax_cross_entropy<double>(logits, labels, nullptr);
    return ce + 0.05 * mask_penalty_t<double>(mask, NormKind::kL2Group, 0.0,
                                              nullptr);
  };

  // analytic gradient chain
  DTensor raw = conv2d_forward<double>(x, weight, nullptr, 1, 1);
  DTensor scale = aggregate_scale_t<double>(soft, mask);
  DTensor scaled = channel_scale_forward(raw, scale);
  DTensor pooled = global_avgpool_forward(scaled);
  DTensor logits = linear_forward<double>(pooled, head, nullptr);
  DTensor grad_logits;
  softmax_cross_entropy<double>(logits, labels, &grad_logits);
  DTensor grad_pooled;
  linear_backward<double>(grad_logits, pooled, head, &grad_pooled, nullptr,
                          nullptr);
  DTensor grad_scaled = global_avgpool_backward(grad_pooled, scaled.shape());
  DTensor grad_raw, grad_scale;
  channel_scale_backward<double>(grad_scaled, raw, scale, &grad_raw,
                                 &grad_scale);
  mask.zero_grad();
  aggregate_scale_backward_t<double>(grad_scale, soft, mask, &mask);
  mask_penalty_t<double>(mask, NormKind::kL2Group, 0.05, &mask);

  std::vector<double> analytic(mask.grad().begin(), mask.grad().end());
  CHECK(fd_check(mask, analytic, loss) < 1e-4);
}

TEST_CASE("sparsity penalty: trivial values") {
  ModelGraph g = build_cnn({1}, 1, 4, 4, 2);
  MaskSet masks = init_masks(g, 2);
  masks.items[0].values = Tensor({2, 1}, {3.0f, 4.0f});
  SparsityConfig cfg{1.0, NormKind::kL2Group};
  CHECK(sparsity_penalty(masks, cfg) == doctest::Approx(5.0));

  masks.items[0].values.fill(0.0f);
  CHECK(sparsity_penalty(masks, cfg) == doctest::Approx(0.0));

  // zero column has zero subgradient, no NaN
  zero_mask_grads(masks);
  sparsity_penalty(masks, cfg, true);
  for (float gv : masks.items[0].values.grad()) CHECK(gv == 0.0f);
}

TEST_CASE("sparsity penalty matches an independent recomputation") {
  RandomStream rng(139);
  ModelGraph g = build_cnn({5, 7}, 3, 8, 8, 4);
  MaskSet masks = init_masks(g, 4);
  for (auto& m : masks.items) {
    m.values = random_tensor<float>(m.values.shape(), rng);
  }
  SparsityConfig l2{1.0, NormKind::kL2Group};
  SparsityConfig l1{1.0, NormKind::kL1};

  double expect_l2 = 0.0, expect_l1 = 0.0;
  for (const auto& m : masks.items) {
    const int64_t d = m.values.dim(0), c = m.values.dim(1);
    for (int64_t ci = 0; ci < c; ++ci) {
      double sq = 0.0;
      for (int64_t di = 0; di < d; ++di) {
        sq += static_cast<double>(m.values[di * c + ci]) *
              m.values[di * c + ci];
        expect_l1 += std::abs(static_cast<double>(m.values[di * c + ci]));
      }
      expect_l2 += std::sqrt(sq);
    }
  }
  CHECK(sparsity_penalty(masks, l2) ==
        doctest::Approx(expect_l2).epsilon(1e-6));
  CHECK(sparsity_penalty(masks, l1) ==
        doctest::Approx(expect_l1).epsilon(1e-6));
}

TEST_CASE("l1 penalty gradient passes finite differences") {
  RandomStream rng(149);
  DTensor mask = random_tensor<double>({4, 3}, rng, 0.2, 1.0);
  mask.zero_grad();
  mask_penalty_t<double>(mask, NormKind::kL1, 1.0, &mask);
  std::vector<double> analytic(mask.grad().begin(), mask.grad().end());
  auto loss = [&]() {
    return mask_penalty_t<double>(mask, NormKind::kL1, 0.0, nullptr);
  };
  CHECK(fd_check(mask, analytic, loss) < 1e-4);
}

TEST_CASE("group penalty drives every mask column norm down under large lambda") {
  RandomStream rng(151);
  ModelGraph g = build_cnn({4}, 2, 6, 6, 3);
  init_weights(g, rng);
  MaskSet masks = init_masks(g, 3);
  Network net(g);
  Tensor x = random_tensor<float>({4, 2, 6, 6}, rng, 0.0, 1.0);
  Tensor labels({4, 3});
  for (int64_t i = 0; i < 4; ++i) labels[i * 3 + (i % 3)] = 1.0f;

  auto column_norms = [&]() {
    std::vector<double> norms;
    const auto& v = masks.items[0].values;
    for (int64_t c = 0; c < v.dim(1); ++c) {
      double sq = 0.0;
      for (int64_t d = 0; d < v.dim(0); ++d) {
        sq += static_cast<double>(v[d * v.dim(1) + c]) * v[d * v.dim(1) + c];
      }
      norms.push_back(std::sqrt(sq));
    }
    return norms;
  };
  const std::vector<double> before = column_norms();

  // frozen network: only the masks are registered with the optimizer
  SgdOptimizer opt(0.01f, 0.0f, 0.0f);
  opt.register_param(&masks.items[0].values, false);
  SparsityConfig cfg{10.0, NormKind::kL2Group};
  for (int step = 0; step < 100; ++step) {
    RandomStream r2(static_cast<uint64_t>(step));
    SoftLabelBatch soft = soften_labels(labels, 0.5, 1.0, r2);
    zero_param_grads(g);
    zero_mask_grads(masks);
    total_objective(net, x, labels, &masks, &soft.values, cfg, true);
    opt.step();
  }
  const std::vector<double> after = column_norms();
  for (size_t c = 0; c < before.size(); ++c) {
    CHECK(after[c] < before[c]);
  }
}

TEST_CASE("total objective with lambda 0 is the bare cross entropy") {
  RandomStream rng(157);
  ModelGraph g = build_cnn({3}, 2, 6, 6, 2);
  init_weights(g, rng);
  MaskSet masks = init_masks(g, 2);
  Network net(g);
  Tensor x = random_tensor<float>({2, 2, 6, 6}, rng, 0.0, 1.0);
  Tensor labels({2, 2});
  labels[0] = 1.0f;
  labels[3] = 1.0f;
  RandomStream r2(3);
  SoftLabelBatch soft = soften_labels(labels, 0.5, 1.0, r2);
  SparsityConfig cfg{0.0, NormKind::kL2Group};
  ObjectiveResult res =
      total_objective(net, x, labels, &masks, &soft.values, cfg, false);
  CHECK(res.total == doctest::Approx(res.cross_entropy));
  CHECK(res.penalty > 0.0);  // reported even when unweighted
}

TEST_CASE("joint objective trains a separable toy batch") {
  RandomStream rng(163);
  ModelGraph g = build_cnn({4, 6}, 1, 8, 8, 2);
  init_weights(g, rng);
  MaskSet masks = init_masks(g, 2);
  Network net(g);

  // two blobs in opposite corners
  const int64_t n = 8;
  Tensor x({n, 1, 8, 8});
  Tensor labels({n, 2});
  for (int64_t i = 0; i < n; ++i) {
    const int cls = static_cast<int>(i % 2);
    labels[i * 2 + cls] = 1.0f;
    for (int64_t y = 0; y < 8; ++y) {
      for (int64_t xx = 0; xx < 8; ++xx) {
        const double cy = cls == 0 ? 2.0 : 5.0;
        const double dist = (y - cy) * (y - cy) + (xx - cy) * (xx - cy);
        x[i * 64 + y * 8 + xx] =
            static_cast<float>(std::exp(-dist / 4.0)) +
            static_cast<float>(rng.uniform(0.0, 0.05));
      }
    }
  }

  SgdOptimizer opt(0.05f, 0.9f, 0.0f);
  for (const NamedParam& p : trainable_params(g)) opt.register_param(p.tensor);
  for (auto& m : masks.items) opt.register_param(&m.values, false);
  SparsityConfig cfg{0.01, NormKind::kL2Group};

  double first = 0.0, last = 0.0;
  for (int step = 0; step < 50; ++step) {
    RandomStream r2(static_cast<uint64_t>(step) + 100);
    SoftLabelBatch soft = soften_labels(labels, 0.5, 1.0, r2);
    zero_param_grads(g);
    zero_mask_grads(masks);
    ObjectiveResult res =
        total_objective(net, x, labels, &masks, &soft.values, cfg, true);
    opt.step();
    if (step == 0) first = res.total;
    last = res.total;
  }
  CHECK(last < first);
}
