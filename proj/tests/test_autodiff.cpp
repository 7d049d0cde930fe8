#include "doctest.h"
#include "scarceops/nn/adam.hpp"
#include "scarceops/nn/ops.hpp"
#include "testutil.hpp"

using namespace scarceops::nn;
namespace tu = testutil;

TEST_SUITE_BEGIN("autodiff");

TEST_CASE("backward of sum gives all-ones gradient") {
  Pcg32 rng(2);
  auto x = tu::random_tensor({3, 4}, rng, -1, 1, true);
  Tape tape;
  auto loss = sum_all(x, &tape);
  tape.backward(loss);
  for (float g : x->grad) CHECK(g == doctest::Approx(1.0f));
}

TEST_CASE("backward of scalar mse(w*x, y) matches the closed form") {
  // linear with a 1x1 weight: loss = (w*x - y)^2, d loss/d w = 2x(wx - y)
  const float xv = 1.7f, wv = 0.6f, yv = -0.9f;
  auto x = Tensor::from({1, 1}, {xv});
  auto w = Tensor::from({1, 1}, {wv}, true, "w");
  auto y = Tensor::from({1, 1}, {yv});
  Tape tape;
  auto pred = linear(x, w, nullptr, &tape);
  auto loss = mse_loss(pred, y, &tape);
  tape.backward(loss);
  CHECK(w->grad[0] ==
        doctest::Approx(2.0f * xv * (wv * xv - yv)).epsilon(1e-5));
}

TEST_CASE("backward of a composed network matches finite differences") {
  Pcg32 rng(1234);
  auto x = tu::random_tensor({2, 3, 6, 6}, rng, -0.5f, 0.5f, true);
  auto k = tu::random_tensor({4, 3, 3, 3}, rng, -0.5f, 0.5f, true);
  k->name = "k";
  auto w = tu::random_tensor({2, 4}, rng, -0.5f, 0.5f, true);
  w->name = "w";
  auto forward = [&](Tape* tape) {
    auto y = conv2d(x, k, nullptr, 2, 1, tape);
    y = relu(y, tape);
    y = global_avg_pool2d(y, tape);
    y = linear(y, w, nullptr, tape);
    return sigmoid(y, tape);
  };
  auto r = tu::grad_check(forward, {x, k, w}, 99);
  INFO("worst " << r.worst_tensor << "[" << r.worst_index
                << "] rel err = " << r.max_rel_err);
  CHECK(r.ok());
}

// Central finite differences at h=1e-3 on the float32 path; >= 20 random
// configurations per layer, >= 99% of coordinates within 1e-2 relative error.
TEST_CASE("gradient check: conv2d") {
  for (uint64_t trial = 0; trial < 20; ++trial) {
    Pcg32 rng(1000 + trial);
    const int n = 1 + static_cast<int>(rng.below(2));
    const int c = 1 + static_cast<int>(rng.below(3));
    const int f = 1 + static_cast<int>(rng.below(4));
    const int ks = 1 + static_cast<int>(rng.below(3));
    const int h = ks + static_cast<int>(rng.below(5));
    const int stride = 1 + static_cast<int>(rng.below(2));
    const int pad = static_cast<int>(rng.below(2));
    auto x = tu::random_tensor({n, c, h, h}, rng, -1, 1, true);
    auto k = tu::random_tensor({f, c, ks, ks}, rng, -1, 1, true);
    k->name = "kernel";
    auto b = tu::random_tensor({f}, rng, -1, 1, true);
    b->name = "bias";
    auto fwd = [&](Tape* t) { return conv2d(x, k, b, stride, pad, t); };
    auto r = tu::grad_check(fwd, {x, k, b}, trial);
    INFO("config " << trial << ": worst " << r.worst_tensor << " rel "
                   << r.max_rel_err);
    CHECK(r.ok());
  }
}

TEST_CASE("gradient check: conv_transpose2d") {
  for (uint64_t trial = 0; trial < 20; ++trial) {
    Pcg32 rng(2000 + trial);
    const int n = 1 + static_cast<int>(rng.below(2));
    const int c = 1 + static_cast<int>(rng.below(3));
    const int f = 1 + static_cast<int>(rng.below(3));
    const int ks = 2 + static_cast<int>(rng.below(3));
    const int h = 1 + static_cast<int>(rng.below(4));
    const int stride = 1 + static_cast<int>(rng.below(2));
    // keep (h-1)*stride - 2*pad + ks >= 1
    const int pad = static_cast<int>(rng.below(static_cast<uint64_t>((ks + 1) / 2)));
    auto x = tu::random_tensor({n, c, h, h}, rng, -1, 1, true);
    auto k = tu::random_tensor({c, f, ks, ks}, rng, -1, 1, true);
    k->name = "kernel";
    auto b = tu::random_tensor({f}, rng, -1, 1, true);
    b->name = "bias";
    auto fwd = [&](Tape* t) {
      return conv_transpose2d(x, k, b, stride, pad, t);
    };
    auto r = tu::grad_check(fwd, {x, k, b}, trial);
    INFO("config " << trial << ": worst " << r.worst_tensor << " rel "
                   << r.max_rel_err);
    CHECK(r.ok());
  }
}

TEST_CASE("gradient check: batch_norm2d (train mode, frozen running stats)") {
  for (uint64_t trial = 0; trial < 20; ++trial) {
    Pcg32 rng(3000 + trial);
    const int n = 2 + static_cast<int>(rng.below(3));
    const int c = 1 + static_cast<int>(rng.below(3));
    const int h = 2 + static_cast<int>(rng.below(3));
    auto x = tu::random_tensor({n, c, h, h}, rng, -1.5f, 1.5f, true);
    auto gamma = tu::random_tensor({c}, rng, 0.5f, 1.5f, true);
    gamma->name = "gamma";
    auto beta = tu::random_tensor({c}, rng, -0.5f, 0.5f, true);
    beta->name = "beta";
    auto rm = Tensor::zeros({c});
    auto rv = Tensor::full({c}, 1.0f);
    auto fwd = [&](Tape* t) {
      return batch_norm2d(x, gamma, beta, rm, rv, 0.1f, 1e-5f, true,
                          /*update_running=*/false, t);
    };
    auto r = tu::grad_check(fwd, {x, gamma, beta}, trial);
    INFO("config " << trial << ": worst " << r.worst_tensor << " rel "
                   << r.max_rel_err);
    CHECK(r.ok());
  }
}

TEST_CASE("gradient check: linear") {
  for (uint64_t trial = 0; trial < 20; ++trial) {
    Pcg32 rng(4000 + trial);
    const int n = 1 + static_cast<int>(rng.below(4));
    const int di = 1 + static_cast<int>(rng.below(6));
    const int dout = 1 + static_cast<int>(rng.below(5));
    auto x = tu::random_tensor({n, di}, rng, -1, 1, true);
    auto w = tu::random_tensor({dout, di}, rng, -1, 1, true);
    w->name = "weight";
    auto b = tu::random_tensor({dout}, rng, -1, 1, true);
    b->name = "bias";
    auto fwd = [&](Tape* t) { return linear(x, w, b, t); };
    auto r = tu::grad_check(fwd, {x, w, b}, trial);
    CHECK(r.ok());
  }
}

TEST_CASE("gradient check: relu, sigmoid, pool, add, reshape, mse") {
  for (uint64_t trial = 0; trial < 20; ++trial) {
    Pcg32 rng(5000 + trial);
    const int n = 1 + static_cast<int>(rng.below(3));
    const int c = 1 + static_cast<int>(rng.below(3));
    const int h = 2 + static_cast<int>(rng.below(4));
    auto x = tu::random_tensor({n, c, h, h}, rng, -1, 1, true);
    auto y = tu::random_tensor({n, c, h, h}, rng, -1, 1, true);
    y->name = "second";
    auto fwd = [&](Tape* t) {
      auto u = add(relu(x, t), sigmoid(y, t), t);
      u = global_avg_pool2d(u, t);
      return reshape(u, {n * c}, t);
    };
    auto r = tu::grad_check(fwd, {x, y}, trial);
    CHECK(r.ok());
  }
}

TEST_CASE("training is deterministic: same seed, bit-identical parameters") {
  auto run = [](uint64_t seed) {
    Pcg32 init(seed, kStreamInit);
    Conv2d conv(3, 4, 3, 2, 1, true, init, "c");
    Linear head(4, 2, true, init, "h");
    AdamState adam;
    Pcg32 data_rng(seed, kStreamData);
    std::vector<TensorPtr> params;
    conv.collect_params(params);
    head.collect_params(params);
    for (int step = 0; step < 5; ++step) {
      auto x = tu::random_tensor({2, 3, 8, 8}, data_rng);
      auto target = tu::random_tensor({2, 2}, data_rng);
      Tape tape;
      ForwardCtx ctx{&tape, true};
      auto out = head.forward(global_avg_pool2d(conv.forward(x, ctx), &tape),
                              ctx);
      auto loss = mse_loss(out, target, &tape);
      for (auto& p : params) p->zero_grad();
      tape.backward(loss);
      adam_step(params, adam);
    }
    std::vector<float> flat;
    for (auto& p : params) flat.insert(flat.end(), p->data.begin(), p->data.end());
    return flat;
  };
  auto a = run(7);
  auto b = run(7);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);  // bit-identical
}

TEST_SUITE_END();
