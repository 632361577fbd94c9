#include <doctest.h>

#include "residseg/nn/gradcheck.hpp"
#include "residseg/nn/ops.hpp"
#include "residseg/training.hpp"
#include "residseg/unet.hpp"
#include "test_support.hpp"

using namespace residseg;
using namespace residseg::nn;
using residseg::testing::random_tensor;

namespace {

constexpr double kTol = 1e-6;
constexpr std::uint64_t kSeeds[] = {11, 23, 47};

// Σ r ⊙ op(x) with a fixed random r, so that normalising ops do not
// produce a gradient that vanishes identically.
ScalarFn projected(std::function<Var(Tape<double>&, const std::vector<Var>&)> op, Shape4 out, std::uint64_t seed) {
  auto weights = random_tensor(out, seed * 7 + 1);
  return [=](Tape<double>& t, const std::vector<Var>& in) { return weighted_sum(t, op(t, in), weights); };
}

void expect_pass(const GradCheckReport& r, double tol = kTol) {
  INFO("max error " << r.max_error << " at " << r.worst);
  CHECK(r.finite);
  CHECK(r.max_error < tol);
  CHECK(r.passed);
}

}  // namespace

TEST_CASE("gradient check agrees with a linear op exactly") {
  auto x = random_tensor({1, 1, 3, 3}, 1);
  auto r = gradient_check([](Tape<double>& t, const std::vector<Var>& in) { return sum(t, scale(t, in[0], 3.0)); },
                          {x}, 1e-9);
  expect_pass(r, 1e-9);
}

TEST_CASE("gradient check flags a wrong backward pass") {
  auto x = random_tensor({1, 1, 2, 2}, 2);
  // forward is x², but the gradient deliberately reports x
  auto broken = [](Tape<double>& t, const std::vector<Var>& in) {
    const auto& xv = t.value(in[0]);
    Tensor4<double> out(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] * xv[i];
    Var y = t.record(std::move(out), true, [a = in[0]](Tape<double>& tt, std::size_t self) {
      for (std::size_t i = 0; i < tt.grad(a).size(); ++i) tt.grad(a)[i] += tt.grad(self)[i] * tt.value(a)[i];
    });
    return sum(t, y);
  };
  auto r = gradient_check(broken, {x}, kTol);
  CHECK_FALSE(r.passed);
}

TEST_CASE("conv2d gradients") {
  for (auto seed : kSeeds) {
    for (auto [stride, pad] : {std::pair{1, 1}, std::pair{2, 1}, std::pair{1, 0}}) {
      const int oh = (6 + 2 * pad - 3) / stride + 1;
      auto fn = projected([=](Tape<double>& t, const std::vector<Var>& in) {
        return conv2d(t, in[0], in[1], in[2], stride, pad);
      }, {1, 3, oh, oh}, seed);
      expect_pass(gradient_check(fn, {random_tensor({1, 2, 6, 6}, seed), random_tensor({3, 2, 3, 3}, seed + 1),
                                      random_tensor({1, 3, 1, 1}, seed + 2)},
                                 kTol));
    }
  }
}

TEST_CASE("separable_conv2d gradients") {
  for (auto seed : kSeeds) {
    auto fn = projected([](Tape<double>& t, const std::vector<Var>& in) {
      return separable_conv2d(t, in[0], in[1], in[2], in[3]);
    }, {1, 3, 6, 6}, seed);
    expect_pass(gradient_check(fn, {random_tensor({1, 2, 6, 6}, seed), random_tensor({2, 1, 3, 3}, seed + 1),
                                    random_tensor({3, 2, 1, 1}, seed + 2), random_tensor({1, 3, 1, 1}, seed + 3)},
                               kTol));
  }
}

TEST_CASE("instance_norm gradients") {
  for (auto seed : kSeeds) {
    auto fn = projected([](Tape<double>& t, const std::vector<Var>& in) {
      return instance_norm(t, in[0], in[1], in[2], 1e-5);
    }, {1, 2, 6, 6}, seed);
    expect_pass(gradient_check(fn, {random_tensor({1, 2, 6, 6}, seed), random_tensor({1, 2, 1, 1}, seed + 1, 0.5, 1.5),
                                    random_tensor({1, 2, 1, 1}, seed + 2)},
                               kTol));
  }
}

TEST_CASE("instance_norm on a near-constant plane passes at the relaxed tolerance") {
  auto x = random_tensor({1, 2, 6, 6}, 5, 0.999, 1.001);
  auto fn = projected([](Tape<double>& t, const std::vector<Var>& in) {
    return instance_norm(t, in[0], in[1], in[2], 1e-5);
  }, {1, 2, 6, 6}, 5);
  auto r = gradient_check(fn, {x, random_tensor({1, 2, 1, 1}, 6, 0.5, 1.5), random_tensor({1, 2, 1, 1}, 7)}, 1e-4);
  expect_pass(r, 1e-4);
}

TEST_CASE("elementwise op gradients") {
  for (auto seed : kSeeds) {
    auto x = random_tensor({1, 2, 6, 6}, seed, -2.0, 2.0);
    expect_pass(gradient_check(projected([](Tape<double>& t, const std::vector<Var>& in) { return leaky_relu(t, in[0], 0.01); },
                                         {1, 2, 6, 6}, seed),
                               {x}, kTol));
    expect_pass(gradient_check(projected([](Tape<double>& t, const std::vector<Var>& in) { return sigmoid(t, in[0]); },
                                         {1, 2, 6, 6}, seed),
                               {x}, kTol));
    expect_pass(gradient_check(projected([](Tape<double>& t, const std::vector<Var>& in) {
                                 return clamp(t, sub(t, in[0], in[1]), 0.0, 1.0);
                               }, {1, 2, 6, 6}, seed),
                               {x, random_tensor({1, 2, 6, 6}, seed + 9, -1.0, 1.0)}, kTol));
    expect_pass(gradient_check(projected([](Tape<double>& t, const std::vector<Var>& in) {
                                 return concat_channels(t, in[0], add(t, in[0], in[1]));
                               }, {1, 4, 6, 6}, seed),
                               {x, random_tensor({1, 2, 6, 6}, seed + 3)}, kTol));
  }
}

TEST_CASE("pooling and upsampling gradients") {
  for (auto seed : kSeeds) {
    auto x = random_tensor({1, 2, 6, 6}, seed);
    expect_pass(gradient_check(projected([](Tape<double>& t, const std::vector<Var>& in) { return maxpool2(t, in[0]); },
                                         {1, 2, 3, 3}, seed),
                               {x}, kTol));
    expect_pass(gradient_check(projected([](Tape<double>& t, const std::vector<Var>& in) { return upsample2(t, in[0]); },
                                         {1, 2, 12, 12}, seed),
                               {x}, kTol));
    expect_pass(gradient_check(projected([](Tape<double>& t, const std::vector<Var>& in) {
                                 return maxpool2(t, upsample2(t, in[0]));
                               }, {1, 2, 6, 6}, seed),
                               {x}, kTol));
  }
}

TEST_CASE("loss gradients") {
  for (auto seed : kSeeds) {
    auto p = random_tensor({2, 1, 6, 6}, seed, 0.05, 0.95);
    auto q = random_tensor({2, 1, 6, 6}, seed + 1, 0.0, 1.0);
    auto lossfn = [](auto loss) {
      return [=](Tape<double>& t, const std::vector<Var>& in) { return loss(t, in[0], in[1]); };
    };
    expect_pass(gradient_check(lossfn([](Tape<double>& t, Var a, Var b) { return mse_loss(t, a, b); }), {p, q}, kTol));
    expect_pass(gradient_check(lossfn([](Tape<double>& t, Var a, Var b) { return bce_loss(t, a, b); }), {p, q}, kTol));
    expect_pass(gradient_check(lossfn([](Tape<double>& t, Var a, Var b) { return soft_dice_loss(t, a, b, 1.0); }),
                               {p, q}, kTol));
  }
}

TEST_CASE("full tiny U-Net gradient") {
  UNetConfig cfg;
  cfg.depth = 2;
  cfg.base_channels = 2;
  cfg.input_size = 8;
  cfg.keep_long_skip_from_level = 1;
  for (auto seed : kSeeds) {
    UNet<double> net(cfg, seed);
    auto x = random_tensor({1, 1, 8, 8}, seed + 100, 0.0, 1.0);
    auto weights = random_tensor({1, 1, 8, 8}, seed + 200);
    // gradient with respect to the input image through the whole network
    auto fn = [&](Tape<double>& t, const std::vector<Var>& in) { return weighted_sum(t, net.forward(t, in[0]), weights); };
    expect_pass(gradient_check(fn, {x}, kTol));
  }
}

TEST_CASE("full tiny U-Net parameter gradients") {
  UNetConfig cfg;
  cfg.depth = 2;
  cfg.base_channels = 2;
  cfg.input_size = 8;
  cfg.keep_long_skip_from_level = 1;
  UNet<double> net(cfg, 5);
  auto x = random_tensor({1, 1, 8, 8}, 105, 0.0, 1.0);
  auto weights = random_tensor({1, 1, 8, 8}, 205);
  auto loss = [&] {
    Tape<double> t;
    Var y = weighted_sum(t, net.forward(t, t.constant(x)), weights);
    return std::pair{t.value(y)[0], 0};
  };
  {
    Tape<double> t;
    net.parameters().zero_grad();
    t.backward(weighted_sum(t, net.forward(t, t.constant(x)), weights));
  }
  double worst = 0.0;
  for (auto& p : net.parameters()) {
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double orig = p.value[i];
      p.value[i] = orig + 1e-5;
      const double fp = loss().first;
      p.value[i] = orig - 1e-5;
      const double fm = loss().first;
      p.value[i] = orig;
      const double num = (fp - fm) / 2e-5;
      const double a = p.grad[i];
      worst = std::max(worst, std::abs(a - num) / std::max({1.0, std::abs(a), std::abs(num)}));
    }
  }
  CHECK(worst < kTol);
}

TEST_CASE("discriminative head and segmentation loss gradients") {
  UNetConfig cfg;
  cfg.depth = 2;
  cfg.base_channels = 2;
  cfg.input_size = 8;
  cfg.keep_long_skip_from_level = 1;
  TrainConfig tcfg;
  for (auto seed : kSeeds) {
    UNet<double> net(cfg, seed);
    auto x = random_tensor({2, 1, 8, 8}, seed + 300, 0.0, 1.0);
    auto mask = random_tensor({2, 1, 8, 8}, seed + 400, 0.0, 1.0);
    for (auto& v : mask.values()) v = v > 0.7 ? 1.0 : 0.0;
    // finite differences are only meaningful away from the clamp kinks
    {
      Tape<double> t(false);
      const auto& d = t.value(nn::sub(t, t.constant(x), net.forward(t, t.constant(x))));
      double margin = 1.0;
      for (double v : d.values()) margin = std::min({margin, std::abs(v), std::abs(v - 1.0)});
      REQUIRE(margin > 1e-4);
    }
    auto head = [&](Tape<double>& t, const std::vector<Var>& in) {
      Var pred = segment<double>(t, forward_of(net), in[0], Head::kDiscriminative, ResidualMode::kClamp);
      return segmentation_loss(t, pred, t.constant(mask), tcfg);
    };
    // the log terms of the loss curve sharply near small P; a finer step keeps
    // the central-difference truncation error below the tolerance
    expect_pass(gradient_check(head, {x}, kTol, 1e-6));
    auto signed_head = [&](Tape<double>& t, const std::vector<Var>& in) {
      Var out = net.forward(t, in[0]);
      return weighted_sum(t, subtraction_head(t, in[0], out, ResidualMode::kSigned), mask);
    };
    expect_pass(gradient_check(signed_head, {x}, kTol));

    // parameter gradients of the loss through the head
    auto loss_value = [&] {
      Tape<double> t(false);
      return t.value(head(t, {t.constant(x)}))[0];
    };
    {
      Tape<double> t;
      net.parameters().zero_grad();
      t.backward(head(t, {t.constant(x)}));
    }
    double worst = 0.0;
    for (auto& p : net.parameters()) {
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double orig = p.value[i];
        p.value[i] = orig + 1e-5;
        const double fp = loss_value();
        p.value[i] = orig - 1e-5;
        const double fm = loss_value();
        p.value[i] = orig;
        const double num = (fp - fm) / 2e-5;
        const double a = p.grad[i];
        worst = std::max(worst, std::abs(a - num) / std::max({1.0, std::abs(a), std::abs(num)}));
      }
    }
    INFO("parameter max error " << worst);
    CHECK(worst < kTol);
  }
}
