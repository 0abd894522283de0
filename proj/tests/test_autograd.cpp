// Finite-difference oracles for every autodiff primitive the networks use.
// Inputs are kept away from ReLU/clamp kinks and bilinear integer crossings
// so central differences are valid; seeds are fixed.

#include "vecnet/conv.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace vecnet;
using testutil::fd_check_param;
using testutil::random_tensor;
using testutil::sample_indices;

namespace {

core::Tensor random_away_from_zero(std::vector<int> shape, core::Rng& rng, double lo = 0.1) {
  core::Tensor t = random_tensor(std::move(shape), rng);
  for (std::int64_t i = 0; i < t.size(); ++i) {
    const double s = t[i] >= 0.0 ? 1.0 : -1.0;
    t[i] = s * (lo + (1.0 - lo) * std::abs(t[i]));
  }
  return t;
}

void expect_fd_ok(const std::function<ag::NodeRef()>& loss, const ag::NodeRef& param, int count,
                  core::Rng& rng, double tol = 1e-2) {
  const auto idx = sample_indices(param->value.size(), count, rng);
  param->zero_grad();
  const auto rep = fd_check_param(loss, param, idx);
  EXPECT_LT(rep.max_rel_err, tol) << "checked " << rep.checked << " coordinates";
}

}  // namespace

TEST(Autograd, BackwardAccumulatesThroughSharedNodes) {
  auto x = ag::leaf(core::Tensor::from({2}, {3.0, -2.0}), true);
  auto y = ag::mul(x, x);           // x^2
  auto z = ag::add(y, ag::mul_scalar(x, 4.0));  // x^2 + 4x
  auto loss = ag::mean_all(z);
  ag::backward(loss);
  // d/dx mean(x^2 + 4x) = (2x + 4)/2
  EXPECT_NEAR(x->grad[0], (2 * 3.0 + 4) / 2, 1e-12);
  EXPECT_NEAR(x->grad[1], (2 * -2.0 + 4) / 2, 1e-12);
}

TEST(Autograd, ElementwiseGradients) {
  core::Rng rng(11);
  auto x = ag::leaf(random_away_from_zero({2, 4, 4}, rng), true);
  auto y = ag::leaf(random_away_from_zero({2, 4, 4}, rng, 0.3), true);
  auto loss = [&] {
    auto a = ag::sigmoid(ag::mul(x, y));
    auto b = ag::div(x, y);
    auto c = ag::relu(ag::sub(a, ag::mul_scalar(b, 0.1)));
    return ag::mean_all(ag::add(c, ag::rsub_scalar(1.0, a)));
  };
  expect_fd_ok(loss, x, 6, rng);
  expect_fd_ok(loss, y, 6, rng);
}

TEST(Autograd, ConcatSliceReshapeGradients) {
  core::Rng rng(12);
  auto x = ag::leaf(random_tensor({2, 3, 3}, rng), true);
  auto y = ag::leaf(random_tensor({1, 3, 3}, rng), true);
  auto loss = [&] {
    auto cat = ag::concat_ch({x, y});
    auto s = ag::slice_ch(cat, 1, 3);
    return ag::mean_all(ag::mul(s, s));
  };
  expect_fd_ok(loss, x, 5, rng);
  expect_fd_ok(loss, y, 5, rng);
}

TEST(Autograd, SoftmaxGradients) {
  core::Rng rng(13);
  auto x = ag::leaf(random_tensor({3, 2, 2}, rng), true);
  auto r = ag::leaf(random_tensor({4, 5}, rng), true);
  auto w = ag::constant(random_tensor({3, 2, 2}, rng));
  auto loss_ch = [&] { return ag::mean_all(ag::mul(ag::softmax_ch(x), w)); };
  auto loss_rows = [&] {
    auto sm = ag::softmax_rows(r);
    return ag::mean_all(ag::mul(sm, sm));
  };
  expect_fd_ok(loss_ch, x, 8, rng);
  expect_fd_ok(loss_rows, r, 8, rng);
}

TEST(Autograd, MatmulGradientsAllTransposes) {
  core::Rng rng(14);
  auto a = ag::leaf(random_tensor({3, 4}, rng), true);
  auto b = ag::leaf(random_tensor({4, 2}, rng), true);
  for (int ta = 0; ta < 2; ++ta)
    for (int tb = 0; tb < 2; ++tb) {
      auto aa = ta ? ag::leaf(random_tensor({4, 3}, rng), true) : a;
      auto bb = tb ? ag::leaf(random_tensor({2, 4}, rng), true) : b;
      auto loss = [&] {
        auto c = ag::matmul(aa, bb, ta != 0, tb != 0);
        return ag::mean_all(ag::mul(c, c));
      };
      expect_fd_ok(loss, aa, 5, rng);
      expect_fd_ok(loss, bb, 5, rng);
    }
}

TEST(Autograd, Conv2dGradients) {
  core::Rng rng(15);
  auto x = ag::leaf(random_tensor({2, 6, 6}, rng), true);
  auto w = ag::leaf(random_tensor({3, 2, 3, 3}, rng, -0.5, 0.5), true);
  auto b = ag::leaf(random_tensor({3}, rng), true);
  auto loss = [&] {
    auto y = ag::conv2d(x, w, b, 1, 1);
    return ag::mean_all(ag::mul(y, y));
  };
  expect_fd_ok(loss, x, 8, rng);
  expect_fd_ok(loss, w, 8, rng);
  expect_fd_ok(loss, b, 3, rng);
}

TEST(Autograd, StridedConv2dGradients) {
  core::Rng rng(16);
  auto x = ag::leaf(random_tensor({2, 8, 8}, rng), true);
  auto w = ag::leaf(random_tensor({4, 2, 4, 4}, rng, -0.5, 0.5), true);
  auto b = ag::leaf(random_tensor({4}, rng), true);
  auto loss = [&] {
    auto y = ag::conv2d(x, w, b, 2, 1);
    return ag::mean_all(ag::mul(y, y));
  };
  expect_fd_ok(loss, x, 8, rng);
  expect_fd_ok(loss, w, 8, rng);
}

TEST(Autograd, ConvTransposeGradientsAndShape) {
  core::Rng rng(17);
  auto x = ag::leaf(random_tensor({3, 4, 4}, rng), true);
  auto w = ag::leaf(random_tensor({3, 2, 4, 4}, rng, -0.5, 0.5), true);
  auto b = ag::leaf(random_tensor({2}, rng), true);
  auto y = ag::conv_transpose2d(x, w, b, 2, 1);
  EXPECT_EQ(y->value.shape(), (std::vector<int>{2, 8, 8}));
  auto loss = [&] {
    auto out = ag::conv_transpose2d(x, w, b, 2, 1);
    return ag::mean_all(ag::mul(out, out));
  };
  expect_fd_ok(loss, x, 8, rng);
  expect_fd_ok(loss, w, 8, rng);
  expect_fd_ok(loss, b, 2, rng);
}

TEST(Autograd, ConvTransposeIsConvAdjoint) {
  // <conv(x), y> == <x, tconv(y)> for matching geometry
  core::Rng rng(18);
  auto x = ag::constant(random_tensor({2, 8, 8}, rng));
  auto y = ag::constant(random_tensor({3, 4, 4}, rng));
  auto w = ag::constant(random_tensor({3, 2, 4, 4}, rng));
  // same kernel data; tconv reads it as [Cin=3, Cout=2, k, k]
  auto wt = ag::constant(core::Tensor::from({3, 2, 4, 4}, w->value.vec()));
  auto cx = ag::conv2d(x, w, nullptr, 2, 1);
  auto ty = ag::conv_transpose2d(y, wt, nullptr, 2, 1);
  double lhs = 0.0, rhs = 0.0;
  for (std::int64_t i = 0; i < cx->value.size(); ++i) lhs += cx->value[i] * y->value[i];
  for (std::int64_t i = 0; i < ty->value.size(); ++i) rhs += ty->value[i] * x->value[i];
  EXPECT_NEAR(lhs, rhs, 1e-9);
}

TEST(Autograd, InstanceNormGradients) {
  core::Rng rng(19);
  auto x = ag::leaf(random_tensor({3, 5, 5}, rng), true);
  auto w = ag::constant(random_tensor({3, 5, 5}, rng));
  auto loss = [&] { return ag::mean_all(ag::mul(ag::instance_norm(x), w)); };
  expect_fd_ok(loss, x, 10, rng);
}

TEST(Autograd, PoolUpsampleChannelOpsGradients) {
  core::Rng rng(20);
  auto x = ag::leaf(random_tensor({2, 4, 4}, rng), true);
  auto s = ag::leaf(random_tensor({2, 1, 1}, rng), true);
  auto m = ag::leaf(random_tensor({1, 4, 4}, rng), true);
  auto loss = [&] {
    auto a = ag::upsample_nearest(ag::avg_pool(x, 2), 2);
    auto b = ag::mul_channel(a, ag::add(ag::global_mean(x), s));
    auto c = ag::mul_map(b, m);
    return ag::mean_all(ag::mul(c, c));
  };
  expect_fd_ok(loss, x, 8, rng);
  expect_fd_ok(loss, s, 2, rng);
  expect_fd_ok(loss, m, 6, rng);
}

TEST(Autograd, DeformConvGradients) {
  core::Rng rng(21);
  auto x = ag::leaf(random_tensor({2, 6, 6}, rng), true);
  // fractional parts pinned to [0.25, 0.75]: keeps finite differences away
  // from the bilinear kinks at integer coordinates
  core::Tensor off({2 * 9, 6, 6});
  for (std::int64_t i = 0; i < off.size(); ++i)
    off[i] = static_cast<double>(rng.index(3) - 1) + rng.uniform(0.25, 0.75);
  auto offsets = ag::leaf(std::move(off), true);
  auto w = ag::leaf(random_tensor({2, 3, 3}, rng, -0.5, 0.5), true);
  auto b = ag::leaf(random_tensor({2}, rng), true);
  auto loss = [&] {
    auto y = ag::deform_conv3x3(x, offsets, w, b);
    return ag::mean_all(ag::mul(y, y));
  };
  expect_fd_ok(loss, x, 10, rng);
  expect_fd_ok(loss, offsets, 10, rng);
  expect_fd_ok(loss, w, 8, rng);
  expect_fd_ok(loss, b, 2, rng);
}

TEST(Autograd, ClampPassesGradientInsideRangeOnly) {
  auto x = ag::leaf(core::Tensor::from({3}, {-0.5, 0.4, 1.7}), true);
  auto loss = ag::mean_all(ag::clamp(x, 0.0, 1.0));
  ag::backward(loss);
  EXPECT_EQ(x->grad[0], 0.0);
  EXPECT_NEAR(x->grad[1], 1.0 / 3.0, 1e-12);
  EXPECT_EQ(x->grad[2], 0.0);
}
