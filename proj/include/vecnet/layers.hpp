#pragma once

// Trainable building blocks: parameter registry, conv layers with explicit
// initialization, residual channel attention block, embedded-Gaussian
// non-local block.

#include "vecnet/conv.hpp"
#include "vecnet/rng.hpp"

#include <string>
#include <vector>

namespace vecnet::layers {

using ag::NodeRef;
using core::Rng;
using core::Tensor;

struct NamedParam {
  std::string name;
  NodeRef node;
};

// Flat, ordered list of every parameter tensor in a model. Construction
// order fixes optimizer iteration order and the checkpoint layout.
class ParamStore {
 public:
  NodeRef create(const std::string& name, Tensor init) {
    for (const auto& p : params_)
      if (p.name == name) throw std::invalid_argument("duplicate parameter name: " + name);
    NodeRef n = ag::leaf(std::move(init), true);
    params_.push_back({name, n});
    return n;
  }

  const std::vector<NamedParam>& params() const { return params_; }

  std::int64_t total_size() const {
    std::int64_t n = 0;
    for (const auto& p : params_) n += p.node->value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.node->zero_grad();
  }

  NodeRef find(const std::string& name) const {
    for (const auto& p : params_)
      if (p.name == name) return p.node;
    throw std::invalid_argument("no parameter named " + name);
  }

 private:
  std::vector<NamedParam> params_;
};

// ---------------------------------------------------------------------------
// initializers

inline Tensor he_normal(std::vector<int> shape, int fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rng.normal(0.0, stddev);
  return t;
}

// center-tap delta kernel: conv acts as identity at init
inline Tensor identity_kernel(int channels, int k) {
  Tensor t({channels, channels, k, k});
  for (int c = 0; c < channels; ++c) t[((static_cast<std::int64_t>(c) * channels + c) * k + k / 2) * k + k / 2] = 1.0;
  return t;
}

inline Tensor identity_depthwise_kernel(int channels, int k) {
  Tensor t({channels, k, k});
  for (int c = 0; c < channels; ++c) t[(static_cast<std::int64_t>(c) * k + k / 2) * k + k / 2] = 1.0;
  return t;
}

// ---------------------------------------------------------------------------
// layers

enum class Init { He, Zero, Identity };

struct Conv2d {
  NodeRef w, b;
  int stride = 1, pad = -1;

  Conv2d() = default;
  Conv2d(ParamStore& ps, const std::string& name, int cin, int cout, int k, Rng& rng,
         int stride_ = 1, Init init = Init::He, int pad_ = -1)
      : stride(stride_), pad(pad_) {
    Tensor wt;
    switch (init) {
      case Init::He: wt = he_normal({cout, cin, k, k}, cin * k * k, rng); break;
      case Init::Zero: wt = Tensor({cout, cin, k, k}); break;
      case Init::Identity:
        if (cin != cout) throw std::invalid_argument("identity init needs cin == cout");
        wt = identity_kernel(cin, k);
        break;
    }
    w = ps.create(name + ".w", std::move(wt));
    b = ps.create(name + ".b", Tensor({cout}));
  }

  NodeRef operator()(NodeRef x) const { return ag::conv2d(x, w, b, stride, pad); }
};

struct ConvTranspose2d {
  NodeRef w, b;
  int stride = 2, pad = 1;

  ConvTranspose2d() = default;
  ConvTranspose2d(ParamStore& ps, const std::string& name, int cin, int cout, int k, Rng& rng,
                  int stride_ = 2, int pad_ = 1)
      : stride(stride_), pad(pad_) {
    w = ps.create(name + ".w", he_normal({cin, cout, k, k}, cin * k * k, rng));
    b = ps.create(name + ".b", Tensor({cout}));
  }

  NodeRef operator()(NodeRef x) const { return ag::conv_transpose2d(x, w, b, stride, pad); }
};

// Residual block with channel attention: two 3x3 convs, then a squeeze
// (global mean -> 1x1 convs -> sigmoid) that rescales channels before the
// residual add.
struct Rcab {
  Conv2d conv1, conv2;
  Conv2d squeeze1, squeeze2;

  Rcab() = default;
  Rcab(ParamStore& ps, const std::string& name, int channels, Rng& rng, int reduction = 4) {
    const int mid = std::max(1, channels / reduction);
    conv1 = Conv2d(ps, name + ".conv1", channels, channels, 3, rng);
    conv2 = Conv2d(ps, name + ".conv2", channels, channels, 3, rng);
    squeeze1 = Conv2d(ps, name + ".att1", channels, mid, 1, rng);
    squeeze2 = Conv2d(ps, name + ".att2", mid, channels, 1, rng);
  }

  NodeRef operator()(NodeRef x) const {
    NodeRef u = conv2(ag::relu(conv1(x)));
    NodeRef s = ag::sigmoid(squeeze2(ag::relu(squeeze1(ag::global_mean(u)))));
    return ag::add(x, ag::mul_channel(u, s));
  }
};

// Embedded-Gaussian non-local block. Attention over spatial positions; the
// block average-pools itself down when the position count would exceed the
// cap (attention memory is quadratic in positions) and upsamples the
// residual branch back. Output projection is zero-initialized so the block
// starts as identity.
struct NonLocalBlock {
  Conv2d theta, phi, g, out;
  int max_positions = 1024;

  NonLocalBlock() = default;
  NonLocalBlock(ParamStore& ps, const std::string& name, int channels, Rng& rng) {
    const int mid = std::max(1, channels / 2);
    theta = Conv2d(ps, name + ".theta", channels, mid, 1, rng);
    phi = Conv2d(ps, name + ".phi", channels, mid, 1, rng);
    g = Conv2d(ps, name + ".g", channels, mid, 1, rng);
    out = Conv2d(ps, name + ".out", mid, channels, 1, rng, 1, Init::Zero);
  }

  NodeRef operator()(NodeRef x) const {
    const int h = x->value.dim(1), w = x->value.dim(2);
    int factor = 1;
    while (static_cast<std::int64_t>(h / factor) * (w / factor) > max_positions &&
           h % (2 * factor) == 0 && w % (2 * factor) == 0)
      factor *= 2;
    NodeRef inner = factor > 1 ? ag::avg_pool(x, factor) : x;
    const int hh = inner->value.dim(1), ww = inner->value.dim(2);
    const int mid = theta.w->value.dim(0);
    const int p = hh * ww;
    NodeRef tq = ag::reshape(theta(inner), {mid, p});
    NodeRef tk = ag::reshape(phi(inner), {mid, p});
    NodeRef tv = ag::reshape(g(inner), {mid, p});
    NodeRef att = ag::softmax_rows(ag::matmul(tq, tk, /*trans_a=*/true));  // [p,p]
    NodeRef y = ag::reshape(ag::matmul(tv, att, false, /*trans_b=*/true), {mid, hh, ww});
    NodeRef res = out(y);
    if (factor > 1) res = ag::upsample_nearest(res, factor);
    return ag::add(x, res);
  }
};

}  // namespace vecnet::layers
