#pragma once

// Training objective: charbonnier pixel loss, total-variation smoothness on
// both illumination maps, Fourier amplitude consistency, and their weighted
// sum. All terms are mean-reduced so the weights are resolution-independent.

#include "vecnet/core.hpp"
#include "vecnet/fourier.hpp"

namespace vecnet::losses {

using ag::NodeRef;
using core::LossWeights;
using core::Tensor;

constexpr double kCharbonnierEps = 1e-3;

struct LossReport {
  double pix = 0.0;
  double tv = 0.0;
  double amp = 0.0;
  double total = 0.0;
};

// mean of sqrt((a-b)^2 + eps^2)
inline NodeRef charbonnier(NodeRef pred, NodeRef gt) {
  if (!pred->value.same_shape(gt->value))
    throw std::invalid_argument("charbonnier: shape mismatch " + pred->value.shape_str() +
                                " vs " + gt->value.shape_str());
  const std::int64_t n = pred->value.size();
  Tensor root({static_cast<int>(1)});
  std::vector<double> inv_r(static_cast<std::size_t>(n));
  double acc = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double d = pred->value[i] - gt->value[i];
    const double r = std::sqrt(d * d + kCharbonnierEps * kCharbonnierEps);
    inv_r[static_cast<std::size_t>(i)] = d / r;
    acc += r;
  }
  root[0] = acc / static_cast<double>(n);
  return ag::make_op(std::move(root), {pred, gt},
                     [p = pred.get(), q = gt.get(), inv_r = std::move(inv_r), n](ag::Node& self) {
    const double g = self.grad[0] / static_cast<double>(n);
    if (p->requires_grad) {
      Tensor& buf = p->grad_buf();
      for (std::int64_t i = 0; i < n; ++i) buf[i] += g * inv_r[static_cast<std::size_t>(i)];
    }
    if (q->requires_grad) {
      Tensor& buf = q->grad_buf();
      for (std::int64_t i = 0; i < n; ++i) buf[i] -= g * inv_r[static_cast<std::size_t>(i)];
    }
  });
}

namespace detail {

// mean over channels and valid positions of squared forward differences,
// horizontal and vertical terms averaged separately over their own supports
inline NodeRef tv_one_map(NodeRef m) {
  if (m->value.rank() != 3) throw std::invalid_argument("tv: need [C,H,W]");
  const int c = m->value.dim(0), h = m->value.dim(1), w = m->value.dim(2);
  const std::int64_t nh = static_cast<std::int64_t>(c) * h * std::max(0, w - 1);
  const std::int64_t nv = static_cast<std::int64_t>(c) * std::max(0, h - 1) * w;
  double sh = 0.0, sv = 0.0;
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double v = m->value.at3(ch, y, x);
        if (x + 1 < w) {
          const double d = m->value.at3(ch, y, x + 1) - v;
          sh += d * d;
        }
        if (y + 1 < h) {
          const double d = m->value.at3(ch, y + 1, x) - v;
          sv += d * d;
        }
      }
  Tensor out = Tensor::scalar((nh > 0 ? sh / static_cast<double>(nh) : 0.0) +
                              (nv > 0 ? sv / static_cast<double>(nv) : 0.0));
  return ag::make_op(std::move(out), {m}, [m = m.get(), c, h, w, nh, nv](ag::Node& self) {
    Tensor& buf = m->grad_buf();
    const double gh = nh > 0 ? 2.0 * self.grad[0] / static_cast<double>(nh) : 0.0;
    const double gv = nv > 0 ? 2.0 * self.grad[0] / static_cast<double>(nv) : 0.0;
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const std::int64_t i = (static_cast<std::int64_t>(ch) * h + y) * w + x;
          const double v = m->value[i];
          if (x + 1 < w) {
            const double d = m->value[i + 1] - v;
            buf[i + 1] += gh * d;
            buf[i] -= gh * d;
          }
          if (y + 1 < h) {
            const double d = m->value[i + w] - v;
            buf[i + w] += gv * d;
            buf[i] -= gv * d;
          }
        }
  });
}

}  // namespace detail

// smoothness of both illumination maps
inline NodeRef tv_loss(NodeRef map, NodeRef map_inv) {
  return ag::add(detail::tv_one_map(map), detail::tv_one_map(map_inv));
}

// mean |a - b|
inline NodeRef l1_mean(NodeRef a, NodeRef b) {
  if (!a->value.same_shape(b->value)) throw std::invalid_argument("l1_mean: shape mismatch");
  const std::int64_t n = a->value.size();
  double acc = 0.0;
  for (std::int64_t i = 0; i < n; ++i) acc += std::abs(a->value[i] - b->value[i]);
  Tensor out = Tensor::scalar(acc / static_cast<double>(n));
  return ag::make_op(std::move(out), {a, b}, [a = a.get(), b = b.get(), n](ag::Node& self) {
    const double g = self.grad[0] / static_cast<double>(n);
    for (std::int64_t i = 0; i < n; ++i) {
      const double d = a->value[i] - b->value[i];
      const double s = d > 0.0 ? g : (d < 0.0 ? -g : 0.0);
      if (a->requires_grad) a->grad_buf()[i] += s;
      if (b->requires_grad) b->grad_buf()[i] -= s;
    }
  });
}

// mean absolute difference of per-channel amplitude spectra
inline NodeRef amplitude_loss(NodeRef output, NodeRef gt) {
  if (!output->value.same_shape(gt->value) || output->value.rank() != 3)
    throw std::invalid_argument("amplitude_loss: need matching [3,H,W] inputs");
  const int c = output->value.dim(0), h = output->value.dim(1), w = output->value.dim(2);
  std::vector<NodeRef> diffs;
  for (int ch = 0; ch < c; ++ch) {
    NodeRef oc = ag::reshape(ag::slice_ch(output, ch, ch + 1), {h, w});
    NodeRef gc = ag::reshape(ag::slice_ch(gt, ch, ch + 1), {h, w});
    NodeRef ao = fourier::amplitude_op(fourier::dft2_op(oc));
    NodeRef ag_ = fourier::amplitude_op(fourier::dft2_op(gc));
    diffs.push_back(l1_mean(ao, ag_));
  }
  NodeRef acc = diffs[0];
  for (std::size_t i = 1; i < diffs.size(); ++i) acc = ag::add(acc, diffs[i]);
  return ag::mul_scalar(acc, 1.0 / static_cast<double>(c));
}

struct TotalLoss {
  NodeRef total;  // scalar node for backward
  LossReport report;
};

inline TotalLoss total_loss(NodeRef pix, NodeRef tv, NodeRef amp, const LossWeights& weights) {
  weights.validate();
  LossReport rep;
  rep.pix = pix->value[0];
  rep.tv = tv->value[0];
  rep.amp = amp->value[0];
  for (auto [v, name] : {std::pair{rep.pix, "pix"}, {rep.tv, "tv"}, {rep.amp, "amp"}})
    if (!std::isfinite(v))
      throw std::runtime_error(std::string("total_loss: non-finite ") + name + " component");
  NodeRef total = ag::add(ag::add(ag::mul_scalar(pix, weights.lambda_pix),
                                  ag::mul_scalar(tv, weights.lambda_tv)),
                          ag::mul_scalar(amp, weights.lambda_amp));
  rep.total = total->value[0];
  return {total, rep};
}

// raw-tensor conveniences (metrics, logging, tests)
inline double charbonnier_value(const Tensor& a, const Tensor& b) {
  return charbonnier(ag::constant(a), ag::constant(b))->value[0];
}
inline double tv_value(const Tensor& map, const Tensor& map_inv) {
  return tv_loss(ag::constant(map), ag::constant(map_inv))->value[0];
}
inline double amplitude_value(const Tensor& a, const Tensor& b) {
  return amplitude_loss(ag::constant(a), ag::constant(b))->value[0];
}

}  // namespace vecnet::losses
