#pragma once

// Spatial ops on [C,H,W] tensors: im2col-backed convolution, transposed
// convolution, nearest upsampling, average pooling, instance normalization,
// global pooling, and deformable (offset-sampled) depthwise convolution.

#include "vecnet/autograd.hpp"

namespace vecnet::ag {

namespace detail {

inline int conv_out_size(int in, int k, int stride, int pad) {
  const int num = in + 2 * pad - k;
  if (num < 0 || num % stride != 0)
    throw std::invalid_argument("conv: input size " + std::to_string(in) +
                                " incompatible with k=" + std::to_string(k) +
                                " stride=" + std::to_string(stride) +
                                " pad=" + std::to_string(pad));
  return num / stride + 1;
}

// cols: [Cin*k*k, Ho*Wo]
inline void im2col(const Tensor& x, int k, int stride, int pad, int ho, int wo, Tensor& cols) {
  const int cin = x.dim(0), h = x.dim(1), w = x.dim(2);
  double* dst = cols.data();
  for (int c = 0; c < cin; ++c)
    for (int ki = 0; ki < k; ++ki)
      for (int kj = 0; kj < k; ++kj)
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= h) {
            for (int ox = 0; ox < wo; ++ox) *dst++ = 0.0;
            continue;
          }
          const double* row = x.data() + (static_cast<std::int64_t>(c) * h + iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kj;
            *dst++ = (ix < 0 || ix >= w) ? 0.0 : row[ix];
          }
        }
}

// adjoint of im2col: scatter cols back into an image
inline void col2im(const Tensor& cols, int cin, int h, int w, int k, int stride, int pad,
                   int ho, int wo, Tensor& img) {
  img.fill(0.0);
  const double* src = cols.data();
  for (int c = 0; c < cin; ++c)
    for (int ki = 0; ki < k; ++ki)
      for (int kj = 0; kj < k; ++kj)
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= h) {
            src += wo;
            continue;
          }
          double* row = img.data() + (static_cast<std::int64_t>(c) * h + iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kj;
            if (ix >= 0 && ix < w) row[ix] += *src;
            ++src;
          }
        }
}

}  // namespace detail

// x[Cin,H,W] (*) w[Cout,Cin,k,k] + b[Cout]; zero padding.
inline NodeRef conv2d(NodeRef x, NodeRef w, NodeRef b, int stride = 1, int pad = -1) {
  if (x->value.rank() != 3 || w->value.rank() != 4)
    throw std::invalid_argument("conv2d: need x[Cin,H,W], w[Cout,Cin,k,k]");
  const int cin = x->value.dim(0), h = x->value.dim(1), wd = x->value.dim(2);
  const int cout = w->value.dim(0), k = w->value.dim(2);
  if (w->value.dim(1) != cin || w->value.dim(3) != k)
    throw std::invalid_argument("conv2d: weight shape mismatch, x " + x->value.shape_str() +
                                " w " + w->value.shape_str());
  if (pad < 0) pad = k / 2;
  const int ho = detail::conv_out_size(h, k, stride, pad);
  const int wo = detail::conv_out_size(wd, k, stride, pad);
  const int kk = cin * k * k;
  const std::int64_t np = static_cast<std::int64_t>(ho) * wo;

  Tensor cols({kk, ho * wo});
  detail::im2col(x->value, k, stride, pad, ho, wo, cols);

  Tensor out({cout, ho, wo});
  out.mat(cout, ho * wo).noalias() = w->value.mat(cout, kk) * cols.mat(kk, ho * wo);
  if (b) {
    check_shape(b->value, {cout}, "conv2d bias");
    for (int c = 0; c < cout; ++c) {
      double* p = out.data() + c * np;
      for (std::int64_t i = 0; i < np; ++i) p[i] += b->value[c];
    }
  }

  std::vector<NodeRef> parents = {x, w};
  if (b) parents.push_back(b);
  return make_op(std::move(out), std::move(parents),
                 [x = x.get(), w = w.get(), b = b ? b.get() : nullptr, cols = std::move(cols),
                  cin, h, wd, cout, k, stride, pad, ho, wo, kk, np](Node& self) {
    auto G = self.grad.mat(cout, ho * wo);
    if (w->requires_grad)
      w->grad_buf().mat(cout, kk).noalias() += G * cols.mat(kk, ho * wo).transpose();
    if (b && b->requires_grad) {
      Tensor& db = b->grad_buf();
      for (int c = 0; c < cout; ++c) {
        double acc = 0.0;
        const double* p = self.grad.data() + c * np;
        for (std::int64_t i = 0; i < np; ++i) acc += p[i];
        db[c] += acc;
      }
    }
    if (x->requires_grad) {
      Tensor dcols({kk, ho * wo});
      dcols.mat(kk, ho * wo).noalias() = w->value.mat(cout, kk).transpose() * G;
      Tensor dx({cin, h, wd});
      detail::col2im(dcols, cin, h, wd, k, stride, pad, ho, wo, dx);
      detail::accumulate(*x, dx);
    }
  });
}

// Transposed convolution, the adjoint of conv2d(stride,pad):
// x[Cin,h,w] -> out[Cout, stride*(h-1)+k-2p, ...]; w[Cin,Cout,k,k].
inline NodeRef conv_transpose2d(NodeRef x, NodeRef w, NodeRef b, int stride, int pad) {
  if (x->value.rank() != 3 || w->value.rank() != 4)
    throw std::invalid_argument("conv_transpose2d: need x[Cin,h,w], w[Cin,Cout,k,k]");
  const int cin = x->value.dim(0), h = x->value.dim(1), wd = x->value.dim(2);
  const int cout = w->value.dim(1), k = w->value.dim(2);
  if (w->value.dim(0) != cin || w->value.dim(3) != k)
    throw std::invalid_argument("conv_transpose2d: weight shape mismatch");
  const int oh = stride * (h - 1) + k - 2 * pad;
  const int ow = stride * (wd - 1) + k - 2 * pad;
  if (oh <= 0 || ow <= 0) throw std::invalid_argument("conv_transpose2d: bad output size");
  const int kk = cout * k * k;
  const std::int64_t np = static_cast<std::int64_t>(oh) * ow;

  // cols = W^T xmat, then scatter with the adjoint geometry
  Tensor cols({kk, h * wd});
  cols.mat(kk, h * wd).noalias() =
      w->value.mat(cin, kk).transpose() * x->value.mat(cin, h * wd);
  Tensor out({cout, oh, ow});
  detail::col2im(cols, cout, oh, ow, k, stride, pad, h, wd, out);
  if (b) {
    check_shape(b->value, {cout}, "conv_transpose2d bias");
    for (int c = 0; c < cout; ++c) {
      double* p = out.data() + c * np;
      for (std::int64_t i = 0; i < np; ++i) p[i] += b->value[c];
    }
  }

  std::vector<NodeRef> parents = {x, w};
  if (b) parents.push_back(b);
  return make_op(std::move(out), std::move(parents),
                 [x = x.get(), w = w.get(), b = b ? b.get() : nullptr, cin, h, wd, cout, k,
                  stride, pad, oh, ow, kk, np](Node& self) {
    Tensor gcols({kk, h * wd});
    detail::im2col(self.grad, k, stride, pad, h, wd, gcols);
    if (x->requires_grad)
      x->grad_buf().mat(cin, h * wd).noalias() +=
          w->value.mat(cin, kk) * gcols.mat(kk, h * wd);
    if (w->requires_grad)
      w->grad_buf().mat(cin, kk).noalias() +=
          x->value.mat(cin, h * wd) * gcols.mat(kk, h * wd).transpose();
    if (b && b->requires_grad) {
      Tensor& db = b->grad_buf();
      for (int c = 0; c < cout; ++c) {
        double acc = 0.0;
        const double* p = self.grad.data() + c * np;
        for (std::int64_t i = 0; i < np; ++i) acc += p[i];
        db[c] += acc;
      }
    }
  });
}

inline NodeRef upsample_nearest(NodeRef x, int factor) {
  if (x->value.rank() != 3) throw std::invalid_argument("upsample_nearest: need [C,H,W]");
  const int c = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
  Tensor out({c, h * factor, w * factor});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h * factor; ++y)
      for (int xx = 0; xx < w * factor; ++xx)
        out.at3(ch, y, xx) = x->value.at3(ch, y / factor, xx / factor);
  return make_op(std::move(out), {x}, [x = x.get(), c, h, w, factor](Node& self) {
    Tensor& buf = x->grad_buf();
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h * factor; ++y)
        for (int xx = 0; xx < w * factor; ++xx)
          buf[(static_cast<std::int64_t>(ch) * h + y / factor) * w + xx / factor] +=
              self.grad.at3(ch, y, xx);
  });
}

inline NodeRef avg_pool(NodeRef x, int factor) {
  if (x->value.rank() != 3) throw std::invalid_argument("avg_pool: need [C,H,W]");
  const int c = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
  if (h % factor != 0 || w % factor != 0)
    throw std::invalid_argument("avg_pool: size not divisible by factor");
  const int oh = h / factor, ow = w / factor;
  const double inv = 1.0 / (factor * factor);
  Tensor out({c, oh, ow});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < oh; ++y)
      for (int xx = 0; xx < ow; ++xx) {
        double s = 0.0;
        for (int dy = 0; dy < factor; ++dy)
          for (int dx = 0; dx < factor; ++dx)
            s += x->value.at3(ch, y * factor + dy, xx * factor + dx);
        out.at3(ch, y, xx) = s * inv;
      }
  return make_op(std::move(out), {x}, [x = x.get(), c, oh, ow, factor, inv](Node& self) {
    Tensor& buf = x->grad_buf();
    const int h = oh * factor, w = ow * factor;
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < oh; ++y)
        for (int xx = 0; xx < ow; ++xx) {
          const double g = self.grad.at3(ch, y, xx) * inv;
          for (int dy = 0; dy < factor; ++dy)
            for (int dx = 0; dx < factor; ++dx)
              buf[(static_cast<std::int64_t>(ch) * h + y * factor + dy) * w + xx * factor + dx] += g;
        }
  });
}

// per-channel global mean -> [C,1,1]
inline NodeRef global_mean(NodeRef x) {
  if (x->value.rank() != 3) throw std::invalid_argument("global_mean: need [C,H,W]");
  const int c = x->value.dim(0);
  const std::int64_t plane = static_cast<std::int64_t>(x->value.dim(1)) * x->value.dim(2);
  Tensor out({c, 1, 1});
  for (int ch = 0; ch < c; ++ch) {
    double s = 0.0;
    const double* p = x->value.data() + ch * plane;
    for (std::int64_t i = 0; i < plane; ++i) s += p[i];
    out[ch] = s / static_cast<double>(plane);
  }
  return make_op(std::move(out), {x}, [x = x.get(), c, plane](Node& self) {
    Tensor& buf = x->grad_buf();
    for (int ch = 0; ch < c; ++ch) {
      const double g = self.grad[ch] / static_cast<double>(plane);
      double* p = buf.data() + ch * plane;
      for (std::int64_t i = 0; i < plane; ++i) p[i] += g;
    }
  });
}

// Per-channel, per-sample normalization to zero mean / unit variance.
inline NodeRef instance_norm(NodeRef x, double eps = 1e-5) {
  if (x->value.rank() != 3) throw std::invalid_argument("instance_norm: need [C,H,W]");
  const int c = x->value.dim(0);
  const std::int64_t plane = static_cast<std::int64_t>(x->value.dim(1)) * x->value.dim(2);
  Tensor out(x->value.shape());
  std::vector<double> inv_std(c);
  for (int ch = 0; ch < c; ++ch) {
    const double* p = x->value.data() + ch * plane;
    double mu = 0.0;
    for (std::int64_t i = 0; i < plane; ++i) mu += p[i];
    mu /= static_cast<double>(plane);
    double var = 0.0;
    for (std::int64_t i = 0; i < plane; ++i) var += (p[i] - mu) * (p[i] - mu);
    var /= static_cast<double>(plane);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[ch] = is;
    double* o = out.data() + ch * plane;
    for (std::int64_t i = 0; i < plane; ++i) o[i] = (p[i] - mu) * is;
  }
  return make_op(std::move(out), {x},
                 [x = x.get(), y = out, inv_std = std::move(inv_std), c, plane](Node& self) {
    Tensor& buf = x->grad_buf();
    for (int ch = 0; ch < c; ++ch) {
      const double* g = self.grad.data() + ch * plane;
      const double* yy = y.data() + ch * plane;
      double gmean = 0.0, gymean = 0.0;
      for (std::int64_t i = 0; i < plane; ++i) {
        gmean += g[i];
        gymean += g[i] * yy[i];
      }
      gmean /= static_cast<double>(plane);
      gymean /= static_cast<double>(plane);
      double* d = buf.data() + ch * plane;
      for (std::int64_t i = 0; i < plane; ++i)
        d[i] += inv_std[ch] * (g[i] - gmean - yy[i] * gymean);
    }
  });
}

// ---------------------------------------------------------------------------
// Deformable depthwise convolution. 3x3 taps sampled at positions displaced
// by a learned per-pixel offset field; bilinear interpolation, zero padding
// outside bounds. offsets[2*9*groups, H, W] as (dy, dx) pairs per tap;
// channel c uses offset group c*groups/C.

struct DeformGeometry {
  int channels = 0, h = 0, w = 0, groups = 1;
};

namespace detail {

struct BilinearSample {
  double value = 0.0;
  double d_dy = 0.0;  // derivative of value w.r.t. the y sampling coordinate
  double d_dx = 0.0;
};

inline BilinearSample bilinear_zero_pad(const double* plane, int h, int w, double fy, double fx) {
  BilinearSample s;
  const int y0 = static_cast<int>(std::floor(fy));
  const int x0 = static_cast<int>(std::floor(fx));
  const double ay = fy - y0, ax = fx - x0;
  double v[2][2] = {{0, 0}, {0, 0}};
  for (int dy = 0; dy < 2; ++dy)
    for (int dx = 0; dx < 2; ++dx) {
      const int yy = y0 + dy, xx = x0 + dx;
      if (yy >= 0 && yy < h && xx >= 0 && xx < w)
        v[dy][dx] = plane[static_cast<std::int64_t>(yy) * w + xx];
    }
  s.value = (1 - ay) * ((1 - ax) * v[0][0] + ax * v[0][1]) +
            ay * ((1 - ax) * v[1][0] + ax * v[1][1]);
  s.d_dy = (1 - ax) * (v[1][0] - v[0][0]) + ax * (v[1][1] - v[0][1]);
  s.d_dx = (1 - ay) * (v[0][1] - v[0][0]) + ay * (v[1][1] - v[1][0]);
  return s;
}

}  // namespace detail

// x[C,H,W], offsets[2*9*groups,H,W], w[C,3,3], b[C] -> out[C,H,W]
inline NodeRef deform_conv3x3(NodeRef x, NodeRef offsets, NodeRef w, NodeRef b, int groups = 1) {
  if (x->value.rank() != 3 || w->value.rank() != 3 || w->value.dim(1) != 3 || w->value.dim(2) != 3)
    throw std::invalid_argument("deform_conv3x3: need x[C,H,W], w[C,3,3]");
  const int c = x->value.dim(0), h = x->value.dim(1), wd = x->value.dim(2);
  if (w->value.dim(0) != c) throw std::invalid_argument("deform_conv3x3: weight channels mismatch");
  check_shape(offsets->value, {2 * 9 * groups, h, wd}, "deform_conv3x3 offsets");
  check_shape(b->value, {c}, "deform_conv3x3 bias");

  const std::int64_t plane = static_cast<std::int64_t>(h) * wd;
  Tensor out({c, h, wd});
  for (int ch = 0; ch < c; ++ch) {
    const int grp = ch * groups / c;
    const double* xp = x->value.data() + ch * plane;
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < wd; ++xx) {
        double acc = b->value[ch];
        for (int k = 0; k < 9; ++k) {
          const int kp = grp * 9 + k;
          const double dy = offsets->value[(2 * kp) * plane + y * wd + xx];
          const double dx = offsets->value[(2 * kp + 1) * plane + y * wd + xx];
          const double fy = y + (k / 3 - 1) + dy;
          const double fx = xx + (k % 3 - 1) + dx;
          acc += w->value[ch * 9 + k] * detail::bilinear_zero_pad(xp, h, wd, fy, fx).value;
        }
        out[ch * plane + y * wd + xx] = acc;
      }
  }

  return make_op(std::move(out), {x, offsets, w, b},
                 [x = x.get(), off = offsets.get(), w = w.get(), b = b.get(), c, h, wd, plane,
                  groups](Node& self) {
    Tensor* dx = x->requires_grad ? &x->grad_buf() : nullptr;
    Tensor* doff = off->requires_grad ? &off->grad_buf() : nullptr;
    Tensor* dw = w->requires_grad ? &w->grad_buf() : nullptr;
    Tensor* db = b->requires_grad ? &b->grad_buf() : nullptr;
    for (int ch = 0; ch < c; ++ch) {
      const int grp = ch * groups / c;
      const double* xp = x->value.data() + ch * plane;
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < wd; ++xx) {
          const double g = self.grad[ch * plane + y * wd + xx];
          if (g == 0.0) continue;
          if (db) (*db)[ch] += g;
          for (int k = 0; k < 9; ++k) {
            const int kp = grp * 9 + k;
            const double dy = off->value[(2 * kp) * plane + y * wd + xx];
            const double dxv = off->value[(2 * kp + 1) * plane + y * wd + xx];
            const double fy = y + (k / 3 - 1) + dy;
            const double fx = xx + (k % 3 - 1) + dxv;
            const auto s = detail::bilinear_zero_pad(xp, h, wd, fy, fx);
            const double wk = w->value[ch * 9 + k];
            if (dw) (*dw)[ch * 9 + k] += g * s.value;
            if (doff) {
              (*doff)[(2 * kp) * plane + y * wd + xx] += g * wk * s.d_dy;
              (*doff)[(2 * kp + 1) * plane + y * wd + xx] += g * wk * s.d_dx;
            }
            if (dx) {
              const int y0 = static_cast<int>(std::floor(fy));
              const int x0 = static_cast<int>(std::floor(fx));
              const double ay = fy - y0, ax = fx - x0;
              const double cw[2][2] = {{(1 - ay) * (1 - ax), (1 - ay) * ax},
                                       {ay * (1 - ax), ay * ax}};
              for (int iy = 0; iy < 2; ++iy)
                for (int ix = 0; ix < 2; ++ix) {
                  const int yy = y0 + iy, xc = x0 + ix;
                  if (yy >= 0 && yy < h && xc >= 0 && xc < wd)
                    (*dx)[ch * plane + static_cast<std::int64_t>(yy) * wd + xc] +=
                        g * wk * cw[iy][ix];
                }
            }
          }
        }
    }
  });
}

}  // namespace vecnet::ag
