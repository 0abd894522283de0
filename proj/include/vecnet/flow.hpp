#pragma once

// Dense optical flow by polynomial expansion: each neighborhood is fitted
// with a quadratic model through Gaussian-weighted least squares, and the
// displacement field is solved from the coefficient differences, iterated
// over an image pyramid. Identical inputs produce an exactly-zero field.
//
// Convention: next(p + flow(p)) ~ prev(p); flow stored [H,W,2] as (dy,dx).

#include "vecnet/tensor.hpp"

#include <Eigen/Dense>

namespace vecnet::flow {

using core::Tensor;

namespace detail {

inline int clampi(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

// separable correlation with border replicate; kernel is full (2r+1) taps
inline Tensor correlate_rows(const Tensor& img, const std::vector<double>& k, int r) {
  const int h = img.dim(0), w = img.dim(1);
  Tensor out({h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int t = -r; t <= r; ++t)
        acc += k[static_cast<std::size_t>(t + r)] * img.at2(clampi(y + t, 0, h - 1), x);
      out.at2(y, x) = acc;
    }
  return out;
}

inline Tensor correlate_cols(const Tensor& img, const std::vector<double>& k, int r) {
  const int h = img.dim(0), w = img.dim(1);
  Tensor out({h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int t = -r; t <= r; ++t)
        acc += k[static_cast<std::size_t>(t + r)] * img.at2(y, clampi(x + t, 0, w - 1));
      out.at2(y, x) = acc;
    }
  return out;
}

inline std::vector<double> gaussian_kernel(int r, double sigma) {
  std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
  double sum = 0.0;
  for (int t = -r; t <= r; ++t) {
    k[static_cast<std::size_t>(t + r)] = std::exp(-0.5 * t * t / (sigma * sigma));
    sum += k[static_cast<std::size_t>(t + r)];
  }
  for (auto& v : k) v /= sum;
  return k;
}

inline double bilinear_clamped(const Tensor& img, double fy, double fx) {
  const int h = img.dim(0), w = img.dim(1);
  const double cy = std::min(static_cast<double>(h - 1), std::max(0.0, fy));
  const double cx = std::min(static_cast<double>(w - 1), std::max(0.0, fx));
  const int y0 = std::min(h - 2 < 0 ? 0 : h - 2, static_cast<int>(cy));
  const int x0 = std::min(w - 2 < 0 ? 0 : w - 2, static_cast<int>(cx));
  const double ay = cy - y0, ax = cx - x0;
  const int y1 = std::min(h - 1, y0 + 1), x1 = std::min(w - 1, x0 + 1);
  return (1 - ay) * ((1 - ax) * img.at2(y0, x0) + ax * img.at2(y0, x1)) +
         ay * ((1 - ax) * img.at2(y1, x0) + ax * img.at2(y1, x1));
}

struct PolyCoeffs {
  // per-pixel model f(o) = c + bx*ox + by*oy + axx*ox^2 + ayy*oy^2 + axy*ox*oy
  Tensor bx, by, axx, ayy, axy;
};

inline PolyCoeffs polynomial_expansion(const Tensor& img, int r, double sigma) {
  const auto g = gaussian_kernel(r, sigma);
  std::vector<double> gx(g.size()), gxx(g.size());
  for (int t = -r; t <= r; ++t) {
    gx[static_cast<std::size_t>(t + r)] = g[static_cast<std::size_t>(t + r)] * t;
    gxx[static_cast<std::size_t>(t + r)] = g[static_cast<std::size_t>(t + r)] * t * t;
  }

  // metric of the weighted basis {1, x, y, x^2, y^2, xy}
  double s0 = 0, s2 = 0, s4 = 0;
  for (int t = -r; t <= r; ++t) {
    s0 += g[static_cast<std::size_t>(t + r)];
    s2 += gxx[static_cast<std::size_t>(t + r)];
    double t4 = static_cast<double>(t) * t * t * t;
    s4 += g[static_cast<std::size_t>(t + r)] * t4;
  }
  Eigen::Matrix<double, 6, 6> gm = Eigen::Matrix<double, 6, 6>::Zero();
  gm(0, 0) = s0 * s0;
  gm(0, 3) = gm(3, 0) = s2 * s0;
  gm(0, 4) = gm(4, 0) = s2 * s0;
  gm(1, 1) = s2 * s0;
  gm(2, 2) = s2 * s0;
  gm(3, 3) = s4 * s0;
  gm(4, 4) = s4 * s0;
  gm(3, 4) = gm(4, 3) = s2 * s2;
  gm(5, 5) = s2 * s2;
  const Eigen::Matrix<double, 6, 6> ginv = gm.inverse();

  // separable projections onto the weighted basis
  Tensor gy_img = correlate_rows(img, g, r);
  Tensor p0 = correlate_cols(gy_img, g, r);     // 1
  Tensor p1 = correlate_cols(gy_img, gx, r);    // x
  Tensor p3 = correlate_cols(gy_img, gxx, r);   // x^2
  Tensor dy_img = correlate_rows(img, gx, r);
  Tensor p2 = correlate_cols(dy_img, g, r);     // y
  Tensor p5 = correlate_cols(dy_img, gx, r);    // xy
  Tensor dyy_img = correlate_rows(img, gxx, r);
  Tensor p4 = correlate_cols(dyy_img, g, r);    // y^2

  const int h = img.dim(0), w = img.dim(1);
  PolyCoeffs out{Tensor({h, w}), Tensor({h, w}), Tensor({h, w}), Tensor({h, w}), Tensor({h, w})};
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(h) * w; ++i) {
    Eigen::Matrix<double, 6, 1> p;
    p << p0[i], p1[i], p2[i], p3[i], p4[i], p5[i];
    const Eigen::Matrix<double, 6, 1> rvec = ginv * p;
    out.bx[i] = rvec(1);
    out.by[i] = rvec(2);
    out.axx[i] = rvec(3);
    out.ayy[i] = rvec(4);
    out.axy[i] = rvec(5);
  }
  return out;
}

inline Tensor downsample_half(const Tensor& img) {
  static const std::vector<double> k{1.0 / 16, 4.0 / 16, 6.0 / 16, 4.0 / 16, 1.0 / 16};
  Tensor blurred = correlate_cols(correlate_rows(img, k, 2), k, 2);
  const int h = std::max(1, img.dim(0) / 2), w = std::max(1, img.dim(1) / 2);
  Tensor out({h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) out.at2(y, x) = blurred.at2(2 * y, 2 * x);
  return out;
}

// one displacement refinement at a fixed scale, starting from flow d0
inline void displacement_step(const PolyCoeffs& c1, const PolyCoeffs& c2, Tensor& flow_y,
                              Tensor& flow_x, int win_r, double win_sigma) {
  const int h = flow_y.dim(0), w = flow_y.dim(1);
  Tensor g11({h, w}), g12({h, w}), g22({h, w}), h1({h, w}), h2({h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double dy0 = flow_y.at2(y, x), dx0 = flow_x.at2(y, x);
      const double sy = y + dy0, sx = x + dx0;
      const double a11 = 0.5 * (c1.axx.at2(y, x) + bilinear_clamped(c2.axx, sy, sx));
      const double a22 = 0.5 * (c1.ayy.at2(y, x) + bilinear_clamped(c2.ayy, sy, sx));
      const double a12 = 0.25 * (c1.axy.at2(y, x) + bilinear_clamped(c2.axy, sy, sx));
      const double dbx = -0.5 * (bilinear_clamped(c2.bx, sy, sx) - c1.bx.at2(y, x)) +
                         a11 * dx0 + a12 * dy0;
      const double dby = -0.5 * (bilinear_clamped(c2.by, sy, sx) - c1.by.at2(y, x)) +
                         a12 * dx0 + a22 * dy0;
      // accumulate normal equations of A d = db
      g11.at2(y, x) = a11 * a11 + a12 * a12;
      g12.at2(y, x) = a12 * (a11 + a22);
      g22.at2(y, x) = a22 * a22 + a12 * a12;
      h1.at2(y, x) = a11 * dbx + a12 * dby;
      h2.at2(y, x) = a12 * dbx + a22 * dby;
    }
  const auto wk = gaussian_kernel(win_r, win_sigma);
  for (Tensor* t : {&g11, &g12, &g22, &h1, &h2})
    *t = correlate_cols(correlate_rows(*t, wk, win_r), wk, win_r);
  constexpr double kReg = 1e-9;
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(h) * w; ++i) {
    const double det = (g11[i] + kReg) * (g22[i] + kReg) - g12[i] * g12[i];
    if (std::abs(det) < 1e-30) {
      flow_x[i] = 0.0;
      flow_y[i] = 0.0;
      continue;
    }
    flow_x[i] = ((g22[i] + kReg) * h1[i] - g12[i] * h2[i]) / det;
    flow_y[i] = ((g11[i] + kReg) * h2[i] - g12[i] * h1[i]) / det;
  }
}

inline Tensor upsample_flow_component(const Tensor& f, int oh, int ow) {
  Tensor out({oh, ow});
  const double sy = static_cast<double>(f.dim(0)) / oh;
  const double sx = static_cast<double>(f.dim(1)) / ow;
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x)
      out.at2(y, x) = bilinear_clamped(f, (y + 0.5) * sy - 0.5, (x + 0.5) * sx - 0.5);
  return out;
}

}  // namespace detail

struct FlowParams {
  int levels = 3;
  int iterations = 3;
  int poly_radius = 3;
  double poly_sigma = 1.2;
  int win_radius = 7;
  double win_sigma = 3.5;
};

// prev, next: [H,W] intensity images -> flow [H,W,2] (dy,dx)
inline Tensor dense_flow(const Tensor& prev, const Tensor& next, const FlowParams& params = {}) {
  if (!prev.same_shape(next) || prev.rank() != 2)
    throw std::invalid_argument("dense_flow: need matching [H,W] inputs");

  std::vector<Tensor> pyr_prev{prev}, pyr_next{next};
  for (int lv = 1; lv < params.levels; ++lv) {
    if (pyr_prev.back().dim(0) < 2 * params.poly_radius + 2 ||
        pyr_prev.back().dim(1) < 2 * params.poly_radius + 2)
      break;
    pyr_prev.push_back(detail::downsample_half(pyr_prev.back()));
    pyr_next.push_back(detail::downsample_half(pyr_next.back()));
  }

  Tensor fy, fx;
  for (int lv = static_cast<int>(pyr_prev.size()) - 1; lv >= 0; --lv) {
    const Tensor& a = pyr_prev[static_cast<std::size_t>(lv)];
    const Tensor& b = pyr_next[static_cast<std::size_t>(lv)];
    const int h = a.dim(0), w = a.dim(1);
    if (fy.empty()) {
      fy = Tensor({h, w});
      fx = Tensor({h, w});
    } else {
      fy = detail::upsample_flow_component(fy, h, w);
      fx = detail::upsample_flow_component(fx, h, w);
      const double gain = 2.0;  // coordinates doubled between levels
      for (std::int64_t i = 0; i < fy.size(); ++i) {
        fy[i] *= gain;
        fx[i] *= gain;
      }
    }
    const auto c1 = detail::polynomial_expansion(a, params.poly_radius, params.poly_sigma);
    const auto c2 = detail::polynomial_expansion(b, params.poly_radius, params.poly_sigma);
    for (int it = 0; it < params.iterations; ++it)
      detail::displacement_step(c1, c2, fy, fx, params.win_radius, params.win_sigma);
  }

  const int h = prev.dim(0), w = prev.dim(1);
  Tensor out({h, w, 2});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      out.at3(y, x, 0) = fy.at2(y, x);
      out.at3(y, x, 1) = fx.at2(y, x);
    }
  return out;
}

inline double mean_magnitude(const Tensor& flow_field) {
  const int h = flow_field.dim(0), w = flow_field.dim(1);
  double acc = 0.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) acc += std::hypot(flow_field.at3(y, x, 0), flow_field.at3(y, x, 1));
  return acc / (static_cast<double>(h) * w);
}

}  // namespace vecnet::flow
