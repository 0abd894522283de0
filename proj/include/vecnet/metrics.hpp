#pragma once

// Quality and consistency metrics: PSNR, windowed SSIM, average luminance
// variance across frames, lightness order error, and mean dense-flow
// magnitude (polynomial-expansion flow via OpenCV).

#include "vecnet/core.hpp"
#include "vecnet/flow.hpp"
#include "vecnet/rng.hpp"

#include <limits>
#include <map>

namespace vecnet::metrics {

using core::FrameTensor;
using core::Tensor;

struct MetricReport {
  std::map<std::string, double> values;

  double get(const std::string& name) const {
    auto it = values.find(name);
    if (it == values.end()) throw std::invalid_argument("MetricReport: no metric " + name);
    return it->second;
  }
};

// ITU-R 601 luma in [0,1]
inline Tensor luma(const FrameTensor& f) {
  const int h = f.height(), w = f.width();
  Tensor out({h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      out.at2(y, x) = 0.299 * f.at(y, x, 0) + 0.587 * f.at(y, x, 1) + 0.114 * f.at(y, x, 2);
  return out;
}

// 10*log10(1/MSE), peak 1.0; identical inputs report +infinity
inline double psnr(const FrameTensor& a, const FrameTensor& b) {
  if (!a.data.same_shape(b.data)) throw std::invalid_argument("psnr: shape mismatch");
  double mse = 0.0;
  for (std::int64_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.data.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

// ---------------------------------------------------------------------------
// SSIM: 11x11 Gaussian window, sigma 1.5, K1=0.01, K2=0.03, luma channel,
// valid windows only, mean over window positions.

namespace detail {

inline const std::vector<double>& ssim_window() {
  static const std::vector<double> win = [] {
    std::vector<double> w(121);
    double sum = 0.0;
    for (int y = 0; y < 11; ++y)
      for (int x = 0; x < 11; ++x) {
        const double dy = y - 5, dx = x - 5;
        const double v = std::exp(-(dy * dy + dx * dx) / (2.0 * 1.5 * 1.5));
        w[static_cast<std::size_t>(y) * 11 + x] = v;
        sum += v;
      }
    for (auto& v : w) v /= sum;
    return w;
  }();
  return win;
}

}  // namespace detail

inline double ssim(const FrameTensor& a, const FrameTensor& b) {
  if (!a.data.same_shape(b.data)) throw std::invalid_argument("ssim: shape mismatch");
  if (a.height() < 11 || a.width() < 11)
    throw std::invalid_argument("ssim: minimum dimension is 11");
  const Tensor la = luma(a), lb = luma(b);
  const auto& win = detail::ssim_window();
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;  // dynamic range 1.0
  const int h = a.height(), w = a.width();
  double acc = 0.0;
  std::int64_t count = 0;
  for (int y = 0; y + 11 <= h; ++y)
    for (int x = 0; x + 11 <= w; ++x) {
      double mx = 0.0, my = 0.0;
      for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) {
          const double wgt = win[static_cast<std::size_t>(i) * 11 + j];
          mx += wgt * la.at2(y + i, x + j);
          my += wgt * lb.at2(y + i, x + j);
        }
      double vx = 0.0, vy = 0.0, vxy = 0.0;
      for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) {
          const double wgt = win[static_cast<std::size_t>(i) * 11 + j];
          const double dx = la.at2(y + i, x + j) - mx;
          const double dy = lb.at2(y + i, x + j) - my;
          vx += wgt * dx * dx;
          vy += wgt * dy * dy;
          vxy += wgt * dx * dy;
        }
      acc += ((2 * mx * my + c1) * (2 * vxy + c2)) /
             ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  return acc / static_cast<double>(count);
}

// ---------------------------------------------------------------------------
// Temporal stability: population variance across frames of each frame's mean
// luma, reported in 8-bit units.

inline double alv(const std::vector<FrameTensor>& clip) {
  if (clip.size() < 2) throw std::invalid_argument("alv: need at least 2 frames");
  std::vector<double> means;
  means.reserve(clip.size());
  for (const auto& f : clip) means.push_back(luma(f).mean() * 255.0);
  // shift by the first mean: constant clips come out exactly zero
  const double base = means[0];
  for (double& m : means) m -= base;
  double mu = 0.0;
  for (double m : means) mu += m;
  mu /= static_cast<double>(means.size());
  double var = 0.0;
  for (double m : means) var += (m - mu) * (m - mu);
  return var / static_cast<double>(means.size());
}

// ---------------------------------------------------------------------------
// Lightness order error: fraction of pixel pairs whose relative lightness
// ordering differs between the two images. Lightness is the max over RGB.
// Pairs are exhaustive when the (downsampled) grid is small, otherwise a
// seeded sample of pairs per grid row.

namespace detail {

inline Tensor lightness_grid(const FrameTensor& f, int max_side) {
  const int h = f.height(), w = f.width();
  const int step = std::max(1, (std::max(h, w) + max_side - 1) / max_side);
  const int gh = (h + step - 1) / step, gw = (w + step - 1) / step;
  Tensor out({gh, gw});
  for (int gy = 0; gy < gh; ++gy)
    for (int gx = 0; gx < gw; ++gx) {
      const int y = std::min(h - 1, gy * step), x = std::min(w - 1, gx * step);
      out.at2(gy, gx) =
          std::max(f.at(y, x, 0), std::max(f.at(y, x, 1), f.at(y, x, 2)));
    }
  return out;
}

inline int order_sign(double a, double b) { return a < b ? -1 : (a > b ? 1 : 0); }

}  // namespace detail

constexpr int kLoeGridSide = 100;
constexpr int kLoeExactLimit = 4096;        // grids up to this many pixels use all pairs
constexpr int kLoePairsPerRow = 1000;

inline double loe_exact(const Tensor& le, const Tensor& lr) {
  const std::int64_t n = le.size();
  std::int64_t mismatched = 0, total = 0;
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = i + 1; j < n; ++j) {
      mismatched += detail::order_sign(le[i], le[j]) != detail::order_sign(lr[i], lr[j]);
      ++total;
    }
  return total == 0 ? 0.0 : static_cast<double>(mismatched) / static_cast<double>(total);
}

inline double loe(const FrameTensor& enhanced, const FrameTensor& reference) {
  if (!enhanced.data.same_shape(reference.data)) throw std::invalid_argument("loe: shape mismatch");
  const Tensor le = detail::lightness_grid(enhanced, kLoeGridSide);
  const Tensor lr = detail::lightness_grid(reference, kLoeGridSide);
  const std::int64_t n = le.size();
  if (n <= kLoeExactLimit) return loe_exact(le, lr);

  const int gh = le.dim(0);
  core::Rng rng(0x10e5eedULL);
  std::int64_t mismatched = 0, total = 0;
  for (int row = 0; row < gh; ++row) {
    const std::int64_t row_off = static_cast<std::int64_t>(row) * le.dim(1);
    for (int k = 0; k < kLoePairsPerRow; ++k) {
      const std::int64_t i = row_off + rng.index(le.dim(1));
      const std::int64_t j = rng.index(n);
      if (i == j) continue;
      mismatched += detail::order_sign(le[i], le[j]) != detail::order_sign(lr[i], lr[j]);
      ++total;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(mismatched) / static_cast<double>(total);
}

// ---------------------------------------------------------------------------
// Motion activity: mean endpoint magnitude of polynomial-expansion dense
// flow between consecutive luma frames.

inline double mean_flow(const std::vector<FrameTensor>& clip) {
  if (clip.size() < 2) throw std::invalid_argument("mean_flow: need at least 2 frames");
  double acc = 0.0;
  Tensor prev = luma(clip[0]);
  for (std::size_t t = 1; t < clip.size(); ++t) {
    Tensor next = luma(clip[t]);
    acc += flow::mean_magnitude(flow::dense_flow(prev, next));
    prev = std::move(next);
  }
  return acc / static_cast<double>(clip.size() - 1);
}

}  // namespace vecnet::metrics
