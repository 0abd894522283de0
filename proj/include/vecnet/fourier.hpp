#pragma once

// Unitary 2-D DFT (1/sqrt(HW) both directions) via cached cosine/sine
// matrices and GEMM; amplitude/phase split and recombination. Raw tensor
// functions plus autograd wrappers for the paths the losses train through.
// Complex spectra are stored as [2,H,W] with plane 0 = real, plane 1 = imag.

#include "vecnet/autograd.hpp"

#include <map>
#include <mutex>

namespace vecnet::fourier {

using core::Tensor;

namespace detail {

struct Basis {
  Tensor cos_m;  // [N,N], symmetric: cos(2*pi*u*h/N)/sqrt(N)
  Tensor sin_m;
};

inline const Basis& basis(int n) {
  static std::map<int, Basis> cache;
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  Basis b{Tensor({n, n}), Tensor({n, n})};
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(n));
  for (int u = 0; u < n; ++u)
    for (int h = 0; h < n; ++h) {
      const double a = 2.0 * M_PI * (static_cast<double>(u) * h / n);
      b.cos_m.at2(u, h) = std::cos(a) * inv_sqrt;
      b.sin_m.at2(u, h) = std::sin(a) * inv_sqrt;
    }
  return cache.emplace(n, std::move(b)).first->second;
}

}  // namespace detail

// forward transform of a real channel: x[H,W] -> spectrum[2,H,W]
inline Tensor dft2(const Tensor& x) {
  if (x.rank() != 2) throw std::invalid_argument("dft2: need [H,W]");
  if (!x.all_finite()) throw std::invalid_argument("dft2: non-finite input");
  const int h = x.dim(0), w = x.dim(1);
  const auto& bh = detail::basis(h);
  const auto& bw = detail::basis(w);
  auto X = x.mat(h, w);
  auto CH = bh.cos_m.mat(h, h), SH = bh.sin_m.mat(h, h);
  auto CW = bw.cos_m.mat(w, w), SW = bw.sin_m.mat(w, w);
  core::MatrixRM cx = CH * X, sx = SH * X;
  Tensor out({2, h, w});
  core::MatMap re(out.data(), h, w);
  core::MatMap im(out.data() + static_cast<std::int64_t>(h) * w, h, w);
  re.noalias() = cx * CW - sx * SW;
  im.noalias() = -(cx * SW + sx * CW);
  return out;
}

// inverse transform: spectrum[2,H,W] -> (real, imag) images
inline std::pair<Tensor, Tensor> idft2_complex(const Tensor& spec) {
  if (spec.rank() != 3 || spec.dim(0) != 2) throw std::invalid_argument("idft2: need [2,H,W]");
  const int h = spec.dim(1), w = spec.dim(2);
  const auto& bh = detail::basis(h);
  const auto& bw = detail::basis(w);
  core::ConstMatMap Xre(spec.data(), h, w);
  core::ConstMatMap Xim(spec.data() + static_cast<std::int64_t>(h) * w, h, w);
  auto CH = bh.cos_m.mat(h, h), SH = bh.sin_m.mat(h, h);
  auto CW = bw.cos_m.mat(w, w), SW = bw.sin_m.mat(w, w);
  core::MatrixRM cre = CH * Xre, sre = SH * Xre, cim = CH * Xim, sim = SH * Xim;
  Tensor re({h, w}), im({h, w});
  re.mat(h, w).noalias() = cre * CW - sre * SW - cim * SW - sim * CW;
  im.mat(h, w).noalias() = cre * SW + sre * CW + cim * CW - sim * SW;
  return {std::move(re), std::move(im)};
}

// round-trip companion of dft2; the imaginary residue of a spectrum that came
// from a real image is numerical noise and is dropped here
inline Tensor idft2(const Tensor& spec) { return idft2_complex(spec).first; }

// Amplitude/phase decomposition of one channel's spectrum (Eq. symbols live
// in the alignment module; this type just carries the two arrays).
struct SpectrumPair {
  Tensor amplitude;  // [H,W], >= 0
  Tensor phase;      // [H,W], in (-pi, pi]; 0 where amplitude is 0
};

inline SpectrumPair split_amp_phase(const Tensor& spec) {
  if (spec.rank() != 3 || spec.dim(0) != 2)
    throw std::invalid_argument("split_amp_phase: need [2,H,W]");
  if (!spec.all_finite()) throw std::invalid_argument("split_amp_phase: non-finite input");
  const int h = spec.dim(1), w = spec.dim(2);
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  SpectrumPair sp{Tensor({h, w}), Tensor({h, w})};
  for (std::int64_t i = 0; i < plane; ++i) {
    const double re = spec[i], im = spec[plane + i];
    const double a = std::sqrt(re * re + im * im);
    sp.amplitude[i] = a;
    sp.phase[i] = a == 0.0 ? 0.0 : std::atan2(im, re);
  }
  // Spectra of real images are conjugate-symmetric. Near-zero bins carry
  // numerically arbitrary phases, so enforce exact antisymmetry across each
  // conjugate pair; recombination with any symmetric amplitude then stays real.
  for (int u = 0; u < h; ++u)
    for (int v = 0; v < w; ++v) {
      const int mu = (h - u) % h, mv = (w - v) % w;
      if (std::make_pair(u, v) < std::make_pair(mu, mv))
        sp.phase.at2(mu, mv) = -sp.phase.at2(u, v);
    }
  return sp;
}

constexpr double kRecombineImagTol = 1e-4;

namespace detail {

// true at the bins that are their own conjugate partner; real images are
// purely real there
inline bool self_conjugate_bin(int u, int v, int h, int w) {
  return u == (h - u) % h && v == (w - v) % w;
}

}  // namespace detail

// inverse DFT of amplitude*exp(i*phase); the imaginary part must be residual
inline Tensor recombine(const Tensor& amplitude, const Tensor& phase) {
  if (!amplitude.same_shape(phase) || amplitude.rank() != 2)
    throw std::invalid_argument("recombine: amplitude/phase shape mismatch");
  const int h = amplitude.dim(0), w = amplitude.dim(1);
  Tensor spec({2, h, w});
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  for (int u = 0; u < h; ++u)
    for (int v = 0; v < w; ++v) {
      const std::int64_t i = static_cast<std::int64_t>(u) * w + v;
      spec[i] = amplitude[i] * std::cos(phase[i]);
      spec[plane + i] =
          detail::self_conjugate_bin(u, v, h, w) ? 0.0 : amplitude[i] * std::sin(phase[i]);
    }
  auto [re, im] = idft2_complex(spec);
  double resid = 0.0;
  for (std::int64_t i = 0; i < plane; ++i) resid = std::max(resid, std::abs(im[i]));
  if (resid > kRecombineImagTol)
    throw std::runtime_error("recombine: imaginary residue " + std::to_string(resid) +
                             " exceeds tolerance; amplitude/phase pair is not consistent "
                             "with a real image");
  return re;
}

// Symmetrize a spectrum-domain map: m(u,v) <- (m(u,v) + m(-u,-v))/2 with
// indices mod (H,W). Amplitudes of real images satisfy this exactly; applying
// it to a learned amplitude keeps recombined frames real.
inline Tensor symmetrize_spectrum(const Tensor& m) {
  if (m.rank() != 2) throw std::invalid_argument("symmetrize_spectrum: need [H,W]");
  const int h = m.dim(0), w = m.dim(1);
  Tensor out({h, w});
  for (int u = 0; u < h; ++u)
    for (int v = 0; v < w; ++v)
      out.at2(u, v) = 0.5 * (m.at2(u, v) + m.at2((h - u) % h, (w - v) % w));
  return out;
}

// ---------------------------------------------------------------------------
// autograd wrappers

// x[H,W] -> [2,H,W]; the transform is linear, so backward applies the adjoint
inline ag::NodeRef dft2_op(ag::NodeRef x) {
  Tensor out = dft2(x->value);
  const int h = x->value.dim(0), w = x->value.dim(1);
  return ag::make_op(std::move(out), {x}, [x = x.get(), h, w](ag::Node& self) {
    const auto& bh = detail::basis(h);
    const auto& bw = detail::basis(w);
    auto CH = bh.cos_m.mat(h, h), SH = bh.sin_m.mat(h, h);
    auto CW = bw.cos_m.mat(w, w), SW = bw.sin_m.mat(w, w);
    core::ConstMatMap gre(self.grad.data(), h, w);
    core::ConstMatMap gim(self.grad.data() + static_cast<std::int64_t>(h) * w, h, w);
    core::MatrixRM cre = CH * gre, sre = SH * gre, cim = CH * gim, sim = SH * gim;
    x->grad_buf().mat(h, w).noalias() += cre * CW - sre * SW - cim * SW - sim * CW;
  });
}

// [2,H,W] -> amplitude [H,W]
inline ag::NodeRef amplitude_op(ag::NodeRef spec) {
  const int h = spec->value.dim(1), w = spec->value.dim(2);
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  Tensor out({h, w});
  for (std::int64_t i = 0; i < plane; ++i) {
    const double re = spec->value[i], im = spec->value[plane + i];
    out[i] = std::sqrt(re * re + im * im);
  }
  return ag::make_op(std::move(out), {spec}, [s = spec.get(), a = out, plane](ag::Node& self) {
    Tensor& buf = s->grad_buf();
    for (std::int64_t i = 0; i < plane; ++i) {
      if (a[i] < 1e-12) continue;  // subgradient 0 at the origin
      buf[i] += self.grad[i] * s->value[i] / a[i];
      buf[plane + i] += self.grad[i] * s->value[plane + i] / a[i];
    }
  });
}

inline ag::NodeRef symmetrize_spectrum_op(ag::NodeRef m) {
  Tensor out = symmetrize_spectrum(m->value);
  const int h = m->value.dim(0), w = m->value.dim(1);
  return ag::make_op(std::move(out), {m}, [m = m.get(), h, w](ag::Node& self) {
    Tensor& buf = m->grad_buf();
    for (int u = 0; u < h; ++u)
      for (int v = 0; v < w; ++v) {
        const double g = 0.5 * self.grad[static_cast<std::int64_t>(u) * w + v];
        buf[static_cast<std::int64_t>(u) * w + v] += g;
        buf[static_cast<std::int64_t>((h - u) % h) * w + (w - v) % w] += g;
      }
  });
}

// recombine with a fixed phase: only the amplitude carries gradient
inline ag::NodeRef recombine_op(ag::NodeRef amplitude, Tensor phase) {
  Tensor out = recombine(amplitude->value, phase);
  const int h = out.dim(0), w = out.dim(1);
  return ag::make_op(std::move(out), {amplitude},
                     [a = amplitude.get(), phase = std::move(phase), h, w](ag::Node& self) {
    const auto& bh = detail::basis(h);
    const auto& bw = detail::basis(w);
    auto CH = bh.cos_m.mat(h, h), SH = bh.sin_m.mat(h, h);
    auto CW = bw.cos_m.mat(w, w), SW = bw.sin_m.mat(w, w);
    core::ConstMatMap g(self.grad.data(), h, w);
    // y = CH*Xre*CW - SH*Xre*SW - CH*Xim*SW - SH*Xim*CW with Xre=A.cosP, Xim=A.sinP
    core::MatrixRM cg = CH * g, sg = SH * g;
    core::MatrixRM dre = cg * CW - sg * SW;
    core::MatrixRM dim = -(cg * SW + sg * CW);
    Tensor& buf = a->grad_buf();
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double p = phase.at2(y, x);
        const double sp = detail::self_conjugate_bin(y, x, h, w) ? 0.0 : std::sin(p);
        buf[static_cast<std::int64_t>(y) * w + x] += dre(y, x) * std::cos(p) + dim(y, x) * sp;
      }
  });
}

}  // namespace vecnet::fourier
