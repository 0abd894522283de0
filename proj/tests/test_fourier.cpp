// Transform-level oracles: hand/brute-force DFT values, round trips,
// amplitude/phase properties, recombination contracts, and gradients of the
// spectral autodiff ops.

#include "vecnet/fourier.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace vecnet;
using testutil::circular_translate;
using testutil::random_tensor;

namespace {

// O(N^4) direct evaluation of the unitary transform, used as the oracle
core::Tensor brute_force_dft2(const core::Tensor& x) {
  const int h = x.dim(0), w = x.dim(1);
  core::Tensor out({2, h, w});
  const double norm = 1.0 / std::sqrt(static_cast<double>(h) * w);
  for (int u = 0; u < h; ++u)
    for (int v = 0; v < w; ++v) {
      double re = 0.0, im = 0.0;
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) {
          const double a = -2.0 * M_PI * (static_cast<double>(u) * y / h +
                                          static_cast<double>(v) * xx / w);
          re += x.at2(y, xx) * std::cos(a);
          im += x.at2(y, xx) * std::sin(a);
        }
      out.at3(0, u, v) = re * norm;
      out.at3(1, u, v) = im * norm;
    }
  return out;
}

core::Tensor sobel_edges(const core::Tensor& img) {
  const int h = img.dim(0), w = img.dim(1);
  core::Tensor e({h, w});
  for (int y = 1; y + 1 < h; ++y)
    for (int x = 1; x + 1 < w; ++x) {
      const double gx = img.at2(y - 1, x + 1) + 2 * img.at2(y, x + 1) + img.at2(y + 1, x + 1) -
                        img.at2(y - 1, x - 1) - 2 * img.at2(y, x - 1) - img.at2(y + 1, x - 1);
      const double gy = img.at2(y + 1, x - 1) + 2 * img.at2(y + 1, x) + img.at2(y + 1, x + 1) -
                        img.at2(y - 1, x - 1) - 2 * img.at2(y - 1, x) - img.at2(y - 1, x + 1);
      e.at2(y, x) = std::sqrt(gx * gx + gy * gy);
    }
  return e;
}

double pearson(const core::Tensor& a, const core::Tensor& b) {
  const double ma = a.mean(), mb = b.mean();
  double num = 0.0, va = 0.0, vb = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i) {
    num += (a[i] - ma) * (b[i] - mb);
    va += (a[i] - ma) * (a[i] - ma);
    vb += (b[i] - mb) * (b[i] - mb);
  }
  return num / std::sqrt(va * vb + 1e-30);
}

core::Tensor luma_of(const core::FrameTensor& f) {
  const int h = f.height(), w = f.width();
  core::Tensor out({h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      out.at2(y, x) = 0.299 * f.at(y, x, 0) + 0.587 * f.at(y, x, 1) + 0.114 * f.at(y, x, 2);
  return out;
}

}  // namespace

TEST(Fourier, ConstantImageConcentratesAtDc) {
  const double c = 0.37;
  core::Tensor x = core::Tensor::full({6, 9}, c);
  core::Tensor spec = fourier::dft2(x);
  EXPECT_NEAR(spec.at3(0, 0, 0), c * std::sqrt(6.0 * 9.0), 1e-10);
  for (int u = 0; u < 6; ++u)
    for (int v = 0; v < 9; ++v) {
      if (u == 0 && v == 0) continue;
      EXPECT_NEAR(spec.at3(0, u, v), 0.0, 1e-10);
      EXPECT_NEAR(spec.at3(1, u, v), 0.0, 1e-10);
    }
}

TEST(Fourier, TwoByTwoImpulseHandValue) {
  // [[1,0],[0,0]] under the 1/sqrt(HW) transform: every bin equals 0.5
  core::Tensor x = core::Tensor::from({2, 2}, {1.0, 0.0, 0.0, 0.0});
  core::Tensor spec = fourier::dft2(x);
  for (int u = 0; u < 2; ++u)
    for (int v = 0; v < 2; ++v) {
      EXPECT_NEAR(spec.at3(0, u, v), 0.5, 1e-12);
      EXPECT_NEAR(spec.at3(1, u, v), 0.0, 1e-12);
    }
}

TEST(Fourier, MatchesBruteForceTransform) {
  core::Rng rng(31);
  for (const auto& [h, w] : {std::pair{4, 4}, {5, 7}, {8, 6}}) {
    core::Tensor x = random_tensor({h, w}, rng);
    core::Tensor fast = fourier::dft2(x);
    core::Tensor slow = brute_force_dft2(x);
    EXPECT_LT(fast.max_abs_diff(slow), 1e-10);
  }
}

TEST(Fourier, RoundTripIdentity) {
  core::Rng rng(32);
  for (int rep = 0; rep < 5; ++rep) {
    const int h = 4 + static_cast<int>(rng.index(29));
    const int w = 4 + static_cast<int>(rng.index(29));
    core::Tensor x = random_tensor({h, w}, rng);
    EXPECT_LT(fourier::idft2(fourier::dft2(x)).max_abs_diff(x), 1e-5);
  }
}

TEST(Fourier, RejectsNonFiniteInput) {
  core::Tensor x({4, 4});
  x[5] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(fourier::dft2(x), std::invalid_argument);
}

TEST(Fourier, SplitScalarHandValue) {
  // spectrum value 3+4i -> amplitude 5, phase atan2(4,3)
  core::Tensor spec({2, 1, 1});
  spec[0] = 3.0;
  spec[1] = 4.0;
  auto sp = fourier::split_amp_phase(spec);
  EXPECT_NEAR(sp.amplitude[0], 5.0, 1e-12);
  EXPECT_NEAR(sp.phase[0], std::atan2(4.0, 3.0), 1e-12);
  EXPECT_NEAR(sp.phase[0], 0.9273, 1e-4);
}

TEST(Fourier, RealPositiveSpectrumHasZeroPhase) {
  core::Rng rng(33);
  core::Tensor spec({2, 3, 3});
  for (int i = 0; i < 9; ++i) spec[i] = rng.uniform(0.1, 2.0);
  auto sp = fourier::split_amp_phase(spec);
  for (int i = 0; i < 9; ++i) EXPECT_EQ(sp.phase[i], 0.0);
}

TEST(Fourier, ZeroAmplitudeBinsGetZeroPhase) {
  core::Tensor spec({2, 2, 2});  // all-zero spectrum
  auto sp = fourier::split_amp_phase(spec);
  for (int i = 0; i < 4; ++i) {
    EXPECT_EQ(sp.amplitude[i], 0.0);
    EXPECT_EQ(sp.phase[i], 0.0);
  }
}

TEST(Fourier, AmplitudeHomogeneityAndPhaseInvarianceUnderScaling) {
  core::Rng rng(34);
  core::Tensor x = random_tensor({8, 8}, rng, 0.0, 1.0);
  const double c = 2.7;
  core::Tensor xc = x;
  for (std::int64_t i = 0; i < xc.size(); ++i) xc[i] *= c;
  auto sp = fourier::split_amp_phase(fourier::dft2(x));
  auto spc = fourier::split_amp_phase(fourier::dft2(xc));
  for (std::int64_t i = 0; i < sp.amplitude.size(); ++i) {
    EXPECT_NEAR(spc.amplitude[i], c * sp.amplitude[i], 1e-5);
    if (sp.amplitude[i] > 1e-8) EXPECT_NEAR(spc.phase[i], sp.phase[i], 1e-5);
  }
}

TEST(Fourier, AmplitudeInvariantToCircularTranslationPhaseIsNot) {
  core::Rng rng(35);
  core::Tensor x = random_tensor({12, 10}, rng, 0.0, 1.0);
  core::Tensor xs = circular_translate(x, 3, -2);
  auto sp = fourier::split_amp_phase(fourier::dft2(x));
  auto sps = fourier::split_amp_phase(fourier::dft2(xs));
  EXPECT_LT(sp.amplitude.max_abs_diff(sps.amplitude), 1e-5);
  EXPECT_GT(sp.phase.max_abs_diff(sps.phase), 0.1);
}

TEST(Fourier, RecombineRoundTrip) {
  core::Rng rng(36);
  core::Tensor x = random_tensor({9, 11}, rng, 0.0, 1.0);
  auto sp = fourier::split_amp_phase(fourier::dft2(x));
  EXPECT_LT(fourier::recombine(sp.amplitude, sp.phase).max_abs_diff(x), 1e-5);
}

TEST(Fourier, RecombineZeroAmplitudeGivesZeroImage) {
  core::Rng rng(37);
  core::Tensor amp({6, 6});
  core::Tensor phase = random_tensor({6, 6}, rng, -3.0, 3.0);
  core::Tensor out = fourier::recombine(amp, phase);
  EXPECT_LT(out.max_abs_diff(core::Tensor({6, 6})), 1e-12);
}

TEST(Fourier, RecombineRejectsInconsistentPair) {
  core::Rng rng(38);
  // random asymmetric amplitude with random phase is not a real image
  core::Tensor amp = random_tensor({8, 8}, rng, 0.5, 2.0);
  core::Tensor phase = random_tensor({8, 8}, rng, -3.0, 3.0);
  EXPECT_THROW(fourier::recombine(amp, phase), std::runtime_error);
}

TEST(Fourier, SymmetrizedAmplitudeAlwaysRecombines) {
  core::Rng rng(39);
  core::Tensor amp = fourier::symmetrize_spectrum(random_tensor({8, 8}, rng, 0.5, 2.0));
  core::Tensor x = random_tensor({8, 8}, rng, 0.0, 1.0);
  auto sp = fourier::split_amp_phase(fourier::dft2(x));  // real-image phase
  EXPECT_NO_THROW(fourier::recombine(amp, sp.phase));
}

TEST(Fourier, StructureFollowsPhase) {
  // Same scene, two exposures; the darker one is also shifted. Recombining
  // the bright frame's amplitude with the dark frame's phase must place the
  // structure where the dark frame has it.
  auto scene = testutil::render_scene_frame(48, 48, 0.0, {});
  core::Tensor bright = luma_of(scene);
  core::Tensor dark = circular_translate(bright, 9, 13);
  for (std::int64_t i = 0; i < dark.size(); ++i) dark[i] = 0.25 * std::pow(dark[i], 1.8);

  auto spb = fourier::split_amp_phase(fourier::dft2(bright));
  auto spd = fourier::split_amp_phase(fourier::dft2(dark));
  core::Tensor swapped = fourier::recombine(spb.amplitude, spd.phase);

  core::Tensor e_sw = sobel_edges(swapped);
  const double corr_dark = pearson(e_sw, sobel_edges(dark));
  const double corr_bright = pearson(e_sw, sobel_edges(bright));
  EXPECT_GT(corr_dark, 0.5);
  EXPECT_GT(corr_dark, corr_bright + 0.2);
}

TEST(Fourier, SpectralOpsGradients) {
  core::Rng rng(40);
  auto x = ag::leaf(random_tensor({6, 6}, rng, 0.1, 1.0), true);
  auto amp_param = ag::leaf(random_tensor({6, 6}, rng, 0.5, 2.0), true);
  core::Tensor phase =
      fourier::split_amp_phase(fourier::dft2(random_tensor({6, 6}, rng, 0.0, 1.0))).phase;
  auto w = ag::constant(random_tensor({6, 6}, rng));

  auto loss_dft = [&] {
    auto a = fourier::amplitude_op(fourier::dft2_op(x));
    return ag::mean_all(ag::mul(a, w));
  };
  auto loss_rec = [&] {
    auto sym = fourier::symmetrize_spectrum_op(amp_param);
    auto y = fourier::recombine_op(sym, phase);
    return ag::mean_all(ag::mul(y, w));
  };
  const auto idx = testutil::sample_indices(36, 8, rng);
  EXPECT_LT(testutil::fd_check_param(loss_dft, x, idx).max_rel_err, 1e-2);
  EXPECT_LT(testutil::fd_check_param(loss_rec, amp_param, idx).max_rel_err, 1e-2);
}
