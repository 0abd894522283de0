// Dual-stream illumination: exposure inversion, the two Retinex formulas and
// their symmetry, and the learned estimator's contracts and gradients.

#include "vecnet/illumination.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace vecnet;
using testutil::random_frame;
using testutil::random_tensor;

namespace {

core::ModelConfig micro_config(int channels = 4, int depth = 1) {
  core::ModelConfig cfg;
  cfg.n_radius = 1;
  cfg.base_channels = channels;
  cfg.unet_depth = depth;
  cfg.rcab_count = 1;
  cfg.seed = 99;
  return cfg;
}

struct EstimatorFixture {
  layers::ParamStore ps;
  illum::IlluminationEstimator est;
  explicit EstimatorFixture(const core::ModelConfig& cfg) {
    core::Rng rng(static_cast<std::uint64_t>(cfg.seed));
    est = illum::IlluminationEstimator(ps, cfg, rng);
  }
};

core::Tensor random_map(int h, int w, core::Rng& rng) {
  return random_tensor({h, w, 3}, rng, illum::kIlluminationFloor, 1.0);
}

}  // namespace

TEST(Illumination, InvertExposureScalarCases) {
  auto zeros = core::FrameTensor::zeros(8, 8);
  auto ones = illum::invert_exposure(zeros);
  EXPECT_EQ(ones.data.min(), 1.0);
  EXPECT_EQ(ones.data.max(), 1.0);

  auto f = core::FrameTensor::zeros(8, 8);
  f.data.fill(0.3);
  EXPECT_NEAR(illum::invert_exposure(f).at(0, 0, 0), 0.7, 1e-15);
}

TEST(Illumination, InvertExposureIsAnExactInvolution) {
  core::Rng rng(1);
  auto f = random_frame(10, 12, rng, 0.0, 1.0);
  auto back = illum::invert_exposure(illum::invert_exposure(f));
  EXPECT_EQ(back.data.max_abs_diff(f.data), 0.0);
}

TEST(Illumination, RetinexUnderScalarCases) {
  auto f = core::FrameTensor::zeros(8, 8);
  f.data.fill(0.3);
  core::Tensor ones = core::Tensor::full({8, 8, 3}, 1.0);
  EXPECT_EQ(illum::apply_retinex_under(f, ones).data.max_abs_diff(f.data), 0.0);

  core::Tensor half = core::Tensor::full({8, 8, 3}, 0.5);
  EXPECT_NEAR(illum::apply_retinex_under(f, half).at(0, 0, 0), 0.6, 1e-15);

  f.data.fill(0.8);
  EXPECT_NEAR(illum::apply_retinex_under(f, half).at(0, 0, 0), 1.0, 1e-15);  // 1.6 clamped
  EXPECT_NEAR(illum::retinex_under_unclamped(f, half).at(0, 0, 0), 1.6, 1e-15);
}

TEST(Illumination, RetinexOverScalarCases) {
  auto f = core::FrameTensor::zeros(8, 8);
  f.data.fill(0.9);
  core::Tensor ones = core::Tensor::full({8, 8, 3}, 1.0);
  EXPECT_LT(illum::apply_retinex_over(f, ones).data.max_abs_diff(f.data), 1e-15);

  core::Tensor half = core::Tensor::full({8, 8, 3}, 0.5);
  EXPECT_NEAR(illum::apply_retinex_over(f, half).at(0, 0, 0), 0.8, 1e-15);
}

TEST(Illumination, RejectsIlluminationBelowFloor) {
  core::Rng rng(2);
  auto f = random_frame(8, 8, rng);
  core::Tensor bad = core::Tensor::full({8, 8, 3}, 0.5);
  bad[17] = 0.5 * illum::kIlluminationFloor;
  EXPECT_THROW(illum::apply_retinex_under(f, bad), std::invalid_argument);
  EXPECT_THROW(illum::apply_retinex_over(f, bad), std::invalid_argument);
}

TEST(Illumination, StreamSymmetryBeforeClamping) {
  core::Rng rng(3);
  for (int rep = 0; rep < 20; ++rep) {
    auto f = random_frame(8, 8, rng, 0.0, 1.0);
    auto l = random_map(8, 8, rng);
    auto over = illum::retinex_over_unclamped(f, l);
    auto under_inv = illum::retinex_under_unclamped(illum::invert_exposure(f), l);
    for (std::int64_t i = 0; i < over.data.size(); ++i)
      EXPECT_NEAR(over.data[i], 1.0 - under_inv.data[i], 1e-6);
  }
}

TEST(Illumination, UnderStreamMonotonicity) {
  core::Rng rng(4);
  auto f = random_frame(8, 8, rng, 0.1, 0.8);
  auto l = random_map(8, 8, rng);
  auto base = illum::retinex_under_unclamped(f, l);

  auto brighter = f;
  for (std::int64_t i = 0; i < brighter.data.size(); ++i) brighter.data[i] += 0.05;
  auto up = illum::retinex_under_unclamped(brighter, l);
  for (std::int64_t i = 0; i < up.data.size(); ++i) EXPECT_GE(up.data[i], base.data[i]);

  auto l_hi = l;
  for (std::int64_t i = 0; i < l_hi.size(); ++i) l_hi[i] = std::min(1.0, l_hi[i] + 0.05);
  auto down = illum::retinex_under_unclamped(f, l_hi);
  for (std::int64_t i = 0; i < down.data.size(); ++i) EXPECT_LE(down.data[i], base.data[i]);
}

TEST(Illumination, RangeSafetyWithFlooredMaps) {
  core::Rng rng(5);
  for (int rep = 0; rep < 50; ++rep) {
    auto f = random_frame(8, 8, rng, 0.0, 1.0);
    core::Tensor l = random_map(8, 8, rng);
    auto u = illum::retinex_under_unclamped(f, l);
    auto o = illum::retinex_over_unclamped(f, l);
    ASSERT_TRUE(u.data.all_finite());
    ASSERT_TRUE(o.data.all_finite());
    EXPECT_LE(u.data.max(), 1.0 / illum::kIlluminationFloor + 1e-9);
  }
}

TEST(Illumination, EstimatorRangeShapeAndDeterminism) {
  EstimatorFixture fx(micro_config());
  core::Rng rng(6);
  auto planes = ag::constant(core::frame_to_planes(random_frame(16, 24, rng)));
  auto a = fx.est.estimate(planes);
  EXPECT_EQ(a.map->value.shape(), (std::vector<int>{3, 16, 24}));
  EXPECT_GE(a.map->value.min(), illum::kIlluminationFloor);
  EXPECT_LE(a.map->value.max(), 1.0);
  EXPECT_EQ(a.latent->value.shape(), (std::vector<int>{8, 4, 6}));

  auto b = fx.est.estimate(planes);
  EXPECT_EQ(a.map->value.max_abs_diff(b.map->value), 0.0);
  EXPECT_EQ(a.latent->value.max_abs_diff(b.latent->value), 0.0);
}

TEST(Illumination, EstimatorRejectsIndivisibleSizesWithPadHint) {
  EstimatorFixture fx(micro_config());
  core::Rng rng(7);
  auto planes = ag::constant(core::frame_to_planes(random_frame(12, 16, rng)));
  try {
    fx.est.estimate(planes);
    FAIL() << "expected divisibility error";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("pad"), std::string::npos);
  }
}

TEST(Illumination, EstimatorGradientsMatchFiniteDifferences) {
  EstimatorFixture fx(micro_config(4, 1));
  core::Rng rng(8);
  auto planes = ag::constant(core::frame_to_planes(random_frame(8, 8, rng, 0.2, 0.8)));
  auto wmap = ag::constant(random_tensor({3, 8, 8}, rng));
  auto wlat = ag::constant(random_tensor({8, 2, 2}, rng));
  auto build = [&] {
    auto e = fx.est.estimate(planes);
    return ag::add(ag::mean_all(ag::mul(e.map, wmap)), ag::mean_all(ag::mul(e.latent, wlat)));
  };
  for (const char* name : {"illum.enc1.w", "illum.enc2.w", "illum.down0.w", "illum.mid.w",
                           "illum.up0.w", "illum.fuse0.w", "illum.dec1.w", "illum.dec2.w",
                           "illum.dec2.b"}) {
    auto p = fx.ps.find(name);
    p->zero_grad();
    const auto idx = testutil::sample_indices(p->value.size(), 3, rng);
    EXPECT_LT(testutil::fd_check_param(build, p, idx).max_rel_err, 1e-2) << name;
  }
}

TEST(Illumination, DualStreamShapesAndSharing) {
  EstimatorFixture fx(micro_config());
  core::Rng rng(9);
  auto frame = random_frame(16, 16, rng);
  auto dic = illum::dic_forward(fx.est, frame);
  const std::vector<int> want{3, 16, 16};
  EXPECT_EQ(dic.corrected_under->value.shape(), want);
  EXPECT_EQ(dic.corrected_over->value.shape(), want);
  EXPECT_EQ(dic.map->value.shape(), want);
  EXPECT_EQ(dic.map_inv->value.shape(), want);
  EXPECT_GE(dic.corrected_under->value.min(), 0.0);
  EXPECT_LE(dic.corrected_under->value.max(), 1.0);
  EXPECT_GE(dic.corrected_over->value.min(), 0.0);
  EXPECT_LE(dic.corrected_over->value.max(), 1.0);
}

TEST(Illumination, MidGrayIsSelfDual) {
  // 0.5 is the fixed point of inversion: both streams see the same input,
  // share weights, and must produce bitwise-equal maps
  EstimatorFixture fx(micro_config());
  auto frame = core::FrameTensor::zeros(16, 16);
  frame.data.fill(0.5);
  auto dic = illum::dic_forward(fx.est, frame);
  EXPECT_EQ(dic.map->value.max_abs_diff(dic.map_inv->value), 0.0);
  EXPECT_EQ(dic.latent->value.max_abs_diff(dic.latent_inv->value), 0.0);

  // with equal maps the corrections are exact complements before clamping
  auto u = illum::retinex_under_unclamped(frame, core::planes_to_frame(dic.map->value).data);
  auto o = illum::retinex_over_unclamped(frame, core::planes_to_frame(dic.map_inv->value).data);
  for (std::int64_t i = 0; i < u.data.size(); ++i)
    EXPECT_NEAR(o.data[i], 1.0 - u.data[i], 1e-12);
}

TEST(Illumination, DarkFrameGetsBrightened) {
  EstimatorFixture fx(micro_config());
  core::Rng rng(10);
  auto normal = random_frame(16, 16, rng, 0.2, 0.9);
  auto dark = normal;
  for (std::int64_t i = 0; i < dark.data.size(); ++i)
    dark.data[i] = 0.7 * std::pow(dark.data[i], 2.2);
  auto dic = illum::dic_forward(fx.est, dark);
  // dividing by a map <= 1 never darkens and the learned map is < 1 somewhere
  EXPECT_GT(dic.corrected_under->value.mean(), dark.data.mean());
}
