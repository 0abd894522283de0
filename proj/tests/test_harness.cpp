// Harness contracts: optimizer behavior, training determinism and logging,
// checkpoint lifecycle, evaluation tables, and sliding-window enhancement.

#include "vecnet/harness.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace vecnet;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

core::Config micro_train_config() {
  core::Config c;
  c.model.n_radius = 1;
  c.model.base_channels = 4;
  c.model.unet_depth = 1;
  c.model.rcab_count = 1;
  c.model.seed = 7;
  c.train.lr = 1e-3;
  c.train.batch_size = 1;
  c.train.iterations = 4;
  c.train.patch = 16;
  c.train.flips = true;
  c.train.eval_every = 2;
  c.train.deterministic = true;
  c.train.val_clips = 1;
  return c;
}

std::string make_micro_dataset(const std::string& tag, int clips = 2, int frames = 4,
                               int size = 24) {
  const std::string root = testutil::scratch_dir(tag);
  for (int k = 0; k < clips; ++k) {
    auto gt = testutil::render_scene_clip(size, size, frames,
                                          {.seed = 100 + static_cast<std::uint64_t>(k)});
    datapipe::DegradationParams p;
    p.seed = 3 + k;
    auto degraded = datapipe::synthesize_exposure(gt, p);
    auto meta = p.to_kv();
    datapipe::save_clip_record(root, "clip" + std::to_string(k), degraded, gt, meta);
  }
  return root;
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

}  // namespace

TEST(Harness, AdamLeavesParametersUntouchedOnZeroGradients) {
  restore::VecNet model(micro_train_config().model);
  std::vector<double> before;
  for (const auto& p : model.params().params())
    before.insert(before.end(), p.node->value.vec().begin(), p.node->value.vec().end());
  harness::Adam opt(model.params().params(), 1e-3, 0.9, 0.99);
  model.params().zero_grad();
  for (int i = 0; i < 3; ++i) opt.step(model.params().params());
  std::size_t k = 0;
  for (const auto& p : model.params().params())
    for (std::int64_t i = 0; i < p.node->value.size(); ++i)
      EXPECT_EQ(p.node->value[i], before[k++]);
}

TEST(Harness, ZeroLossWeightsLeaveParametersUnchangedThroughTraining) {
  const std::string data = make_micro_dataset("zero_weights_data");
  const std::string out = testutil::scratch_dir("zero_weights_out");
  auto config = micro_train_config();
  config.train.weights = {0.0, 0.0, 0.0};

  restore::VecNet reference(config.model);  // same seed, untouched
  auto result = harness::train(config, data, out);
  auto trained = restore::load_checkpoint(result.last_checkpoint);
  for (std::size_t i = 0; i < reference.params().params().size(); ++i)
    EXPECT_EQ(reference.params().params()[i].node->value.max_abs_diff(
                  trained.model->params().params()[i].node->value),
              0.0);
}

TEST(Harness, TrainingIsBitwiseDeterministic) {
  const std::string data = make_micro_dataset("determinism_data");
  const std::string out_a = testutil::scratch_dir("determinism_a");
  const std::string out_b = testutil::scratch_dir("determinism_b");
  const auto config = micro_train_config();
  harness::train(config, data, out_a);
  harness::train(config, data, out_b);
  const std::string log_a = slurp(out_a + "/train_log.jsonl");
  EXPECT_FALSE(log_a.empty());
  EXPECT_EQ(log_a, slurp(out_b + "/train_log.jsonl"));
  EXPECT_EQ(slurp(out_a + "/last.ckpt"), slurp(out_b + "/last.ckpt"));
  EXPECT_EQ(slurp(out_a + "/best.ckpt"), slurp(out_b + "/best.ckpt"));
}

TEST(Harness, LossLogIsCompleteAndMonotone) {
  const std::string data = make_micro_dataset("log_data");
  const std::string out = testutil::scratch_dir("log_out");
  auto config = micro_train_config();
  config.train.iterations = 5;
  auto result = harness::train(config, data, out);
  EXPECT_EQ(result.steps_run, 5);

  std::ifstream is(result.log_path);
  std::string line;
  int expected_step = 1;
  int val_lines = 0;
  while (std::getline(is, line)) {
    const json rec = json::parse(line);
    if (rec.contains("val_psnr")) {
      ++val_lines;
      continue;
    }
    EXPECT_EQ(rec.at("step").get<int>(), expected_step++);
    for (const char* key : {"pix", "tv", "amp", "total"}) {
      ASSERT_TRUE(rec.contains(key));
      EXPECT_TRUE(std::isfinite(rec.at(key).get<double>()));
    }
  }
  EXPECT_EQ(expected_step, 6);
  EXPECT_GE(val_lines, 2);  // eval_every=2 over 5 steps
}

TEST(Harness, TrainRejectsBadDatasetBeforeFirstStep) {
  const std::string root = testutil::scratch_dir("train_no_gt");
  auto frames = testutil::render_scene_clip(24, 24, 3, {.seed = 40});
  datapipe::save_clip_record(root, "clip0", frames, {}, {});
  EXPECT_THROW(harness::train(micro_train_config(), root, testutil::scratch_dir("train_no_gt_out")),
               std::runtime_error);

  auto bad_patch = micro_train_config();
  bad_patch.train.patch = 20;  // not a multiple of the model's spatial factor
  const std::string data = make_micro_dataset("train_bad_patch");
  EXPECT_THROW(harness::train(bad_patch, data, testutil::scratch_dir("train_bad_patch_out")),
               std::runtime_error);
}

TEST(Harness, EnhancePreservesFrameCountAndHandlesSingleFrame) {
  restore::VecNet model(micro_train_config().model);
  auto frames = testutil::render_scene_clip(24, 24, 5, {.seed = 41});
  auto out = harness::enhance_clip(model, frames);
  EXPECT_EQ(out.size(), frames.size());
  for (const auto& f : out) {
    EXPECT_EQ(f.height(), 24);
    EXPECT_EQ(f.width(), 24);
    EXPECT_TRUE(f.in_unit_range());
  }
  auto single = harness::enhance_clip(model, {frames[0]});
  EXPECT_EQ(single.size(), 1u);
}

TEST(Harness, EnhanceOutputDependsOnlyOnItsWindow) {
  restore::VecNet model(micro_train_config().model);  // N = 1
  auto frames = testutil::render_scene_clip(24, 24, 6, {.seed = 42});
  auto base = harness::enhance_clip(model, frames);

  auto edited = frames;
  edited[3] = illum::invert_exposure(edited[3]);  // outside frame 1's window [0..2]
  auto after = harness::enhance_clip(model, edited);
  EXPECT_EQ(after[1].data.max_abs_diff(base[1].data), 0.0);
  EXPECT_GT(after[3].data.max_abs_diff(base[3].data), 0.0);
}

TEST(Harness, EnhanceDirectoryWritesOneFramePerInput) {
  const std::string in_dir = testutil::scratch_dir("enhance_in");
  const std::string out_dir = testutil::scratch_dir("enhance_out");
  auto frames = testutil::render_scene_clip(24, 24, 3, {.seed = 43});
  datapipe::save_clip_dir(in_dir, frames);
  restore::VecNet model(micro_train_config().model);
  harness::enhance_directory(model, in_dir, out_dir);
  EXPECT_EQ(datapipe::list_frame_files(out_dir).size(), 3u);
}

TEST(Harness, PadReflectMakesArbitrarySizesEnhanceable) {
  restore::VecNet model(micro_train_config().model);  // factor 8
  auto frames = testutil::render_scene_clip(21, 27, 3, {.seed = 44});
  auto out = harness::enhance_clip(model, frames);
  EXPECT_EQ(out[0].height(), 21);
  EXPECT_EQ(out[0].width(), 27);

  auto padded = harness::pad_reflect_to_multiple(frames[0], 8);
  EXPECT_EQ(padded.height(), 24);
  EXPECT_EQ(padded.width(), 32);
  // reflection: row h maps back to row h-2
  EXPECT_EQ(padded.at(21, 5, 0), frames[0].at(19, 5, 0));
  EXPECT_EQ(padded.at(5, 27, 1), frames[0].at(5, 25, 1));
}

TEST(Harness, EvaluateIdentityFlagReproducesInputPsnr) {
  const std::string data = make_micro_dataset("eval_identity", 2, 3);
  restore::VecNet model(micro_train_config().model);
  auto result = harness::evaluate(model, data, /*identity_debug=*/true);
  auto clips = datapipe::load_dataset(data);
  ASSERT_EQ(result.clips.size(), clips.size());
  for (std::size_t k = 0; k < clips.size(); ++k) {
    double acc = 0.0;
    for (std::size_t t = 0; t < clips[k].inputs.size(); ++t)
      acc += metrics::psnr(clips[k].inputs[t], clips[k].gts[t]);
    EXPECT_NEAR(result.clips[k].psnr, acc / clips[k].inputs.size(), 1e-9);
  }
}

TEST(Harness, EvaluateAveragesRecombineAcrossModes) {
  const std::string root = testutil::scratch_dir("eval_modes");
  for (int k = 0; k < 3; ++k) {
    auto gt = testutil::render_scene_clip(24, 24, 2, {.seed = 50 + static_cast<std::uint64_t>(k)});
    datapipe::DegradationParams p;
    if (k == 2) {
      p.mode = datapipe::ExposureMode::Over;
      p.gamma = 0.5;
      p.gain = 1.2;
    }
    auto degraded = datapipe::synthesize_exposure(gt, p);
    datapipe::save_clip_record(root, "clip" + std::to_string(k), degraded, gt, p.to_kv());
  }
  restore::VecNet model(micro_train_config().model);
  auto result = harness::evaluate(model, root, true);
  ASSERT_EQ(result.mode_counts.at("under"), 2);
  ASSERT_EQ(result.mode_counts.at("over"), 1);
  const double recombined = (result.mode_average.at("under").first * 2 +
                             result.mode_average.at("over").first * 1) /
                            3.0;
  EXPECT_NEAR(result.overall_psnr, recombined, 1e-9);

  auto j = harness::eval_to_json(result);
  EXPECT_EQ(j.at("clips").size(), 3u);
  const std::string csv = testutil::scratch_dir("eval_modes_csv") + "/t.csv";
  harness::eval_to_csv(result, csv);
  EXPECT_FALSE(slurp(csv).empty());
}

TEST(Harness, EvaluateHandlesNoReferenceClips) {
  const std::string root = testutil::scratch_dir("eval_noref");
  auto frames = testutil::render_scene_clip(24, 24, 3, {.seed = 60});
  datapipe::save_clip_record(root, "clip0", frames, {}, {});
  restore::VecNet model(micro_train_config().model);
  auto result = harness::evaluate(model, root, true);
  ASSERT_EQ(result.clips.size(), 1u);
  EXPECT_FALSE(result.clips[0].has_reference);
  EXPECT_TRUE(std::isnan(result.clips[0].psnr));
  EXPECT_GE(result.clips[0].alv_output, 0.0);
  EXPECT_EQ(result.clips[0].loe_vs_input, 0.0);  // identity output
  EXPECT_EQ(result.referenced_clips, 0);
}

TEST(Harness, BestCheckpointTracksValidationPsnr) {
  const std::string data = make_micro_dataset("best_ckpt_data");
  const std::string out = testutil::scratch_dir("best_ckpt_out");
  auto config = micro_train_config();
  config.train.iterations = 4;
  config.train.eval_every = 2;
  auto result = harness::train(config, data, out);
  EXPECT_TRUE(fs::exists(result.best_checkpoint));
  EXPECT_TRUE(fs::exists(result.last_checkpoint));
  EXPECT_GT(result.best_val_psnr, 0.0);
  auto loaded = restore::load_checkpoint(result.best_checkpoint);
  EXPECT_EQ(loaded.config.model.base_channels, config.model.base_channels);
}
