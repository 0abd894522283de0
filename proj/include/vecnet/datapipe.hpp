#pragma once

// Dataset machinery: PNG frame directories, the two-stage spatial alignment
// for paired captures (keypoint homography, then dense-flow refinement, then
// center cropping), the synthetic exposure degradation generator, and
// training-window sampling.

#include "vecnet/core.hpp"
#include "vecnet/metrics.hpp"
#include "vecnet/rng.hpp"

#include <opencv2/calib3d.hpp>
#include <opencv2/features2d.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace vecnet::datapipe {

namespace fs = std::filesystem;
using core::FrameTensor;
using core::Rng;
using core::Tensor;

// ---------------------------------------------------------------------------
// frame I/O

inline FrameTensor mat_to_frame(const cv::Mat& bgr) {
  if (bgr.empty() || bgr.type() != CV_8UC3)
    throw std::runtime_error("mat_to_frame: need an 8-bit 3-channel image");
  FrameTensor f = FrameTensor::zeros(bgr.rows, bgr.cols);
  for (int y = 0; y < bgr.rows; ++y)
    for (int x = 0; x < bgr.cols; ++x) {
      const auto& px = bgr.at<cv::Vec3b>(y, x);
      f.at(y, x, 0) = core::u8_to_unit(px[2]);
      f.at(y, x, 1) = core::u8_to_unit(px[1]);
      f.at(y, x, 2) = core::u8_to_unit(px[0]);
    }
  return f;
}

inline cv::Mat frame_to_mat(const FrameTensor& f) {
  cv::Mat bgr(f.height(), f.width(), CV_8UC3);
  for (int y = 0; y < f.height(); ++y)
    for (int x = 0; x < f.width(); ++x)
      bgr.at<cv::Vec3b>(y, x) =
          cv::Vec3b(static_cast<std::uint8_t>(core::unit_to_u8(f.at(y, x, 2))),
                    static_cast<std::uint8_t>(core::unit_to_u8(f.at(y, x, 1))),
                    static_cast<std::uint8_t>(core::unit_to_u8(f.at(y, x, 0))));
  return bgr;
}

inline FrameTensor load_frame_png(const std::string& path) {
  cv::Mat m = cv::imread(path, cv::IMREAD_COLOR);
  if (m.empty()) throw std::runtime_error("cannot read image " + path);
  FrameTensor f = mat_to_frame(m);
  core::validate_loaded_frame(f, path);
  return f;
}

// write-temp then rename, so readers never see a partial frame
inline void save_frame_png(const std::string& path, const FrameTensor& f) {
  const std::string tmp = path + ".tmp.png";  // imwrite picks the codec by extension
  if (!cv::imwrite(tmp, frame_to_mat(f), {cv::IMWRITE_PNG_COMPRESSION, 3}))
    throw std::runtime_error("cannot write image " + tmp);
  fs::rename(tmp, path);
}

inline std::string frame_name(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06d.png", index);
  return buf;
}

inline std::vector<std::string> list_frame_files(const std::string& dir) {
  if (!fs::is_directory(dir)) throw std::runtime_error("not a directory: " + dir);
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png")
      files.push_back(e.path().string());
  std::sort(files.begin(), files.end());
  return files;
}

inline std::vector<FrameTensor> load_clip_dir(const std::string& dir) {
  std::vector<FrameTensor> frames;
  for (const auto& f : list_frame_files(dir)) frames.push_back(load_frame_png(f));
  if (frames.empty()) throw std::runtime_error("no .png frames in " + dir);
  return frames;
}

inline void save_clip_dir(const std::string& dir, const std::vector<FrameTensor>& frames) {
  fs::create_directories(dir);
  for (std::size_t i = 0; i < frames.size(); ++i)
    save_frame_png((fs::path(dir) / frame_name(static_cast<int>(i))).string(), frames[i]);
}

// ---------------------------------------------------------------------------
// two-stage spatial alignment

struct AlignmentResult {
  FrameTensor warped;
  Tensor homography;  // [3,3], maps src coordinates into ref's frame
  Tensor flow;        // [H,W,2] (dy,dx) per ref pixel, 0 for the homography stage
  int crop_margin = 0;
};

namespace detail {

// z-scored luma; downstream matching should not depend on exposure level
inline Tensor normalized_luma(const FrameTensor& f) {
  Tensor l = metrics::luma(f);
  const double mu = l.mean();
  double var = 0.0;
  for (std::int64_t i = 0; i < l.size(); ++i) var += (l[i] - mu) * (l[i] - mu);
  const double sd = std::sqrt(var / static_cast<double>(l.size())) + 1e-6;
  for (std::int64_t i = 0; i < l.size(); ++i) l[i] = 0.5 + 0.2 * (l[i] - mu) / sd;
  return l;
}

inline cv::Mat normalized_luma_u8(const FrameTensor& f) {
  const Tensor l = normalized_luma(f);
  cv::Mat m(f.height(), f.width(), CV_8UC1);
  for (int y = 0; y < f.height(); ++y)
    for (int x = 0; x < f.width(); ++x)
      m.at<std::uint8_t>(y, x) = static_cast<std::uint8_t>(core::unit_to_u8(l.at2(y, x)));
  return m;
}

inline cv::Mat frame_to_mat64(const FrameTensor& f) {
  cv::Mat m(f.height(), f.width(), CV_64FC3);
  for (int y = 0; y < f.height(); ++y)
    for (int x = 0; x < f.width(); ++x)
      m.at<cv::Vec3d>(y, x) = cv::Vec3d(f.at(y, x, 0), f.at(y, x, 1), f.at(y, x, 2));
  return m;
}

inline FrameTensor mat64_to_frame(const cv::Mat& m) {
  FrameTensor f = FrameTensor::zeros(m.rows, m.cols);
  for (int y = 0; y < m.rows; ++y)
    for (int x = 0; x < m.cols; ++x) {
      const auto& v = m.at<cv::Vec3d>(y, x);
      for (int c = 0; c < 3; ++c) f.at(y, x, c) = std::min(1.0, std::max(0.0, v[c]));
    }
  return f;
}

}  // namespace detail

constexpr int kMinKeypointMatches = 8;
constexpr double kRansacReprojThreshold = 3.0;
constexpr float kRatioTestThreshold = 0.75f;

// Scale-invariant keypoints on luma, ratio-test matching, robust homography
// fit, then src warped onto ref's frame.
inline AlignmentResult homography_align(const FrameTensor& src, const FrameTensor& ref) {
  if (!src.data.same_shape(ref.data)) throw std::invalid_argument("homography_align: shape mismatch");
  cv::setNumThreads(1);
  cv::theRNG().state = 0x5eedULL;

  const cv::Mat src_l = detail::normalized_luma_u8(src);
  const cv::Mat ref_l = detail::normalized_luma_u8(ref);
  // low contrast threshold: normalized luma of badly exposed frames is flat
  auto sift = cv::SIFT::create(0, 3, 0.01, 10.0, 1.6);
  std::vector<cv::KeyPoint> kp_src, kp_ref;
  cv::Mat desc_src, desc_ref;
  sift->detectAndCompute(src_l, cv::noArray(), kp_src, desc_src);
  sift->detectAndCompute(ref_l, cv::noArray(), kp_ref, desc_ref);

  std::vector<cv::Point2f> pts_src, pts_ref;
  if (!desc_src.empty() && !desc_ref.empty()) {
    cv::BFMatcher matcher(cv::NORM_L2);
    std::vector<std::vector<cv::DMatch>> knn;
    matcher.knnMatch(desc_src, desc_ref, knn, 2);
    for (const auto& pair : knn) {
      if (pair.size() < 2) continue;
      if (pair[0].distance < kRatioTestThreshold * pair[1].distance) {
        pts_src.push_back(kp_src[static_cast<std::size_t>(pair[0].queryIdx)].pt);
        pts_ref.push_back(kp_ref[static_cast<std::size_t>(pair[0].trainIdx)].pt);
      }
    }
  }
  if (static_cast<int>(pts_src.size()) < kMinKeypointMatches)
    throw std::runtime_error("homography_align: only " + std::to_string(pts_src.size()) +
                             " keypoint matches (need " + std::to_string(kMinKeypointMatches) +
                             "); caller should fall back to the identity transform");

  cv::Mat h = cv::findHomography(pts_src, pts_ref, cv::RANSAC, kRansacReprojThreshold);
  if (h.empty() || std::abs(cv::determinant(h)) < 1e-8)
    throw std::runtime_error("homography_align: degenerate homography fit; caller should fall "
                             "back to the identity transform");

  cv::Mat warped64;
  cv::warpPerspective(detail::frame_to_mat64(src), warped64, h, src_l.size(), cv::INTER_LINEAR,
                      cv::BORDER_REPLICATE);

  AlignmentResult out;
  out.warped = detail::mat64_to_frame(warped64);
  out.homography = Tensor({3, 3});
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) out.homography.at2(i, j) = h.at<double>(i, j);
  out.flow = Tensor({src.height(), src.width(), 2});
  return out;
}

// Dense flow ref->src on normalized luma; src resampled along the flow so it
// lands on ref's geometry.
inline AlignmentResult dense_flow_refine(const FrameTensor& src, const FrameTensor& ref) {
  if (!src.data.same_shape(ref.data)) throw std::invalid_argument("dense_flow_refine: shape mismatch");
  cv::setNumThreads(1);
  Tensor flow_t = flow::dense_flow(detail::normalized_luma(ref), detail::normalized_luma(src));

  const int h = src.height(), w = src.width();
  cv::Mat map_x(h, w, CV_32FC1), map_y(h, w, CV_32FC1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      map_x.at<float>(y, x) = static_cast<float>(x + flow_t.at3(y, x, 1));
      map_y.at<float>(y, x) = static_cast<float>(y + flow_t.at3(y, x, 0));
    }
  cv::Mat warped64;
  cv::remap(detail::frame_to_mat64(src), warped64, map_x, map_y, cv::INTER_LINEAR,
            cv::BORDER_REPLICATE);

  AlignmentResult out;
  out.warped = detail::mat64_to_frame(warped64);
  out.homography = Tensor({3, 3});
  for (int i = 0; i < 3; ++i) out.homography.at2(i, i) = 1.0;
  out.flow = std::move(flow_t);
  return out;
}

inline FrameTensor center_crop(const FrameTensor& f, int margin) {
  if (margin < 0) throw std::invalid_argument("center_crop: negative margin");
  if (2 * margin >= std::min(f.height(), f.width()))
    throw std::invalid_argument("center_crop: margin " + std::to_string(margin) +
                                " too large for " + std::to_string(f.height()) + "x" +
                                std::to_string(f.width()));
  if (margin == 0) return f;
  const int h = f.height() - 2 * margin, w = f.width() - 2 * margin;
  FrameTensor out = FrameTensor::zeros(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = f.at(y + margin, x + margin, c);
  return out;
}

constexpr int kDefaultCropMargin = 16;

struct FrameAlignStats {
  int index = 0;
  double loe_before = 0.0;
  double loe_after = 0.0;
  double residual_flow = 0.0;
};

struct AlignedPair {
  std::vector<FrameTensor> src;  // degraded frames, cropped only
  std::vector<FrameTensor> ref;  // normal frames warped into src geometry, cropped
  std::vector<FrameAlignStats> stats;
  std::vector<std::pair<int, std::string>> excluded;  // frame index + reason
};

// Only the normal (reference) frames are warped; the degraded inputs stay as
// captured. Frames whose alignment fails are excluded with a reason.
inline AlignedPair align_pair(const std::vector<FrameTensor>& src_clip,
                              const std::vector<FrameTensor>& ref_clip,
                              int crop_margin = kDefaultCropMargin) {
  if (src_clip.size() != ref_clip.size())
    throw std::invalid_argument("align_pair: clip lengths differ");
  AlignedPair out;
  for (std::size_t i = 0; i < src_clip.size(); ++i) {
    try {
      const double before = metrics::loe(ref_clip[i], src_clip[i]);
      AlignmentResult hstage = homography_align(ref_clip[i], src_clip[i]);
      AlignmentResult fstage = dense_flow_refine(hstage.warped, src_clip[i]);
      double resid = 0.0;
      for (int y = 0; y < fstage.flow.dim(0); ++y)
        for (int x = 0; x < fstage.flow.dim(1); ++x)
          resid += std::hypot(fstage.flow.at3(y, x, 0), fstage.flow.at3(y, x, 1));
      resid /= static_cast<double>(fstage.flow.dim(0)) * fstage.flow.dim(1);

      FrameTensor src_c = center_crop(src_clip[i], crop_margin);
      FrameTensor ref_c = center_crop(fstage.warped, crop_margin);
      FrameAlignStats st;
      st.index = static_cast<int>(i);
      st.loe_before = before;
      st.loe_after = metrics::loe(ref_c, src_c);
      st.residual_flow = resid;
      out.src.push_back(std::move(src_c));
      out.ref.push_back(std::move(ref_c));
      out.stats.push_back(st);
    } catch (const std::exception& e) {
      out.excluded.emplace_back(static_cast<int>(i), e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// synthetic exposure degradation

enum class ExposureMode { Under, Over };

inline std::string mode_name(ExposureMode m) { return m == ExposureMode::Under ? "under" : "over"; }

inline ExposureMode mode_from_name(const std::string& s) {
  if (s == "under") return ExposureMode::Under;
  if (s == "over") return ExposureMode::Over;
  throw std::invalid_argument("unknown exposure mode '" + s + "' (expected under|over)");
}

constexpr int kFlickerPeriodFrames = 10;

struct DegradationParams {
  ExposureMode mode = ExposureMode::Under;
  double gamma = 2.2;
  double gain = 0.7;
  double noise_sigma = 0.0;
  double flicker_amplitude = 0.0;
  int seed = 1;

  void validate() const {
    if (gamma <= 0 || gain <= 0)
      throw std::invalid_argument("DegradationParams: gamma and gain must be > 0");
    if (noise_sigma < 0 || flicker_amplitude < 0)
      throw std::invalid_argument("DegradationParams: noise/flicker must be >= 0");
    if (mode == ExposureMode::Under && (gamma < 1.0 || gain > 1.0))
      throw std::invalid_argument("DegradationParams: under mode needs gamma >= 1, gain <= 1");
    if (mode == ExposureMode::Over && (gamma > 1.0 || gain < 1.0))
      throw std::invalid_argument("DegradationParams: over mode needs gamma <= 1, gain >= 1");
    if (flicker_amplitude >= 1.0)
      throw std::invalid_argument("DegradationParams: flicker amplitude must be < 1");
  }

  core::KvMap to_kv() const {
    core::KvMap kv;
    kv["mode"] = mode_name(mode);
    kv["gamma"] = core::format_double(gamma);
    kv["gain"] = core::format_double(gain);
    kv["noise_sigma"] = core::format_double(noise_sigma);
    kv["flicker_amplitude"] = core::format_double(flicker_amplitude);
    kv["seed"] = std::to_string(seed);
    return kv;
  }

  static DegradationParams from_kv(const core::KvMap& kv) {
    DegradationParams p;
    for (const auto& [key, val] : kv) {
      if (key == "mode") p.mode = mode_from_name(val);
      else if (key == "gamma") p.gamma = core::detail::to_double(val, key);
      else if (key == "gain") p.gain = core::detail::to_double(val, key);
      else if (key == "noise_sigma") p.noise_sigma = core::detail::to_double(val, key);
      else if (key == "flicker_amplitude") p.flicker_amplitude = core::detail::to_double(val, key);
      else if (key == "seed") p.seed = core::detail::to_int(val, key);
      else if (key == "fps" || key == "source") continue;  // clip metadata, not parameters
      else throw std::invalid_argument("DegradationParams: unknown key '" + key + "'");
    }
    p.validate();
    return p;
  }
};

// x -> clamp(gain_t * x^gamma + noise); gain_t carries the optional
// per-frame sinusoidal flicker. Deterministic under the parameter seed.
inline std::vector<FrameTensor> synthesize_exposure(const std::vector<FrameTensor>& normal_clip,
                                                    const DegradationParams& params) {
  params.validate();
  Rng rng(static_cast<std::uint64_t>(params.seed));
  std::vector<FrameTensor> out;
  out.reserve(normal_clip.size());
  for (std::size_t t = 0; t < normal_clip.size(); ++t) {
    const double gain_t =
        params.gain *
        (1.0 + params.flicker_amplitude *
                   std::sin(2.0 * M_PI * static_cast<double>(t) / kFlickerPeriodFrames));
    FrameTensor f = normal_clip[t];
    for (std::int64_t i = 0; i < f.data.size(); ++i) {
      double v = gain_t * std::pow(f.data[i], params.gamma);
      if (params.noise_sigma > 0.0) v += rng.normal(0.0, params.noise_sigma);
      f.data[i] = std::min(1.0, std::max(0.0, v));
    }
    out.push_back(std::move(f));
  }
  return out;
}

// ---------------------------------------------------------------------------
// dataset layout: <root>/<clip_id>/{input,gt}/NNNNNN.png + meta.txt

struct ClipRecord {
  std::string name;
  std::vector<FrameTensor> inputs;
  std::vector<FrameTensor> gts;  // empty in no-reference datasets
  core::KvMap meta;

  std::string mode() const {
    auto it = meta.find("mode");
    return it == meta.end() ? "unknown" : it->second;
  }
};

inline void save_clip_record(const std::string& root, const std::string& name,
                             const std::vector<FrameTensor>& inputs,
                             const std::vector<FrameTensor>& gts, const core::KvMap& meta) {
  const fs::path dir = fs::path(root) / name;
  save_clip_dir((dir / "input").string(), inputs);
  if (!gts.empty()) save_clip_dir((dir / "gt").string(), gts);
  std::ofstream os(dir / "meta.txt");
  for (const auto& [k, v] : meta) os << k << " = " << v << "\n";
}

inline std::vector<ClipRecord> load_dataset(const std::string& root) {
  if (!fs::is_directory(root)) throw std::runtime_error("dataset root not a directory: " + root);
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory() && fs::is_directory(e.path() / "input")) names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  if (names.empty()) throw std::runtime_error("no clips under " + root +
                                              " (expected <root>/<clip>/input/*.png)");
  std::vector<ClipRecord> clips;
  for (const auto& name : names) {
    ClipRecord rec;
    rec.name = name;
    const fs::path dir = fs::path(root) / name;
    rec.inputs = load_clip_dir((dir / "input").string());
    if (fs::is_directory(dir / "gt")) {
      rec.gts = load_clip_dir((dir / "gt").string());
      if (rec.gts.size() != rec.inputs.size())
        throw std::runtime_error("clip " + name + ": input/gt frame counts differ");
    }
    if (fs::is_regular_file(dir / "meta.txt")) rec.meta = core::parse_kv_file((dir / "meta.txt").string());
    clips.push_back(std::move(rec));
  }
  return clips;
}

// ---------------------------------------------------------------------------
// training-window sampling

struct TrainingSample {
  core::ClipWindow window;
  FrameTensor gt;
};

namespace detail {

inline FrameTensor crop_flip(const FrameTensor& f, int y0, int x0, int size, bool flip_h,
                             bool flip_v) {
  FrameTensor out = FrameTensor::zeros(size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const int sy = y0 + (flip_v ? size - 1 - y : y);
      const int sx = x0 + (flip_h ? size - 1 - x : x);
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = f.at(sy, sx, c);
    }
  return out;
}

}  // namespace detail

// Uniform clip / temporal center / spatial patch; identical crop and flips
// on every window frame and the ground-truth reference frame.
inline TrainingSample sample_training_window(const std::vector<ClipRecord>& dataset, int n_radius,
                                             int patch, bool flips, Rng& rng) {
  if (dataset.empty()) throw std::invalid_argument("sample_training_window: empty dataset");
  const auto& clip = dataset[static_cast<std::size_t>(rng.index(static_cast<std::int64_t>(dataset.size())))];
  if (clip.gts.empty())
    throw std::invalid_argument("sample_training_window: clip " + clip.name + " has no gt");
  const int h = clip.inputs[0].height(), w = clip.inputs[0].width();
  if (patch > h || patch > w)
    throw std::invalid_argument("sample_training_window: patch " + std::to_string(patch) +
                                " larger than frames " + std::to_string(h) + "x" +
                                std::to_string(w));
  const int t = static_cast<int>(rng.index(static_cast<std::int64_t>(clip.inputs.size())));
  const int y0 = static_cast<int>(rng.index(h - patch + 1));
  const int x0 = static_cast<int>(rng.index(w - patch + 1));
  const bool flip_h = flips && rng.coin();
  const bool flip_v = flips && rng.coin();

  core::ClipWindow win = core::pad_clip_boundary(clip.inputs, t, n_radius);
  for (auto& f : win.frames) f = detail::crop_flip(f, y0, x0, patch, flip_h, flip_v);
  TrainingSample s;
  s.window = std::move(win);
  s.gt = detail::crop_flip(clip.gts[static_cast<std::size_t>(t)], y0, x0, patch, flip_h, flip_v);
  return s;
}

inline TrainingSample sample_training_window(const std::vector<ClipRecord>& dataset, int n_radius,
                                             int patch, bool flips, int seed) {
  Rng rng(static_cast<std::uint64_t>(seed));
  return sample_training_window(dataset, n_radius, patch, flips, rng);
}

}  // namespace vecnet::datapipe
