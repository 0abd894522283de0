#pragma once

// Shared conventions: frame and clip containers, configuration structs and
// the flat key=value config format, clip-boundary padding.

#include "vecnet/tensor.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace vecnet::core {

// One video frame, [H,W,3] interleaved RGB in [0,1].
struct FrameTensor {
  Tensor data;

  FrameTensor() = default;
  explicit FrameTensor(Tensor t) : data(std::move(t)) {
    if (data.rank() != 3 || data.dim(2) != 3)
      throw std::invalid_argument("FrameTensor: need [H,W,3], got " + data.shape_str());
  }
  static FrameTensor zeros(int h, int w) { return FrameTensor(Tensor({h, w, 3})); }

  int height() const { return data.dim(0); }
  int width() const { return data.dim(1); }
  double& at(int y, int x, int c) { return data.at3(y, x, c); }
  double at(int y, int x, int c) const { return data.at3(y, x, c); }

  bool in_unit_range(double tol = 0.0) const {
    for (std::int64_t i = 0; i < data.size(); ++i)
      if (!std::isfinite(data[i]) || data[i] < -tol || data[i] > 1.0 + tol) return false;
    return true;
  }
};

constexpr int kMinFrameSide = 8;  // floor for the downsampling stacks

inline void validate_loaded_frame(const FrameTensor& f, const std::string& origin) {
  if (f.height() < kMinFrameSide || f.width() < kMinFrameSide)
    throw std::invalid_argument("frame " + origin + ": size " + std::to_string(f.height()) +
                                "x" + std::to_string(f.width()) + " below minimum " +
                                std::to_string(kMinFrameSide));
  if (!f.in_unit_range())
    throw std::invalid_argument("frame " + origin + ": values outside [0,1]");
}

// 8-bit <-> unit-range conversion; exact for all 256 levels
inline double u8_to_unit(int v) { return static_cast<double>(v) / 255.0; }
inline int unit_to_u8(double v) {
  const double c = std::min(1.0, std::max(0.0, v));
  return static_cast<int>(std::lround(c * 255.0));
}

// Unbounded intermediate activations live in plain [C,H,W] tensors.
using FeatureTensor = Tensor;

// 2N+1 consecutive frames centered on the one being enhanced.
struct ClipWindow {
  std::vector<FrameTensor> frames;
  int center_index = 0;
  int n_radius = 0;

  const FrameTensor& reference() const { return frames[static_cast<std::size_t>(center_index)]; }

  void validate() const {
    if (n_radius < 1) throw std::invalid_argument("ClipWindow: n_radius must be >= 1");
    if (static_cast<int>(frames.size()) != 2 * n_radius + 1)
      throw std::invalid_argument("ClipWindow: expected " + std::to_string(2 * n_radius + 1) +
                                  " frames, got " + std::to_string(frames.size()));
    if (center_index != n_radius) throw std::invalid_argument("ClipWindow: center must be N");
    const int h = frames[0].height(), w = frames[0].width();
    for (const auto& f : frames)
      if (f.height() != h || f.width() != w)
        throw std::invalid_argument("ClipWindow: frames differ in size");
  }
};

// Window centered at t; indices past either end replicate the nearest frame.
inline ClipWindow pad_clip_boundary(const std::vector<FrameTensor>& frames, int t, int n_radius) {
  if (frames.empty()) throw std::invalid_argument("pad_clip_boundary: empty frame sequence");
  const int n = static_cast<int>(frames.size());
  if (t < 0 || t >= n) throw std::invalid_argument("pad_clip_boundary: index out of range");
  ClipWindow win;
  win.n_radius = n_radius;
  win.center_index = n_radius;
  win.frames.reserve(static_cast<std::size_t>(2 * n_radius + 1));
  for (int i = t - n_radius; i <= t + n_radius; ++i) {
    const int j = std::min(n - 1, std::max(0, i));
    win.frames.push_back(frames[static_cast<std::size_t>(j)]);
  }
  return win;
}

// ---------------------------------------------------------------------------
// configuration

struct ModelConfig {
  int n_radius = 2;
  int base_channels = 32;
  int unet_depth = 2;
  int rcab_count = 4;
  int offset_groups = 1;
  bool share_align_params = true;  // one offset/mapping net for all supporting frames
  int seed = 1;

  void validate() const {
    if (n_radius < 1 || base_channels < 1 || unet_depth < 1 || rcab_count < 1 ||
        offset_groups < 1)
      throw std::invalid_argument("ModelConfig: all counts must be >= 1");
    if (offset_groups != 1 && offset_groups != 3)
      throw std::invalid_argument("ModelConfig: offset_groups must be 1 or 3 "
                                  "(offsets act on 3-channel recombined frames)");
  }
  // the whole pipeline downsamples by this factor; inputs must be divisible
  int spatial_factor() const { return 4 * (1 << unet_depth); }
};

struct LossWeights {
  double lambda_pix = 1.0;
  double lambda_tv = 0.01;
  double lambda_amp = 100.0;

  void validate() const {
    if (lambda_pix < 0 || lambda_tv < 0 || lambda_amp < 0)
      throw std::invalid_argument("LossWeights: weights must be >= 0");
  }
};

struct TrainConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.99;
  int batch_size = 8;
  int iterations = 10000;
  int patch = 256;
  bool flips = true;
  LossWeights weights;
  int eval_every = 500;
  bool deterministic = true;
  int val_clips = 1;  // clips held out from the tail of the dataset for validation

  void validate() const {
    if (lr <= 0) throw std::invalid_argument("TrainConfig: lr must be > 0");
    if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
      throw std::invalid_argument("TrainConfig: betas must be in [0,1)");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (iterations < 0 || patch < 1 || eval_every < 1 || val_clips < 0)
      throw std::invalid_argument("TrainConfig: bad loop settings");
    weights.validate();
  }
};

struct Config {
  ModelConfig model;
  TrainConfig train;

  void validate() const {
    model.validate();
    train.validate();
  }
};

// ---------------------------------------------------------------------------
// flat `key = value` text format, `#` comments

using KvMap = std::map<std::string, std::string>;

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline KvMap parse_kv_text(const std::string& text, const std::string& origin) {
  KvMap kv;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument(origin + ":" + std::to_string(lineno) +
                                  ": expected `key = value`");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key.empty()) throw std::invalid_argument(origin + ": empty key");
    kv[key] = val;
  }
  return kv;
}

inline KvMap parse_kv_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::ostringstream os;
  os << f.rdbuf();
  return parse_kv_text(os.str(), path);
}

namespace detail {

inline double to_double(const std::string& s, const std::string& key) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("");
    return v;
  } catch (...) {
    throw std::invalid_argument("config: bad number for " + key + ": '" + s + "'");
  }
}

inline int to_int(const std::string& s, const std::string& key) {
  try {
    std::size_t pos = 0;
    const long v = std::stol(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("");
    return static_cast<int>(v);
  } catch (...) {
    throw std::invalid_argument("config: bad integer for " + key + ": '" + s + "'");
  }
}

inline bool to_bool(const std::string& s, const std::string& key) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw std::invalid_argument("config: bad boolean for " + key + ": '" + s + "'");
}

}  // namespace detail

// Applies keys onto defaults; unknown keys are an error so typos surface.
inline Config config_from_kv(const KvMap& kv) {
  Config c;
  for (const auto& [key, val] : kv) {
    if (key == "n_radius") c.model.n_radius = detail::to_int(val, key);
    else if (key == "base_channels") c.model.base_channels = detail::to_int(val, key);
    else if (key == "unet_depth") c.model.unet_depth = detail::to_int(val, key);
    else if (key == "rcab_count") c.model.rcab_count = detail::to_int(val, key);
    else if (key == "offset_groups") c.model.offset_groups = detail::to_int(val, key);
    else if (key == "share_align_params") c.model.share_align_params = detail::to_bool(val, key);
    else if (key == "seed") c.model.seed = detail::to_int(val, key);
    else if (key == "lr") c.train.lr = detail::to_double(val, key);
    else if (key == "beta1") c.train.beta1 = detail::to_double(val, key);
    else if (key == "beta2") c.train.beta2 = detail::to_double(val, key);
    else if (key == "batch_size") c.train.batch_size = detail::to_int(val, key);
    else if (key == "iterations") c.train.iterations = detail::to_int(val, key);
    else if (key == "patch") c.train.patch = detail::to_int(val, key);
    else if (key == "flips") c.train.flips = detail::to_bool(val, key);
    else if (key == "lambda_pix") c.train.weights.lambda_pix = detail::to_double(val, key);
    else if (key == "lambda_tv") c.train.weights.lambda_tv = detail::to_double(val, key);
    else if (key == "lambda_amp") c.train.weights.lambda_amp = detail::to_double(val, key);
    else if (key == "eval_every") c.train.eval_every = detail::to_int(val, key);
    else if (key == "deterministic") c.train.deterministic = detail::to_bool(val, key);
    else if (key == "val_clips") c.train.val_clips = detail::to_int(val, key);
    else throw std::invalid_argument("config: unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

inline std::string config_to_text(const Config& c) {
  std::ostringstream os;
  os << "# model\n";
  os << "n_radius = " << c.model.n_radius << "\n";
  os << "base_channels = " << c.model.base_channels << "\n";
  os << "unet_depth = " << c.model.unet_depth << "\n";
  os << "rcab_count = " << c.model.rcab_count << "\n";
  os << "offset_groups = " << c.model.offset_groups << "\n";
  os << "share_align_params = " << (c.model.share_align_params ? "true" : "false") << "\n";
  os << "seed = " << c.model.seed << "\n";
  os << "# training\n";
  os << "lr = " << format_double(c.train.lr) << "\n";
  os << "beta1 = " << format_double(c.train.beta1) << "\n";
  os << "beta2 = " << format_double(c.train.beta2) << "\n";
  os << "batch_size = " << c.train.batch_size << "\n";
  os << "iterations = " << c.train.iterations << "\n";
  os << "patch = " << c.train.patch << "\n";
  os << "flips = " << (c.train.flips ? "true" : "false") << "\n";
  os << "eval_every = " << c.train.eval_every << "\n";
  os << "deterministic = " << (c.train.deterministic ? "true" : "false") << "\n";
  os << "val_clips = " << c.train.val_clips << "\n";
  os << "# loss weights\n";
  os << "lambda_pix = " << format_double(c.train.weights.lambda_pix) << "\n";
  os << "lambda_tv = " << format_double(c.train.weights.lambda_tv) << "\n";
  os << "lambda_amp = " << format_double(c.train.weights.lambda_amp) << "\n";
  return os.str();
}

inline Config load_config(const std::string& path) { return config_from_kv(parse_kv_file(path)); }

// ---------------------------------------------------------------------------
// frame <-> plane layout helpers

// [H,W,3] frame -> [3,H,W] planes
inline Tensor frame_to_planes(const FrameTensor& f) {
  const int h = f.height(), w = f.width();
  Tensor out({3, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) out.at3(c, y, x) = f.at(y, x, c);
  return out;
}

inline FrameTensor planes_to_frame(const Tensor& p) {
  if (p.rank() != 3 || p.dim(0) != 3) throw std::invalid_argument("planes_to_frame: need [3,H,W]");
  const int h = p.dim(1), w = p.dim(2);
  FrameTensor f = FrameTensor::zeros(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) f.at(y, x, c) = p.at3(c, y, x);
  return f;
}

}  // namespace vecnet::core
