#pragma once

// Training and evaluation engine: ADAM optimizer, the optimizer loop with
// JSON-lines loss logging and periodic validation, checkpoint management,
// dataset evaluation tables, and sliding-window clip enhancement.

#include "vecnet/datapipe.hpp"
#include "vecnet/losses.hpp"
#include "vecnet/restoration.hpp"

#include <json.hpp>

#include <functional>
#include <iostream>
#include <random>

namespace vecnet::harness {

namespace fs = std::filesystem;
using core::FrameTensor;
using core::Tensor;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// optimizer

class Adam {
 public:
  Adam(const std::vector<layers::NamedParam>& params, double lr, double beta1, double beta2,
       double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : params) {
      m_.emplace_back(p.node->value.shape());
      v_.emplace_back(p.node->value.shape());
    }
  }

  void step(const std::vector<layers::NamedParam>& params) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& node = *params[i].node;
      if (!node.requires_grad) continue;
      Tensor& g = node.grad_buf();
      Tensor& m = m_[i];
      Tensor& v = v_[i];
      for (std::int64_t k = 0; k < g.size(); ++k) {
        m[k] = beta1_ * m[k] + (1.0 - beta1_) * g[k];
        v[k] = beta2_ * v[k] + (1.0 - beta2_) * g[k] * g[k];
        const double mh = m[k] / bc1;
        const double vh = v[k] / bc2;
        node.value[k] -= lr_ * mh / (std::sqrt(vh) + eps_);
      }
    }
  }

  int steps_taken() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  int t_ = 0;
  std::vector<Tensor> m_, v_;
};

// ---------------------------------------------------------------------------
// padding so arbitrary frame sizes pass through the downsampling stacks

namespace detail {

inline int mirror_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * n - 2;
  int j = std::abs(i) % period;
  return j < n ? j : period - j;
}

}  // namespace detail

inline FrameTensor pad_reflect_to_multiple(const FrameTensor& f, int factor) {
  const int h = f.height(), w = f.width();
  const int ph = (factor - h % factor) % factor;
  const int pw = (factor - w % factor) % factor;
  if (ph == 0 && pw == 0) return f;
  FrameTensor out = FrameTensor::zeros(h + ph, w + pw);
  for (int y = 0; y < h + ph; ++y)
    for (int x = 0; x < w + pw; ++x) {
      const int sy = detail::mirror_index(y, h);
      const int sx = detail::mirror_index(x, w);
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = f.at(sy, sx, c);
    }
  return out;
}

inline FrameTensor crop_to(const FrameTensor& f, int h, int w) {
  FrameTensor out = FrameTensor::zeros(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = f.at(y, x, c);
  return out;
}

// Enhance one window, reflect-padding every frame to the model's spatial
// factor and cropping the output back.
inline FrameTensor enhance_window_padded(const restore::VecNet& model, core::ClipWindow window) {
  const int h = window.frames[0].height(), w = window.frames[0].width();
  const int factor = model.config().spatial_factor();
  for (auto& f : window.frames) f = pad_reflect_to_multiple(f, factor);
  FrameTensor out = model.enhance_window(window);
  if (out.height() != h || out.width() != w) out = crop_to(out, h, w);
  return out;
}

// ---------------------------------------------------------------------------
// training

struct TrainResult {
  int steps_run = 0;
  double best_val_psnr = -1.0;
  std::string last_checkpoint;
  std::string best_checkpoint;
  std::string log_path;
};

// Called at every validation point; return true to stop early.
using StopCallback = std::function<bool(int step, double val_psnr)>;

namespace detail {

struct ValSplit {
  std::vector<datapipe::ClipRecord> train;
  std::vector<datapipe::ClipRecord> val;
};

inline ValSplit split_dataset(std::vector<datapipe::ClipRecord> clips, int val_clips) {
  ValSplit s;
  const int n = static_cast<int>(clips.size());
  const int nval = n > 1 ? std::min(val_clips, n - 1) : 0;
  for (int i = 0; i < n; ++i) {
    if (i >= n - nval) s.val.push_back(std::move(clips[static_cast<std::size_t>(i)]));
    else s.train.push_back(std::move(clips[static_cast<std::size_t>(i)]));
  }
  if (s.val.empty()) s.val = s.train;  // single-clip datasets validate on themselves
  return s;
}

inline double validate_psnr(const restore::VecNet& model,
                            const std::vector<datapipe::ClipRecord>& clips, int max_windows) {
  double acc = 0.0;
  int count = 0;
  for (const auto& clip : clips) {
    if (clip.gts.empty()) continue;
    const int n = static_cast<int>(clip.inputs.size());
    const int stride = std::max(1, n / max_windows);
    for (int t = 0; t < n; t += stride) {
      auto window = core::pad_clip_boundary(clip.inputs, t, model.config().n_radius);
      FrameTensor out = enhance_window_padded(model, std::move(window));
      const double p = metrics::psnr(out, clip.gts[static_cast<std::size_t>(t)]);
      if (std::isfinite(p)) {
        acc += p;
        ++count;
      }
    }
  }
  return count > 0 ? acc / count : 0.0;
}

}  // namespace detail

inline TrainResult train(const core::Config& config, const std::string& dataset_root,
                         const std::string& out_dir, std::ostream* progress = nullptr,
                         const StopCallback& stop = nullptr) {
  config.validate();
  auto dataset = datapipe::load_dataset(dataset_root);
  for (const auto& clip : dataset)
    if (clip.gts.empty())
      throw std::runtime_error("train: clip " + clip.name + " has no gt frames");
  const int factor_needed = config.model.spatial_factor();
  if (config.train.patch % factor_needed != 0)
    throw std::runtime_error("train: patch " + std::to_string(config.train.patch) +
                             " must be a multiple of " + std::to_string(factor_needed));
  auto split = detail::split_dataset(std::move(dataset), config.train.val_clips);

  fs::create_directories(out_dir);
  restore::VecNet model(config.model);
  Adam opt(model.params().params(), config.train.lr, config.train.beta1, config.train.beta2);

  std::uint64_t data_seed = static_cast<std::uint64_t>(config.model.seed) + 0x9999;
  if (!config.train.deterministic) data_seed = std::random_device{}();
  core::Rng rng(data_seed);

  TrainResult result;
  result.log_path = (fs::path(out_dir) / "train_log.jsonl").string();
  result.last_checkpoint = (fs::path(out_dir) / "last.ckpt").string();
  result.best_checkpoint = (fs::path(out_dir) / "best.ckpt").string();
  std::ofstream log(result.log_path);
  if (!log) throw std::runtime_error("cannot write " + result.log_path);

  const double inv_batch = 1.0 / static_cast<double>(config.train.batch_size);
  for (int step = 1; step <= config.train.iterations; ++step) {
    model.params().zero_grad();
    losses::LossReport mean_report;
    for (int b = 0; b < config.train.batch_size; ++b) {
      auto sample = datapipe::sample_training_window(split.train, config.model.n_radius,
                                                     config.train.patch, config.train.flips, rng);
      losses::TotalLoss total;
      try {
        auto art = model.forward(sample.window);
        ag::NodeRef gt = ag::constant(core::frame_to_planes(sample.gt));
        total = losses::total_loss(losses::charbonnier(art.output, gt),
                                   losses::tv_loss(art.map, art.map_inv),
                                   losses::amplitude_loss(art.output, gt),
                                   config.train.weights);
      } catch (const std::exception& e) {
        throw std::runtime_error("train: aborted at step " + std::to_string(step) + ": " +
                                 e.what());
      }
      if (!std::isfinite(total.report.total))
        throw std::runtime_error("train: non-finite loss at step " + std::to_string(step) +
                                 " (pix=" + std::to_string(total.report.pix) +
                                 " tv=" + std::to_string(total.report.tv) +
                                 " amp=" + std::to_string(total.report.amp) + ")");
      ag::backward(ag::mul_scalar(total.total, inv_batch));
      mean_report.pix += total.report.pix * inv_batch;
      mean_report.tv += total.report.tv * inv_batch;
      mean_report.amp += total.report.amp * inv_batch;
      mean_report.total += total.report.total * inv_batch;
    }
    opt.step(model.params().params());
    result.steps_run = step;

    json line = {{"step", step},
                 {"pix", mean_report.pix},
                 {"tv", mean_report.tv},
                 {"amp", mean_report.amp},
                 {"total", mean_report.total}};
    log << line.dump() << "\n";

    if (step % config.train.eval_every == 0 || step == config.train.iterations) {
      const double val_psnr = detail::validate_psnr(model, split.val, 8);
      json vline = {{"step", step}, {"val_psnr", val_psnr}};
      log << vline.dump() << "\n";
      log.flush();
      if (progress)
        (*progress) << "step " << step << "  total " << mean_report.total << "  val_psnr "
                    << val_psnr << "\n";
      restore::save_checkpoint(result.last_checkpoint, model, config);
      if (val_psnr > result.best_val_psnr) {
        result.best_val_psnr = val_psnr;
        restore::save_checkpoint(result.best_checkpoint, model, config);
      }
      if (stop && stop(step, val_psnr)) break;
    }
  }
  if (result.steps_run == 0 || !fs::exists(result.last_checkpoint))
    restore::save_checkpoint(result.last_checkpoint, model, config);
  return result;
}

// ---------------------------------------------------------------------------
// evaluation

struct ClipEval {
  std::string name;
  std::string mode;
  int frames = 0;
  double psnr = 0.0;   // NaN when no reference
  double ssim = 0.0;
  double alv_input = 0.0;
  double alv_output = 0.0;
  double loe_vs_input = 0.0;
  bool has_reference = false;
};

struct EvalResult {
  std::vector<ClipEval> clips;
  std::map<std::string, std::pair<double, double>> mode_average;  // mode -> (psnr, ssim)
  std::map<std::string, int> mode_counts;
  double overall_psnr = 0.0;
  double overall_ssim = 0.0;
  int referenced_clips = 0;
};

inline EvalResult evaluate(const restore::VecNet& model, const std::string& dataset_root,
                           bool identity_debug = false, std::ostream* progress = nullptr) {
  auto dataset = datapipe::load_dataset(dataset_root);
  EvalResult result;
  for (const auto& clip : dataset) {
    ClipEval ce;
    ce.name = clip.name;
    ce.mode = clip.mode();
    ce.frames = static_cast<int>(clip.inputs.size());
    ce.has_reference = !clip.gts.empty();

    std::vector<FrameTensor> outputs;
    outputs.reserve(clip.inputs.size());
    for (std::size_t t = 0; t < clip.inputs.size(); ++t) {
      if (identity_debug) {
        outputs.push_back(clip.inputs[t]);
      } else {
        auto window =
            core::pad_clip_boundary(clip.inputs, static_cast<int>(t), model.config().n_radius);
        outputs.push_back(enhance_window_padded(model, std::move(window)));
      }
    }

    double loe_acc = 0.0;
    for (std::size_t t = 0; t < outputs.size(); ++t)
      loe_acc += metrics::loe(outputs[t], clip.inputs[t]);
    ce.loe_vs_input = loe_acc / static_cast<double>(outputs.size());
    if (outputs.size() >= 2) {
      ce.alv_input = metrics::alv(clip.inputs);
      ce.alv_output = metrics::alv(outputs);
    }

    if (ce.has_reference) {
      double psnr_acc = 0.0, ssim_acc = 0.0;
      int finite = 0;
      for (std::size_t t = 0; t < outputs.size(); ++t) {
        const double p = metrics::psnr(outputs[t], clip.gts[t]);
        ssim_acc += metrics::ssim(outputs[t], clip.gts[t]);
        if (std::isfinite(p)) {
          psnr_acc += p;
          ++finite;
        }
      }
      ce.psnr = finite > 0 ? psnr_acc / finite : std::numeric_limits<double>::infinity();
      ce.ssim = ssim_acc / static_cast<double>(outputs.size());
      ++result.referenced_clips;
    } else {
      ce.psnr = std::numeric_limits<double>::quiet_NaN();
      ce.ssim = std::numeric_limits<double>::quiet_NaN();
    }
    if (progress) (*progress) << "clip " << ce.name << " done\n";
    result.clips.push_back(std::move(ce));
  }

  std::map<std::string, std::pair<double, double>> sums;
  for (const auto& ce : result.clips) {
    if (!ce.has_reference) continue;
    sums[ce.mode].first += ce.psnr;
    sums[ce.mode].second += ce.ssim;
    result.mode_counts[ce.mode] += 1;
  }
  double psum = 0.0, ssum = 0.0;
  int n = 0;
  for (const auto& [mode, s] : sums) {
    const int c = result.mode_counts[mode];
    result.mode_average[mode] = {s.first / c, s.second / c};
    psum += s.first;
    ssum += s.second;
    n += c;
  }
  if (n > 0) {
    result.overall_psnr = psum / n;
    result.overall_ssim = ssum / n;
  }
  return result;
}

namespace detail {

inline json finite_or_string(double v) {
  if (std::isnan(v)) return nullptr;
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

}  // namespace detail

inline json eval_to_json(const EvalResult& r) {
  json clips = json::array();
  for (const auto& ce : r.clips)
    clips.push_back({{"clip", ce.name},
                     {"mode", ce.mode},
                     {"frames", ce.frames},
                     {"psnr", detail::finite_or_string(ce.psnr)},
                     {"ssim", detail::finite_or_string(ce.ssim)},
                     {"alv_input", ce.alv_input},
                     {"alv_output", ce.alv_output},
                     {"loe_vs_input", ce.loe_vs_input},
                     {"has_reference", ce.has_reference}});
  json modes = json::object();
  for (const auto& [mode, avg] : r.mode_average)
    modes[mode] = {{"psnr", avg.first}, {"ssim", avg.second},
                   {"clips", r.mode_counts.at(mode)}};
  return {{"clips", clips},
          {"mode_average", modes},
          {"overall", {{"psnr", r.overall_psnr}, {"ssim", r.overall_ssim},
                       {"clips", r.referenced_clips}}}};
}

inline void eval_to_csv(const EvalResult& r, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "clip,mode,frames,psnr,ssim,alv_input,alv_output,loe_vs_input\n";
  auto num = [](double v) -> std::string {
    if (std::isnan(v)) return "";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return core::format_double(v);
  };
  for (const auto& ce : r.clips)
    os << ce.name << "," << ce.mode << "," << ce.frames << "," << num(ce.psnr) << ","
       << num(ce.ssim) << "," << num(ce.alv_input) << "," << num(ce.alv_output) << ","
       << num(ce.loe_vs_input) << "\n";
  for (const auto& [mode, avg] : r.mode_average)
    os << "average_" << mode << ",," << r.mode_counts.at(mode) << "," << num(avg.first) << ","
       << num(avg.second) << ",,,\n";
  os << "average_overall,," << r.referenced_clips << "," << num(r.overall_psnr) << ","
     << num(r.overall_ssim) << ",,,\n";
}

// ---------------------------------------------------------------------------
// clip enhancement (sliding window over a frame directory)

inline std::vector<FrameTensor> enhance_clip(const restore::VecNet& model,
                                             const std::vector<FrameTensor>& frames) {
  if (frames.empty()) throw std::invalid_argument("enhance_clip: no frames");
  std::vector<FrameTensor> out;
  out.reserve(frames.size());
  for (std::size_t t = 0; t < frames.size(); ++t) {
    auto window = core::pad_clip_boundary(frames, static_cast<int>(t), model.config().n_radius);
    out.push_back(enhance_window_padded(model, std::move(window)));
  }
  return out;
}

inline void enhance_directory(const restore::VecNet& model, const std::string& in_dir,
                              const std::string& out_dir, std::ostream* progress = nullptr) {
  const auto files = datapipe::list_frame_files(in_dir);
  if (files.empty()) throw std::runtime_error("no .png frames in " + in_dir);
  std::vector<FrameTensor> frames;
  frames.reserve(files.size());
  for (const auto& f : files) frames.push_back(datapipe::load_frame_png(f));
  auto outputs = enhance_clip(model, frames);
  fs::create_directories(out_dir);
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    const std::string name = fs::path(files[i]).filename().string();
    datapipe::save_frame_png((fs::path(out_dir) / name).string(), outputs[i]);
    if (progress) (*progress) << name << "\n";
  }
}

}  // namespace vecnet::harness
