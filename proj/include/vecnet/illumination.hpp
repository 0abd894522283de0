#pragma once

// Dual-stream illumination construction. One encoder/U-Net/decoder estimates
// an illumination map; running it on the frame and on its exposure inverse
// (with the same weights) yields the under- and over-exposure corrections.

#include "vecnet/core.hpp"
#include "vecnet/layers.hpp"

namespace vecnet::illum {

using ag::NodeRef;
using core::FrameTensor;
using core::Rng;
using core::Tensor;

constexpr double kIlluminationFloor = 1e-2;  // maps live in [floor, 1]

// ---------------------------------------------------------------------------
// image-space operations (raw tensor forms used by tests and the harness)

inline FrameTensor invert_exposure(const FrameTensor& f) {
  FrameTensor out = f;
  for (std::int64_t i = 0; i < out.data.size(); ++i) out.data[i] = 1.0 - out.data[i];
  return out;
}

inline void check_illumination_range(const Tensor& l, const char* where) {
  for (std::int64_t i = 0; i < l.size(); ++i)
    if (!(l[i] >= kIlluminationFloor && l[i] <= 1.0))
      throw std::invalid_argument(std::string(where) + ": illumination value " +
                                  std::to_string(l[i]) + " outside [" +
                                  std::to_string(kIlluminationFloor) + ", 1]");
}

inline FrameTensor retinex_under_unclamped(const FrameTensor& f, const Tensor& l) {
  check_shape(l, f.data.shape(), "retinex_under");
  check_illumination_range(l, "retinex_under");
  FrameTensor out = f;
  for (std::int64_t i = 0; i < out.data.size(); ++i) out.data[i] = f.data[i] / l[i];
  return out;
}

inline FrameTensor retinex_over_unclamped(const FrameTensor& f, const Tensor& l_inv) {
  check_shape(l_inv, f.data.shape(), "retinex_over");
  check_illumination_range(l_inv, "retinex_over");
  FrameTensor out = f;
  for (std::int64_t i = 0; i < out.data.size(); ++i)
    out.data[i] = 1.0 - (1.0 - f.data[i]) / l_inv[i];
  return out;
}

inline FrameTensor clamp_unit(FrameTensor f) {
  for (std::int64_t i = 0; i < f.data.size(); ++i)
    f.data[i] = std::min(1.0, std::max(0.0, f.data[i]));
  return f;
}

inline FrameTensor apply_retinex_under(const FrameTensor& f, const Tensor& l) {
  return clamp_unit(retinex_under_unclamped(f, l));
}

inline FrameTensor apply_retinex_over(const FrameTensor& f, const Tensor& l_inv) {
  return clamp_unit(retinex_over_unclamped(f, l_inv));
}

// ---------------------------------------------------------------------------
// learned illumination estimator

struct IlluminationEstimate {
  NodeRef map;     // [3,H,W] in [floor, 1]
  NodeRef latent;  // [2C, H/4, W/4]
};

class IlluminationEstimator {
 public:
  IlluminationEstimator() = default;

  IlluminationEstimator(layers::ParamStore& ps, const core::ModelConfig& cfg, Rng& rng)
      : depth_(cfg.unet_depth), factor_(cfg.spatial_factor()) {
    const int c = cfg.base_channels;
    enc1_ = layers::Conv2d(ps, "illum.enc1", 3, c, 4, rng, 2, layers::Init::He, 1);
    enc2_ = layers::Conv2d(ps, "illum.enc2", c, 2 * c, 4, rng, 2, layers::Init::He, 1);
    int ch = 2 * c;
    for (int d = 0; d < depth_; ++d) {
      down_.emplace_back(ps, "illum.down" + std::to_string(d), ch, 2 * ch, 4, rng, 2,
                         layers::Init::He, 1);
      ch *= 2;
    }
    mid_ = layers::Conv2d(ps, "illum.mid", ch, ch, 3, rng);
    for (int d = depth_ - 1; d >= 0; --d) {
      up_.emplace_back(ps, "illum.up" + std::to_string(d), ch, ch / 2, 4, rng, 2, 1);
      fuse_.emplace_back(ps, "illum.fuse" + std::to_string(d), ch, ch / 2, 3, rng);
      ch /= 2;
    }
    dec1_ = layers::ConvTranspose2d(ps, "illum.dec1", 2 * c, c, 4, rng, 2, 1);
    dec2_ = layers::ConvTranspose2d(ps, "illum.dec2", c, 3, 4, rng, 2, 1);
  }

  // frame planes [3,H,W] -> illumination map and the U-Net latent
  IlluminationEstimate estimate(NodeRef planes) const {
    const int h = planes->value.dim(1), w = planes->value.dim(2);
    if (h % factor_ != 0 || w % factor_ != 0)
      throw std::invalid_argument(
          "illumination: spatial size " + std::to_string(h) + "x" + std::to_string(w) +
          " not divisible by " + std::to_string(factor_) +
          "; pad the input (reflect) to a multiple and crop the result back");

    NodeRef z = ag::relu(enc2_(ag::relu(enc1_(planes))));
    std::vector<NodeRef> skips;
    NodeRef cur = z;
    for (int d = 0; d < depth_; ++d) {
      skips.push_back(cur);
      cur = ag::relu(down_[static_cast<std::size_t>(d)](cur));
    }
    cur = ag::relu(mid_(cur));
    for (int d = 0; d < depth_; ++d) {
      cur = ag::relu(up_[static_cast<std::size_t>(d)](cur));
      NodeRef skip = skips[static_cast<std::size_t>(depth_ - 1 - d)];
      cur = ag::relu(fuse_[static_cast<std::size_t>(d)](ag::concat_ch({cur, skip})));
    }
    NodeRef latent = cur;  // same shape as z
    NodeRef raw = dec2_(ag::relu(dec1_(latent)));
    NodeRef map = ag::add_scalar(
        ag::mul_scalar(ag::sigmoid(raw), 1.0 - kIlluminationFloor), kIlluminationFloor);
    return {map, latent};
  }

 private:
  int depth_ = 2;
  int factor_ = 16;
  layers::Conv2d enc1_, enc2_, mid_;
  std::vector<layers::Conv2d> down_, fuse_;
  std::vector<layers::ConvTranspose2d> up_;
  layers::ConvTranspose2d dec1_, dec2_;
};

// Everything the dual-stream pass produces, in graph form.
struct DicOutputs {
  NodeRef corrected_under;  // [3,H,W] in [0,1]
  NodeRef corrected_over;
  NodeRef latent;      // stream on the frame itself
  NodeRef latent_inv;  // stream on the inverted frame
  NodeRef map;         // illumination of the frame
  NodeRef map_inv;     // illumination of the inverted frame
};

// Both streams run through the same estimator (full weight sharing).
inline DicOutputs dic_forward(const IlluminationEstimator& est, const FrameTensor& frame) {
  NodeRef planes = ag::constant(core::frame_to_planes(frame));
  NodeRef planes_inv = ag::rsub_scalar(1.0, planes);

  auto s = est.estimate(planes);
  auto s_inv = est.estimate(planes_inv);

  NodeRef under = ag::clamp(ag::div(planes, s.map), 0.0, 1.0);
  NodeRef over =
      ag::clamp(ag::rsub_scalar(1.0, ag::div(planes_inv, s_inv.map)), 0.0, 1.0);
  return {under, over, s.latent, s_inv.latent, s.map, s_inv.map};
}

}  // namespace vecnet::illum
