#pragma once

// Multi-frame Fourier alignment. Every frame in the window is transformed
// per channel, the window's amplitudes are aggregated into one shared
// amplitude, each frame is rebuilt from that amplitude and its own phase,
// and the supporting frames are then warped onto the reference with a
// deformable convolution driven by learned per-pixel offsets.

#include "vecnet/core.hpp"
#include "vecnet/fourier.hpp"
#include "vecnet/layers.hpp"

namespace vecnet::align {

using ag::NodeRef;
using core::ClipWindow;
using core::Rng;
using core::Tensor;

// (dy,dx) sampling displacements per kernel tap; [2*9*groups, H, W]
struct OffsetField {
  NodeRef offsets;
};

struct AlignedWindow {
  std::vector<NodeRef> features;    // 2N+1 aligned tensors [3,H,W]
  std::vector<NodeRef> recombined;  // shared-amplitude frames before warping
  int center_index = 0;
};

class MultiFrameAligner {
 public:
  MultiFrameAligner() = default;

  MultiFrameAligner(layers::ParamStore& ps, const core::ModelConfig& cfg, Rng& rng)
      : n_radius_(cfg.n_radius), groups_(cfg.offset_groups), share_(cfg.share_align_params) {
    const int hidden = cfg.base_channels;
    agg1_ = layers::Conv2d(ps, "align.agg1", 2 * n_radius_ + 1, hidden, 3, rng);
    agg2_ = layers::Conv2d(ps, "align.agg2", hidden, 1, 3, rng);
    const int sets = share_ ? 1 : 2 * n_radius_;
    for (int s = 0; s < sets; ++s) {
      const std::string tag = share_ ? std::string("align") : "align.s" + std::to_string(s);
      off1_.push_back(layers::Conv2d(ps, tag + ".off1", 6, hidden, 3, rng));
      off2_.push_back(layers::Conv2d(ps, tag + ".off2", hidden, 2 * 9 * groups_, 3, rng, 1,
                                     layers::Init::Zero));
      dcn_w_.push_back(ps.create(tag + ".dcn.w", layers::identity_depthwise_kernel(3, 3)));
      dcn_b_.push_back(ps.create(tag + ".dcn.b", Tensor({3})));
      map1_.push_back(layers::Conv2d(ps, tag + ".map1", 3, 3, 3, rng, 1, layers::Init::Identity));
      map2_.push_back(layers::Conv2d(ps, tag + ".map2", 3, 3, 3, rng, 1, layers::Init::Identity));
    }
  }

  int n_radius() const { return n_radius_; }
  int offset_groups() const { return groups_; }

  // Shared amplitude for one color channel of the whole window. The final
  // rectification keeps the map nonnegative; symmetrization keeps it
  // consistent with real images so recombination has no imaginary part.
  NodeRef aggregate_amplitudes(const std::vector<Tensor>& amps) const {
    if (static_cast<int>(amps.size()) != 2 * n_radius_ + 1)
      throw std::invalid_argument("aggregate_amplitudes: window length " +
                                  std::to_string(amps.size()) + " does not match N=" +
                                  std::to_string(n_radius_));
    const int h = amps[0].dim(0), w = amps[0].dim(1);
    Tensor stacked({static_cast<int>(amps.size()), h, w});
    std::int64_t off = 0;
    for (const auto& a : amps) {
      check_shape(a, {h, w}, "aggregate_amplitudes");
      std::copy(a.data(), a.data() + a.size(), stacked.data() + off);
      off += a.size();
    }
    NodeRef x = ag::constant(std::move(stacked));
    NodeRef y = ag::relu(agg2_(ag::relu(agg1_(x))));
    return fourier::symmetrize_spectrum_op(ag::reshape(y, {h, w}));
  }

  // Offset field for warping a supporting feature onto the reference.
  OffsetField compute_offsets(NodeRef x_support, NodeRef x_ref, int set = 0) const {
    if (!x_support->value.same_shape(x_ref->value))
      throw std::invalid_argument("compute_offsets: support/reference shape mismatch");
    const int h = x_support->value.dim(1), w = x_support->value.dim(2);
    const double bound = static_cast<double>(std::max(h, w));
    const auto& o1 = off1_[param_set(set)];
    const auto& o2 = off2_[param_set(set)];
    NodeRef raw = o2(ag::relu(o1(ag::concat_ch({x_support, x_ref}))));
    return {ag::clamp(raw, -bound, bound)};
  }

  // Deformable sampling of the support at tap positions displaced by the
  // offsets, then the mapping convolutions.
  NodeRef deform_align(NodeRef x_support, const OffsetField& field, int set = 0) const {
    const int s = param_set(set);
    NodeRef warped = ag::deform_conv3x3(x_support, field.offsets, dcn_w_[s], dcn_b_[s], groups_);
    return map2_[s](map1_[s](warped));
  }

  // Full §-level orchestration for one window.
  AlignedWindow align_window(const ClipWindow& clip) const {
    clip.validate();
    if (clip.n_radius != n_radius_)
      throw std::invalid_argument("align_window: clip N=" + std::to_string(clip.n_radius) +
                                  " does not match model N=" + std::to_string(n_radius_));
    const int frames = 2 * n_radius_ + 1;
    const int h = clip.frames[0].height(), w = clip.frames[0].width();

    // per channel: split all frames, aggregate amplitudes, recombine
    std::vector<std::vector<NodeRef>> rebuilt(frames);  // [frame][channel] -> [H,W]
    for (int c = 0; c < 3; ++c) {
      std::vector<Tensor> amps;
      std::vector<Tensor> phases;
      amps.reserve(frames);
      phases.reserve(frames);
      for (int j = 0; j < frames; ++j) {
        Tensor chan({h, w});
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) chan.at2(y, x) = clip.frames[j].at(y, x, c);
        auto sp = fourier::split_amp_phase(fourier::dft2(chan));
        amps.push_back(std::move(sp.amplitude));
        phases.push_back(std::move(sp.phase));
      }
      NodeRef shared_amp = aggregate_amplitudes(amps);
      for (int j = 0; j < frames; ++j)
        rebuilt[j].push_back(
            ag::reshape(fourier::recombine_op(shared_amp, phases[j]), {1, h, w}));
    }

    AlignedWindow out;
    out.center_index = n_radius_;
    out.recombined.resize(frames);
    for (int j = 0; j < frames; ++j) out.recombined[j] = ag::concat_ch(rebuilt[j]);
    out.features.resize(frames);
    out.features[n_radius_] = out.recombined[n_radius_];  // reference passes through unwarped
    int set = 0;
    for (int j = 0; j < frames; ++j) {
      if (j == n_radius_) continue;
      OffsetField field = compute_offsets(out.recombined[j], out.recombined[n_radius_], set);
      out.features[j] = deform_align(out.recombined[j], field, set);
      ++set;
    }
    return out;
  }

 private:
  int param_set(int set) const {
    if (share_) return 0;
    if (set < 0 || set >= static_cast<int>(off1_.size()))
      throw std::invalid_argument("align: bad parameter set index");
    return set;
  }

  int n_radius_ = 2;
  int groups_ = 1;
  bool share_ = true;
  layers::Conv2d agg1_, agg2_;
  std::vector<layers::Conv2d> off1_, off2_;
  std::vector<NodeRef> dcn_w_, dcn_b_;
  std::vector<layers::Conv2d> map1_, map2_;
};

}  // namespace vecnet::align
