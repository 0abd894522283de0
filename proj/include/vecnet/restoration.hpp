#pragma once

// Two-stage synthesis restoration: reflectance features from the aligned
// window, a first fusion of the dual latents with those features, and a
// second fusion that blends the two corrected images with the intermediate
// through a per-pixel convex weight map. Also hosts the full model wrapper
// and its checkpoint format.

#include "vecnet/fourier_align.hpp"
#include "vecnet/illumination.hpp"

#include <cstring>
#include <fstream>

namespace vecnet::restore {

using ag::NodeRef;
using core::ClipWindow;
using core::FrameTensor;
using core::Rng;
using core::Tensor;

struct ReflectancePyramid {
  std::vector<NodeRef> levels;  // fine -> coarse, spatial size halves per level
};

class ReflectanceNet {
 public:
  ReflectanceNet() = default;

  ReflectanceNet(layers::ParamStore& ps, const core::ModelConfig& cfg, Rng& rng) {
    const int c = cfg.base_channels;
    const int in_ch = 3 * (2 * cfg.n_radius + 1);
    conv_in_ = layers::Conv2d(ps, "refl.in", in_ch, c, 3, rng);
    int ch = c;
    for (int lv = 0; lv < 3; ++lv) {
      for (int r = 0; r < cfg.rcab_count; ++r)
        blocks_[lv].emplace_back(ps, "refl.l" + std::to_string(lv) + ".rcab" + std::to_string(r),
                                 ch, rng);
      if (lv < 2) {
        down_[lv] = layers::Conv2d(ps, "refl.down" + std::to_string(lv), ch, 2 * ch, 4, rng, 2,
                                   layers::Init::He, 1);
        ch *= 2;
      }
    }
  }

  // aligned 2N+1 features [3,H,W] -> three-level pyramid [C], [2C], [4C]
  ReflectancePyramid forward(const std::vector<NodeRef>& aligned) const {
    if (aligned.empty()) throw std::invalid_argument("reflectance: empty window");
    for (const auto& f : aligned)
      if (!f->value.same_shape(aligned[0]->value))
        throw std::invalid_argument("reflectance: aligned feature shape mismatch");
    NodeRef x = ag::instance_norm(ag::concat_ch(aligned));
    x = conv_in_(x);
    ReflectancePyramid pyr;
    for (int lv = 0; lv < 3; ++lv) {
      for (const auto& b : blocks_[lv]) x = b(x);
      pyr.levels.push_back(x);
      if (lv < 2) x = ag::relu(down_[lv](x));
    }
    return pyr;
  }

 private:
  layers::Conv2d conv_in_;
  std::vector<layers::Rcab> blocks_[3];
  layers::Conv2d down_[2];
};

class StageOneFusion {
 public:
  StageOneFusion() = default;

  StageOneFusion(layers::ParamStore& ps, const core::ModelConfig& cfg, Rng& rng) {
    const int c = cfg.base_channels;
    fuse_in_ = layers::Conv2d(ps, "fuse1.in", 8 * c, 4 * c, 3, rng);
    for (int r = 0; r < cfg.rcab_count; ++r)
      blocks_.emplace_back(ps, "fuse1.rcab" + std::to_string(r), 4 * c, rng);
    up1_ = layers::Conv2d(ps, "fuse1.up1", 4 * c, 2 * c, 3, rng);
    skip1_ = layers::Conv2d(ps, "fuse1.skip1", 4 * c, 2 * c, 3, rng);
    up2_ = layers::Conv2d(ps, "fuse1.up2", 2 * c, c, 3, rng);
    skip0_ = layers::Conv2d(ps, "fuse1.skip0", 2 * c, c, 3, rng);
    // zero-init head: the intermediate starts mid-gray with the sigmoid at
    // its steepest point instead of a saturated flat
    head_ = layers::Conv2d(ps, "fuse1.head", c, 3, 3, rng, 1, layers::Init::Zero);
  }

  // latents live at the coarsest pyramid scale; the decoder walks back up
  // with skip connections from the reflectance levels
  NodeRef forward(NodeRef latent, NodeRef latent_inv, const ReflectancePyramid& pyr) const {
    if (pyr.levels.size() != 3) throw std::invalid_argument("stage1: need a 3-level pyramid");
    const auto& coarse = pyr.levels[2]->value;
    if (latent->value.dim(1) != coarse.dim(1) || latent->value.dim(2) != coarse.dim(2))
      throw std::invalid_argument("stage1: latent spatial size " + latent->value.shape_str() +
                                  " incompatible with reflectance " + coarse.shape_str());
    NodeRef x = ag::relu(fuse_in_(ag::concat_ch({latent, latent_inv, pyr.levels[2]})));
    for (const auto& b : blocks_) x = b(x);
    x = ag::relu(up1_(ag::upsample_nearest(x, 2)));
    x = ag::relu(skip1_(ag::concat_ch({x, pyr.levels[1]})));
    x = ag::relu(up2_(ag::upsample_nearest(x, 2)));
    x = ag::relu(skip0_(ag::concat_ch({x, pyr.levels[0]})));
    return ag::sigmoid(head_(x));  // intermediate enhanced image, [3,H,W] in [0,1]
  }

 private:
  layers::Conv2d fuse_in_, up1_, skip1_, up2_, skip0_, head_;
  std::vector<layers::Rcab> blocks_;
};

struct StageTwoResult {
  NodeRef output;   // [3,H,W]
  NodeRef weights;  // [3,H,W], per-pixel simplex
};

class StageTwoFusion {
 public:
  StageTwoFusion() = default;

  StageTwoFusion(layers::ParamStore& ps, const core::ModelConfig& cfg, Rng& rng) {
    const int c = cfg.base_channels;
    conv_in_ = layers::Conv2d(ps, "fuse2.in", 9, c, 3, rng);
    down1_ = layers::Conv2d(ps, "fuse2.down1", c, c, 4, rng, 2, layers::Init::He, 1);
    down2_ = layers::Conv2d(ps, "fuse2.down2", c, c, 4, rng, 2, layers::Init::He, 1);
    nonlocal_ = layers::NonLocalBlock(ps, "fuse2.nl", c, rng);
    up1_ = layers::Conv2d(ps, "fuse2.up1", c, c, 3, rng);
    up2_ = layers::Conv2d(ps, "fuse2.up2", c, c, 3, rng);
    // zero-init head: fusion starts as the uniform average of its inputs
    head_ = layers::Conv2d(ps, "fuse2.head", c, 3, 3, rng, 1, layers::Init::Zero);
  }

  StageTwoResult forward(NodeRef under, NodeRef over, NodeRef mid) const {
    if (!under->value.same_shape(over->value) || !under->value.same_shape(mid->value))
      throw std::invalid_argument("stage2: input shape mismatch");
    NodeRef x = ag::relu(conv_in_(ag::concat_ch({under, over, mid})));
    x = ag::relu(down1_(x));
    x = ag::relu(down2_(x));
    x = nonlocal_(x);
    x = ag::relu(up1_(ag::upsample_nearest(x, 2)));
    x = ag::relu(up2_(ag::upsample_nearest(x, 2)));
    NodeRef weights = ag::softmax_ch(head_(x));
    NodeRef out = ag::add(
        ag::add(ag::mul_map(under, ag::slice_ch(weights, 0, 1)),
                ag::mul_map(over, ag::slice_ch(weights, 1, 2))),
        ag::mul_map(mid, ag::slice_ch(weights, 2, 3)));
    return {out, weights};
  }

 private:
  layers::Conv2d conv_in_, down1_, down2_, up1_, up2_, head_;
  layers::NonLocalBlock nonlocal_;
};

// ---------------------------------------------------------------------------
// full model

struct ForwardArtifacts {
  NodeRef output;            // O_t, [3,H,W] in [0,1]
  NodeRef map;               // illumination of the reference frame
  NodeRef map_inv;           // illumination of the inverted reference
  NodeRef corrected_under;   // I^u
  NodeRef corrected_over;    // I^o
  NodeRef intermediate;      // stage-1 result
  NodeRef fusion_weights;    // stage-2 weight map
};

class VecNet {
 public:
  explicit VecNet(core::ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(static_cast<std::uint64_t>(cfg_.seed));
    aligner_ = align::MultiFrameAligner(params_, cfg_, rng);
    illum_ = illum::IlluminationEstimator(params_, cfg_, rng);
    reflectance_ = ReflectanceNet(params_, cfg_, rng);
    stage1_ = StageOneFusion(params_, cfg_, rng);
    stage2_ = StageTwoFusion(params_, cfg_, rng);
  }

  const core::ModelConfig& config() const { return cfg_; }
  layers::ParamStore& params() { return params_; }
  const layers::ParamStore& params() const { return params_; }
  std::int64_t parameter_count() const { return params_.total_size(); }
  const align::MultiFrameAligner& aligner() const { return aligner_; }
  const illum::IlluminationEstimator& illumination() const { return illum_; }
  const ReflectanceNet& reflectance() const { return reflectance_; }
  const StageOneFusion& stage1() const { return stage1_; }
  const StageTwoFusion& stage2() const { return stage2_; }

  ForwardArtifacts forward(const ClipWindow& clip) const {
    clip.validate();
    const int h = clip.frames[0].height(), w = clip.frames[0].width();
    const int f = cfg_.spatial_factor();
    if (h % f != 0 || w % f != 0)
      throw std::invalid_argument("forward: frame size " + std::to_string(h) + "x" +
                                  std::to_string(w) + " not divisible by " + std::to_string(f) +
                                  "; pad the input (reflect) and crop the result back");

    auto aligned = aligner_.align_window(clip);
    auto dic = illum::dic_forward(illum_, clip.reference());
    auto pyramid = reflectance_.forward(aligned.features);
    NodeRef mid = stage1_.forward(dic.latent, dic.latent_inv, pyramid);
    auto fused = stage2_.forward(dic.corrected_under, dic.corrected_over, mid);
    return {fused.output,        dic.map,           dic.map_inv, dic.corrected_under,
            dic.corrected_over,  mid,               fused.weights};
  }

  // Convenience for inference: returns the enhanced reference frame.
  FrameTensor enhance_window(const ClipWindow& clip) const {
    auto art = forward(clip);
    return core::planes_to_frame(art.output->value);
  }

 private:
  core::ModelConfig cfg_;
  layers::ParamStore params_;
  align::MultiFrameAligner aligner_;
  illum::IlluminationEstimator illum_;
  ReflectanceNet reflectance_;
  StageOneFusion stage1_;
  StageTwoFusion stage2_;
};

// ---------------------------------------------------------------------------
// checkpoint container: magic, version, config echo, named float64 arrays.
// Binary little-endian; a round trip restores parameters bit for bit.

constexpr char kCheckpointMagic[8] = {'V', 'E', 'C', 'K', 'P', 'T', '0', '1'};

namespace detail {
template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
void read_pod(std::istream& is, T& v) {
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("checkpoint: truncated file");
}
}  // namespace detail

inline void save_checkpoint(const std::string& path, const VecNet& model,
                            const core::Config& config) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write checkpoint " + path);
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  const std::string cfg_text = core::config_to_text(config);
  detail::write_pod(os, static_cast<std::uint64_t>(cfg_text.size()));
  os.write(cfg_text.data(), static_cast<std::streamsize>(cfg_text.size()));
  const auto& params = model.params().params();
  detail::write_pod(os, static_cast<std::uint64_t>(params.size()));
  for (const auto& p : params) {
    detail::write_pod(os, static_cast<std::uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    detail::write_pod(os, static_cast<std::uint32_t>(p.node->value.rank()));
    for (int d : p.node->value.shape()) detail::write_pod(os, static_cast<std::int64_t>(d));
    os.write(reinterpret_cast<const char*>(p.node->value.data()),
             static_cast<std::streamsize>(p.node->value.size() * sizeof(double)));
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

struct LoadedCheckpoint {
  core::Config config;
  std::unique_ptr<VecNet> model;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  std::uint64_t cfg_len = 0;
  detail::read_pod(is, cfg_len);
  std::string cfg_text(cfg_len, '\0');
  is.read(cfg_text.data(), static_cast<std::streamsize>(cfg_len));
  if (!is) throw std::runtime_error("checkpoint: truncated config block");

  LoadedCheckpoint out;
  out.config = core::config_from_kv(core::parse_kv_text(cfg_text, path + "#config"));
  out.model = std::make_unique<VecNet>(out.config.model);

  std::uint64_t nparams = 0;
  detail::read_pod(is, nparams);
  const auto& params = out.model->params().params();
  if (nparams != params.size())
    throw std::runtime_error("checkpoint: parameter count mismatch (file " +
                             std::to_string(nparams) + ", model " +
                             std::to_string(params.size()) + ")");
  for (const auto& p : params) {
    std::uint32_t name_len = 0;
    detail::read_pod(is, name_len);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is || name != p.name)
      throw std::runtime_error("checkpoint: parameter order mismatch at " + p.name);
    std::uint32_t rank = 0;
    detail::read_pod(is, rank);
    std::vector<int> shape(rank);
    for (auto& d : shape) {
      std::int64_t v = 0;
      detail::read_pod(is, v);
      d = static_cast<int>(v);
    }
    if (shape != p.node->value.shape())
      throw std::runtime_error("checkpoint: shape mismatch for " + p.name);
    is.read(reinterpret_cast<char*>(p.node->value.data()),
            static_cast<std::streamsize>(p.node->value.size() * sizeof(double)));
    if (!is) throw std::runtime_error("checkpoint: truncated data for " + p.name);
  }
  return out;
}

}  // namespace vecnet::restore
