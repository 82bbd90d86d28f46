#pragma once

#include <map>

#include "volsynth/codec.hpp"
#include "volsynth/diffusion.hpp"
#include "volsynth/mc_dpm.hpp"
#include "volsynth/unet.hpp"

namespace volsynth {

struct SdmConfig {
  int channels = 16;
  int steps = 2000;
  int batch = 4;
  double lr = 2e-3;
};

// Per-view semantic diffusion model: (noisy image slice, encoded mask slice, t) -> noise.
class SdmModel {
 public:
  SdmModel() = default;
  SdmModel(View view, int channels, std::uint64_t seed)
      : view_(view), net_(UNetConfig{2, 1, channels, kTimeEmbedDim, 64}, seed) {}

  View view() const noexcept { return view_; }
  SliceUNet<float>& net() noexcept { return net_; }
  nn::ParamList<float> parameters() { return net_.parameters(); }

  // noisy, mask: {B, 1, h, w}; one timestep for the whole batch.
  Tensor<float> predict(const Tensor<float>& noisy, const Tensor<float>& mask, int t) {
    require_same_shape(noisy, mask, "SdmModel::predict");
    const int b = noisy.dim(0);
    Tensor<float> feat({b, kTimeEmbedDim});
    for (int i = 0; i < b; ++i) nn::sinusoidal_embedding<float>(t, kTimeEmbedDim, feat.data() + i * kTimeEmbedDim);
    return net_.forward(nn::concat_channels(noisy, mask), &feat);
  }

  Tensor<float> forward_batch(const Tensor<float>& inputs, const Tensor<float>& features) { return net_.forward(inputs, &features); }
  Tensor<float> backward(const Tensor<float>& dy) { return net_.backward(dy); }

 private:
  View view_ = View::Axial;
  SliceUNet<float> net_;
};

struct SdmData {
  std::vector<ImageVolume> masks;  // encoded
  std::vector<ImageVolume> images;

  void validate() const {
    if (masks.empty() || masks.size() != images.size()) throw std::invalid_argument("sdm: need at least one (mask, image) pair");
    for (std::size_t i = 0; i < masks.size(); ++i) {
      if (masks[i].shape() != images[i].shape()) throw std::invalid_argument("sdm: mask/image shape mismatch in pair " + std::to_string(i));
      if (masks[i].shape() != masks[0].shape()) throw std::invalid_argument("sdm: all pairs must share one shape");
    }
  }
};

inline SdmData make_sdm_data(std::span<const MaskVolume> masks, std::span<const ImageVolume> images, const LabelCodec& codec) {
  if (masks.size() != images.size()) throw std::invalid_argument("sdm: mask and image counts differ");
  SdmData d;
  for (std::size_t i = 0; i < masks.size(); ++i) {
    if (masks[i].shape() != images[i].shape()) throw std::invalid_argument("sdm: mask/image shape mismatch in pair " + std::to_string(i));
    d.masks.push_back(encode_labels(masks[i], codec));
    d.images.push_back(images[i]);
  }
  d.validate();
  return d;
}

inline double sdm_train_step(SdmModel& model, nn::Adam<float>& opt, const SdmData& data, const DiffusionSchedule& sched,
                             int batch, Rng& rng) {
  const auto g = slice_geometry(data.masks.front(), model.view());
  const std::size_t plane = static_cast<std::size_t>(g.rows) * g.cols;
  Tensor<float> in({batch, 2, g.rows, g.cols});
  Tensor<float> noise({batch, 1, g.rows, g.cols});
  Tensor<float> feat({batch, kTimeEmbedDim});
  std::vector<float> x0(plane), eps(plane);
  for (int b = 0; b < batch; ++b) {
    const auto idx = std::uniform_int_distribution<std::size_t>(0, data.masks.size() - 1)(rng);
    const int s = std::uniform_int_distribution<int>(0, g.count - 1)(rng);
    const int t = uniform_timestep(sched, rng);
    read_slice(data.images[idx], model.view(), s, std::span<float>(x0));
    fill_normal<float>(std::span<float>(eps), rng);
    const float a = static_cast<float>(std::sqrt(sched.alpha_bar(t))), c = static_cast<float>(std::sqrt(1.0 - sched.alpha_bar(t)));
    float* dst = in.data() + b * in.stride0();
    for (std::size_t i = 0; i < plane; ++i) dst[i] = a * x0[i] + c * eps[i];
    read_slice(data.masks[idx], model.view(), s, std::span<float>(dst + plane, plane));
    std::copy(eps.begin(), eps.end(), noise.data() + b * plane);
    nn::sinusoidal_embedding<float>(t, kTimeEmbedDim, feat.data() + b * kTimeEmbedDim);
  }
  nn::zero_grad(model.parameters());
  Tensor<float> pred = model.forward_batch(in, feat);
  Tensor<float> grad;
  const double loss = nn::masked_mse<float>(pred, noise, {}, &grad);
  model.backward(grad);
  opt.step();
  return loss;
}

inline SdmModel train_sdm(View view, const SdmData& data, const DiffusionSchedule& sched, const SdmConfig& cfg, Rng& rng,
                          std::vector<double>* loss_trace = nullptr) {
  data.validate();
  const std::uint64_t seed = rng();
  SdmModel model(view, cfg.channels, seed);
  nn::Adam<float> opt(model.parameters(), {.lr = cfg.lr});
  for (int s = 0; s < cfg.steps; ++s) {
    Rng step_rng = derive_rng(seed, 3, static_cast<std::uint64_t>(s));
    const double l = sdm_train_step(model, opt, data, sched, cfg.batch, step_rng);
    if (loss_trace) loss_trace->push_back(l);
  }
  return model;
}

// Closed-form forward diffusion to step k; k == 0 is the identity.
inline ImageVolume renoise(const ImageVolume& image, int k, const DiffusionSchedule& sched, Rng& rng) {
  if (k < 0 || k > sched.steps()) throw std::out_of_range("renoise: k outside [0, T]");
  if (k == 0) return image;
  const double ab = sched.alpha_bar(k);
  const double a = std::sqrt(ab), c = std::sqrt(1.0 - ab);
  ImageVolume out = image;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& v : out.voxels()) v = static_cast<float>(a * v + c * normal(rng));
  return out;
}

using SdmSet = std::map<View, SdmModel*>;

namespace detail {

inline ImageVolume refine_branch(const ImageVolume& image, const ImageVolume& encoded_mask, SdmModel& model, int k,
                                 const DiffusionSchedule& sched, Rng& rng) {
  ImageVolume x = renoise(image, k, sched, rng);
  const View view = model.view();
  const auto g = slice_geometry(x, view);
  const std::size_t plane = static_cast<std::size_t>(g.rows) * g.cols;
  constexpr int kChunk = 16;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int t = k; t >= 1; --t) {
    for (int s0 = 0; s0 < g.count; s0 += kChunk) {
      const int b = std::min(kChunk, g.count - s0);
      Tensor<float> noisy({b, 1, g.rows, g.cols}), mask({b, 1, g.rows, g.cols});
      for (int i = 0; i < b; ++i) {
        read_slice(x, view, s0 + i, std::span<float>(noisy.data() + i * plane, plane));
        read_slice(encoded_mask, view, s0 + i, std::span<float>(mask.data() + i * plane, plane));
      }
      const Tensor<float> eps = model.predict(noisy, mask, t);
      Tensor<float> noise(noisy.shape());
      if (t > 1)
        for (auto& v : noise.values()) v = static_cast<float>(normal(rng));
      const Tensor<float> prev = reverse_step(noisy, eps, t, sched, noise);
      for (int i = 0; i < b; ++i) write_slice(x, view, s0 + i, std::span<const float>(prev.data() + i * plane, plane));
    }
  }
  return x;
}

}  // namespace detail

// Renoises to step k and denoises slicewise with each view's model; returns
// the voxelwise mean of the three branches. Each branch draws from its own
// stream derived from one base seed, so the result does not depend on the
// order in which branches run.
inline ImageVolume refine_volume(const ImageVolume& image, const MaskVolume& mask, const SdmSet& models, int k,
                                 const DiffusionSchedule& sched, const LabelCodec& codec, Rng& rng,
                                 std::span<const View> order = kAllViews) {
  if (k < 0 || k > sched.steps()) throw std::out_of_range("refine_volume: k outside [0, T]");
  if (image.shape() != mask.shape()) throw std::invalid_argument("refine_volume: image and mask shapes differ");
  for (View v : kAllViews) {
    auto it = models.find(v);
    if (it == models.end() || it->second == nullptr) throw std::invalid_argument("refine_volume: missing model for view " + std::string(view_name(v)));
    if (it->second->view() != v) throw std::invalid_argument("refine_volume: model registered under the wrong view");
  }
  if (order.size() != 3 || !std::is_permutation(order.begin(), order.end(), kAllViews.begin()))
    throw std::invalid_argument("refine_volume: order must be a permutation of the three views");
  const std::uint64_t base = rng();
  if (k == 0) return image;

  const ImageVolume enc = encode_labels(mask, codec);
  std::array<ImageVolume, 3> branches;
  for (View v : order) {
    Rng branch_rng = derive_rng(base, static_cast<std::uint64_t>(v));
    branches[static_cast<std::size_t>(v)] = detail::refine_branch(image, enc, *models.at(v), k, sched, branch_rng);
  }
  ImageVolume out(image.depth(), image.height(), image.width());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double s = static_cast<double>(branches[0].voxels()[i]) + branches[1].voxels()[i] + branches[2].voxels()[i];
    out.voxels()[i] = static_cast<float>(std::clamp(s / 3.0, -1.0, 1.0));
  }
  return out;
}

}  // namespace volsynth
