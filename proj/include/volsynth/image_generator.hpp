#pragma once

#include "volsynth/codec.hpp"
#include "volsynth/unet.hpp"

namespace volsynth {

struct SeqGenConfig {
  int channels = 16;
  int steps = 2000;
  int batch = 4;
  double lr = 2e-3;
};

// Slice generator over channel-stacked (mask_z, mask_{z-1}, image_{z-1}).
// Slice 0 sees its own mask as the previous mask and a zero previous image.
class SeqGenModel {
 public:
  static constexpr int kInputs = 3;

  SeqGenModel() = default;
  SeqGenModel(int channels, std::uint64_t seed) : net_(UNetConfig{kInputs, 1, channels, 0, 64}, seed) {}

  SliceUNet<float>& net() noexcept { return net_; }
  nn::ParamList<float> parameters() { return net_.parameters(); }

  // Packs one input triple into a {3, H, W} block starting at out.
  static void pack(std::span<const float> mask, std::span<const float> prev_mask, std::span<const float> prev_image, float* out) {
    const std::size_t plane = mask.size();
    std::copy(mask.begin(), mask.end(), out);
    std::copy(prev_mask.begin(), prev_mask.end(), out + plane);
    if (prev_image.empty()) std::fill_n(out + 2 * plane, plane, 0.0f);
    else std::copy(prev_image.begin(), prev_image.end(), out + 2 * plane);
  }

  Tensor<float> forward(const Tensor<float>& inputs) { return net_.forward(inputs, nullptr); }
  Tensor<float> backward(const Tensor<float>& dy) { return net_.backward(dy); }

 private:
  SliceUNet<float> net_;
};

// Encoded masks paired with their images.
struct SeqGenData {
  std::vector<ImageVolume> masks;
  std::vector<ImageVolume> images;

  void validate() const {
    if (masks.empty() || masks.size() != images.size()) throw std::invalid_argument("seq generator: need at least one (mask, image) pair");
    for (std::size_t i = 0; i < masks.size(); ++i)
      if (masks[i].shape() != images[i].shape()) throw std::invalid_argument("seq generator: mask/image shape mismatch in pair " + std::to_string(i));
  }
};

inline SeqGenData make_seqgen_data(std::span<const MaskVolume> masks, std::span<const ImageVolume> images, const LabelCodec& codec) {
  SeqGenData d;
  if (masks.size() != images.size()) throw std::invalid_argument("seq generator: mask and image counts differ");
  for (std::size_t i = 0; i < masks.size(); ++i) {
    if (masks[i].shape() != images[i].shape()) throw std::invalid_argument("seq generator: mask/image shape mismatch in pair " + std::to_string(i));
    d.masks.push_back(encode_labels(masks[i], codec));
    d.images.push_back(images[i]);
  }
  d.validate();
  return d;
}

// One L1 reconstruction step on randomly drawn slice triples (teacher forcing).
inline double seqgen_train_step(SeqGenModel& model, nn::Adam<float>& opt, const SeqGenData& data, int batch, Rng& rng) {
  const auto& first = data.masks.front();
  const int h = first.height(), w = first.width();
  const std::size_t plane = first.slice_size();
  Tensor<float> in({batch, SeqGenModel::kInputs, h, w});
  Tensor<float> target({batch, 1, h, w});
  for (int b = 0; b < batch; ++b) {
    const auto idx = std::uniform_int_distribution<std::size_t>(0, data.masks.size() - 1)(rng);
    const auto& mask = data.masks[idx];
    const auto& img = data.images[idx];
    if (mask.height() != h || mask.width() != w) throw std::invalid_argument("seq generator: all pairs must share H, W");
    const int z = std::uniform_int_distribution<int>(0, mask.depth() - 1)(rng);
    SeqGenModel::pack(mask.slice(z), mask.slice(z > 0 ? z - 1 : 0), z > 0 ? img.slice(z - 1) : std::span<const float>{},
                      in.data() + b * in.stride0());
    std::copy_n(img.slice(z).data(), plane, target.data() + b * plane);
  }
  nn::zero_grad(model.parameters());
  Tensor<float> pred = model.forward(in);
  Tensor<float> grad;
  const double loss = nn::mean_l1(pred, target, &grad);
  model.backward(grad);
  opt.step();
  return loss;
}

inline SeqGenModel train_seq_generator(const SeqGenData& data, const SeqGenConfig& cfg, Rng& rng,
                                       std::vector<double>* loss_trace = nullptr) {
  data.validate();
  const std::uint64_t seed = rng();
  SeqGenModel model(cfg.channels, seed);
  nn::Adam<float> opt(model.parameters(), {.lr = cfg.lr});
  for (int s = 0; s < cfg.steps; ++s) {
    Rng step_rng = derive_rng(seed, 2, static_cast<std::uint64_t>(s));
    const double l = seqgen_train_step(model, opt, data, cfg.batch, step_rng);
    if (loss_trace) loss_trace->push_back(l);
  }
  return model;
}

// Ascending sweep; each slice conditions on the previously generated slice.
inline ImageVolume generate_image_volume(const MaskVolume& mask, SeqGenModel& model, const LabelCodec& codec) {
  const ImageVolume enc = encode_labels(mask, codec);
  const int d = enc.depth(), h = enc.height(), w = enc.width();
  ImageVolume out(d, h, w);
  Tensor<float> in({1, SeqGenModel::kInputs, h, w});
  for (int z = 0; z < d; ++z) {
    SeqGenModel::pack(enc.slice(z), enc.slice(z > 0 ? z - 1 : 0),
                      z > 0 ? std::span<const float>(out.slice(z - 1)) : std::span<const float>{}, in.data());
    Tensor<float> pred = model.forward(in);
    auto dst = out.slice(z);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = std::clamp(pred[i], -1.0f, 1.0f);
  }
  return out;
}

}  // namespace volsynth
