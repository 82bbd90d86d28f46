#pragma once

#include <optional>

#include "volsynth/nn.hpp"

namespace volsynth {

struct UNetConfig {
  int in_channels = 1;
  int out_channels = 1;
  int width = 16;
  int embed_features = 0;  // raw conditioning features fed to the embedding MLP; 0 disables it
  int embed_hidden = 64;
  int levels = 2;          // resolutions, each half the previous; receptive field grows ~2^levels

  int level_width(int l) const { return width << std::min(l, 2); }

  friend bool operator==(const UNetConfig&, const UNetConfig&) = default;
};

// Encoder-decoder over {N, C, H, W} with `levels` resolutions. Level l has
// width << min(l, 2) channels.
//
//   encoder l:  [avgpool if l > 0] -> conv1(+emb) -> conv2 ----------------- skip_l
//   decoder l:  upsample(level l+1 output) ++ skip_l -> conv(+emb)
//   output:     conv_out on the decoder level 0 result
//
// SiLU after every conv except conv_out. The embedding (when present) adds a
// per-channel bias computed by an MLP over the conditioning features.
template <typename T>
class SliceUNet {
 public:
  SliceUNet() = default;

  SliceUNet(const UNetConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    if (cfg.in_channels < 1 || cfg.out_channels < 1 || cfg.width < 1) throw std::invalid_argument("SliceUNet: bad channel config");
    if (cfg.levels < 2) throw std::invalid_argument("SliceUNet: levels must be >= 2");
    const bool emb = cfg.embed_features > 0;
    for (int l = 0; l < cfg.levels; ++l) {
      const int cin = l == 0 ? cfg.in_channels : cfg.level_width(l - 1), c = cfg.level_width(l);
      const std::string p = "enc" + std::to_string(l);
      Down d;
      d.conv1 = nn::Conv2d<T>(cin, c, 3, p + ".conv1");
      d.conv2 = nn::Conv2d<T>(c, c, 3, p + ".conv2");
      if (emb) d.emb = nn::Linear<T>(cfg.embed_hidden, c, p + ".emb");
      enc_.push_back(std::move(d));
    }
    for (int l = 0; l + 1 < cfg.levels; ++l) {
      const int c = cfg.level_width(l);
      const std::string p = "dec" + std::to_string(l);
      Up u;
      u.conv = nn::Conv2d<T>(cfg.level_width(l + 1) + c, c, 3, p + ".conv");
      if (emb) u.emb = nn::Linear<T>(cfg.embed_hidden, c, p + ".emb");
      dec_.push_back(std::move(u));
    }
    conv_out_ = nn::Conv2d<T>(cfg.width, cfg.out_channels, 3, "conv_out");
    if (emb) emb_in_ = nn::Linear<T>(cfg.embed_features, cfg.embed_hidden, "emb_in");

    Rng rng(seed);
    for (auto& d : enc_) {
      d.conv1.init(rng);
      d.conv2.init(rng);
    }
    for (auto& u : dec_) u.conv.init(rng);
    conv_out_.init(rng);
    if (emb) {
      emb_in_.init(rng);
      for (auto& d : enc_) d.emb.init(rng);
      for (auto& u : dec_) u.emb.init(rng);
    }
  }

  const UNetConfig& config() const noexcept { return cfg_; }

  nn::ParamList<T> parameters() {
    nn::ParamList<T> ps;
    for (auto& d : enc_) {
      d.conv1.collect(ps);
      d.conv2.collect(ps);
    }
    for (auto& u : dec_) u.conv.collect(ps);
    conv_out_.collect(ps);
    if (cfg_.embed_features > 0) {
      emb_in_.collect(ps);
      for (auto& d : enc_) d.emb.collect(ps);
      for (auto& u : dec_) u.emb.collect(ps);
    }
    return ps;
  }

  // x: {N, in, H, W}; emb: {N, embed_features} or nullptr when disabled.
  Tensor<T> forward(const Tensor<T>& x, const Tensor<T>* emb = nullptr) {
    if ((cfg_.embed_features > 0) != (emb != nullptr)) throw std::invalid_argument("SliceUNet: embedding presence mismatch");
    std::optional<Tensor<T>> e;
    if (emb) e = act_emb_.forward(emb_in_.forward(*emb));

    std::vector<Tensor<T>> skips;
    Tensor<T> h = x;
    for (int l = 0; l < cfg_.levels; ++l) {
      auto& d = enc_[l];
      if (l > 0) {
        d.pool_in = h.shape();
        h = nn::avg_pool2(h);
      }
      h = d.conv1.forward(h);
      if (e) nn::add_channel_bias(h, d.emb.forward(*e));
      h = d.act2.forward(d.conv2.forward(d.act1.forward(h)));
      if (l + 1 < cfg_.levels) skips.push_back(h);
    }
    for (int l = cfg_.levels - 2; l >= 0; --l) {
      auto& u = dec_[l];
      u.low = h.shape();
      const Tensor<T>& skip = skips[l];
      h = u.conv.forward(nn::concat_channels(nn::upsample2(h, skip.dim(2), skip.dim(3)), skip));
      if (e) nn::add_channel_bias(h, u.emb.forward(*e));
      h = u.act.forward(h);
    }
    return conv_out_.forward(h);
  }

  // Accumulates parameter gradients from dL/d(output); returns dL/d(input).
  Tensor<T> backward(const Tensor<T>& dout) {
    const bool emb = cfg_.embed_features > 0;
    std::optional<Tensor<T>> de;
    auto add_emb_grad = [&](nn::Linear<T>& lin, const Tensor<T>& g) {
      Tensor<T> d = lin.backward(nn::channel_bias_backward(g));
      if (de) nn::add_inplace(*de, d);
      else de = std::move(d);
    };

    Tensor<T> g = conv_out_.backward(dout);
    std::vector<Tensor<T>> dskips;
    for (int l = 0; l + 1 < cfg_.levels; ++l) {
      auto& u = dec_[l];
      g = u.act.backward(g);
      if (emb) add_emb_grad(u.emb, g);
      auto [dup, dskip] = nn::split_channels(u.conv.backward(g), cfg_.level_width(l + 1));
      dskips.push_back(std::move(dskip));
      g = nn::upsample2_backward(dup, u.low);
    }
    for (int l = cfg_.levels - 1; l >= 0; --l) {
      auto& d = enc_[l];
      if (l + 1 < cfg_.levels) nn::add_inplace(g, dskips[l]);
      g = d.act1.backward(d.conv2.backward(d.act2.backward(g)));
      if (emb) add_emb_grad(d.emb, g);
      g = d.conv1.backward(g);
      if (l > 0) g = nn::avg_pool2_backward(g, d.pool_in);
    }
    if (emb) emb_in_.backward(act_emb_.backward(*de));
    return g;
  }

 private:
  struct Down {
    nn::Conv2d<T> conv1, conv2;
    nn::SiLU<T> act1, act2;
    nn::Linear<T> emb;
    std::vector<int> pool_in;
  };
  struct Up {
    nn::Conv2d<T> conv;
    nn::SiLU<T> act;
    nn::Linear<T> emb;
    std::vector<int> low;
  };

  UNetConfig cfg_;
  std::vector<Down> enc_;
  std::vector<Up> dec_;
  nn::Conv2d<T> conv_out_;
  nn::Linear<T> emb_in_;
  nn::SiLU<T> act_emb_;
};

}  // namespace volsynth
