#pragma once

#include <deque>

#include "volsynth/codec.hpp"
#include "volsynth/mc_dpm.hpp"

namespace volsynth {

struct GenerationConfig {
  int length = 32;  // L, depth of the generated volume
  int m = 6;
  int n = 1;
  double guidance = 1.0;
  ModeProbabilities probs;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(1 <= n && n < m && m <= length)) throw std::invalid_argument("GenerationConfig: require 1 <= n < m <= L");
    if (!(guidance >= 1.0)) throw std::invalid_argument("GenerationConfig: guidance scale must be >= 1");
    probs.validate();
  }
};

// Upper end of the start-position range, Z = L - (m - 1).
constexpr int start_range_upper(int length, int m) noexcept { return length - (m - 1); }

struct BlockRecord {
  ConditionMode mode;
  int window_start;  // absolute index of the window's first slot (may be < 0 before clamping)
  int first_new;     // absolute index of the first generated slice
  int count;         // generated slices in this block
  double z_norm;     // position passed to the sampler
};

struct GenerationTrace {
  int seed_start = 0;
  std::vector<BlockRecord> blocks;
  int forward_iterations = 0;
  int backward_iterations = 0;
};

// Autoregressive stitching. `sampler(condition, mode, z_norm, rng)` returns
// the generated slices for one block: {m, H, W} unconditionally, else
// {m - n, H, W}. Blocks extend past [0, L) when m - n does not divide the
// remaining span; the overhang is trimmed from the outer ends at the end.
template <typename Sampler>
Tensor<float> stitch_sequence(Sampler&& sampler, const GenerationConfig& cfg, int height, int width, Rng& rng,
                              GenerationTrace* trace = nullptr) {
  cfg.validate();
  const int L = cfg.length, m = cfg.m, n = cfg.n, step = m - n;
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  const double Ld = static_cast<double>(L);

  // Start positions whose seed block fits inside [0, L): {0, ..., Z - 1}.
  const int z = std::uniform_int_distribution<int>(0, start_range_upper(L, m) - 1)(rng);
  GenerationTrace local;
  GenerationTrace& tr = trace ? *trace : local;
  tr = GenerationTrace{};
  tr.seed_start = z;

  auto check_block = [&](const Tensor<float>& block, int count) {
    if (block.rank() != 3 || block.dim(0) != count || block.dim(1) != height || block.dim(2) != width)
      throw std::runtime_error("stitch_sequence: sampler returned shape " + shape_string(block.shape()));
  };

  std::deque<std::vector<float>> seq;
  {
    const Tensor<float> empty({0, height, width});
    const double zn = z / Ld;
    Tensor<float> block = sampler(empty, ConditionMode::Unconditional, zn, rng);
    check_block(block, m);
    for (int i = 0; i < m; ++i) seq.emplace_back(block.data() + i * plane, block.data() + (i + 1) * plane);
    tr.blocks.push_back({ConditionMode::Unconditional, z, z, m, zn});
  }
  int start = z, end = z + m;

  auto take = [&](auto first, int count) {
    Tensor<float> c({count, height, width});
    for (int i = 0; i < count; ++i, ++first) std::copy(first->begin(), first->end(), c.data() + i * plane);
    return c;
  };

  while (end < L) {
    const Tensor<float> cond = take(seq.end() - n, n);
    const int ws = end - n;
    const double zn = ws / Ld;
    Tensor<float> block = sampler(cond, ConditionMode::Forward, zn, rng);
    check_block(block, step);
    for (int i = 0; i < step; ++i) seq.emplace_back(block.data() + i * plane, block.data() + (i + 1) * plane);
    tr.blocks.push_back({ConditionMode::Forward, ws, end, step, zn});
    end += step;
    ++tr.forward_iterations;
  }

  while (start > 0) {
    const Tensor<float> cond = take(seq.begin(), n);
    const int ws = start - step;
    const double zn = std::max(0, ws) / Ld;
    Tensor<float> block = sampler(cond, ConditionMode::Backward, zn, rng);
    check_block(block, step);
    for (int i = step - 1; i >= 0; --i) seq.emplace_front(block.data() + i * plane, block.data() + (i + 1) * plane);
    tr.blocks.push_back({ConditionMode::Backward, ws, ws, step, zn});
    start -= step;
    ++tr.backward_iterations;
  }

  Tensor<float> out({L, height, width});
  for (int i = 0; i < L; ++i) {
    const auto& s = seq[static_cast<std::size_t>(i - start)];
    std::copy(s.begin(), s.end(), out.data() + i * plane);
  }
  return out;
}

// Full mask-volume generation with a trained model; decoding happens once,
// after all blocks are stitched in encoded space.
template <typename Net>
MaskVolume generate_mask_volume(McDpmModel<float, Net>& model, const GenerationConfig& cfg, const LabelCodec& codec,
                                const DiffusionSchedule& sched, Rng& rng, GenerationTrace* trace = nullptr) {
  cfg.validate();
  const auto& mc = model.config();
  if (mc.m != cfg.m || mc.n != cfg.n) throw std::invalid_argument("generate_mask_volume: model (m, n) differ from config");
  auto sampler = [&](const Tensor<float>& cond, ConditionMode mode, double zn, Rng& r) {
    return sample_subsequence(model, cond, mode, zn, cfg.m, cfg.n, sched, cfg.guidance, r);
  };
  const Tensor<float> encoded = stitch_sequence(sampler, cfg, mc.height, mc.width, rng, trace);
  return decode_labels(encoded, codec);
}

}  // namespace volsynth
