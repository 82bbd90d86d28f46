#pragma once

#include <array>
#include <concepts>

#include "volsynth/diffusion.hpp"
#include "volsynth/nn.hpp"
#include "volsynth/unet.hpp"
#include "volsynth/volume.hpp"

namespace volsynth {

// Forward: condition is the earlier block (first n slots), targets follow.
// Backward: condition is the later block (last n slots), targets precede.
enum class ConditionMode { Forward = 0, Backward = 1, Unconditional = 2 };

inline std::string_view mode_name(ConditionMode m) {
  switch (m) {
    case ConditionMode::Forward: return "forward";
    case ConditionMode::Backward: return "backward";
    case ConditionMode::Unconditional: return "unconditional";
  }
  return "?";
}

struct ModeProbabilities {
  double forward = 0.4;
  double backward = 0.4;
  double uncondition = 0.2;

  void validate() const {
    for (double p : {forward, backward, uncondition})
      if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("ModeProbabilities: each probability must lie in [0, 1]");
    if (std::abs(forward + backward + uncondition - 1.0) > 1e-9)
      throw std::invalid_argument("ModeProbabilities: probabilities must sum to 1");
  }

  std::array<double, 3> as_array() const { return {forward, backward, uncondition}; }
};

inline ConditionMode sample_condition_mode(const ModeProbabilities& probs, Rng& rng) {
  probs.validate();
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  if (u < probs.forward) return ConditionMode::Forward;
  if (u < probs.forward + probs.backward) return ConditionMode::Backward;
  // Guard against u landing in rounding slack when p_uncondition == 0.
  if (probs.uncondition == 0.0) return probs.backward > 0.0 ? ConditionMode::Backward : ConditionMode::Forward;
  return ConditionMode::Unconditional;
}

// Window slot layout: indicator[i] == 1 marks a condition slot.
inline std::vector<std::uint8_t> condition_indicators(ConditionMode mode, int m, int n) {
  std::vector<std::uint8_t> ind(static_cast<std::size_t>(m), 0);
  if (mode == ConditionMode::Forward) std::fill_n(ind.begin(), n, 1);
  if (mode == ConditionMode::Backward) std::fill_n(ind.end() - n, n, 1);
  return ind;
}

template <typename T>
struct ConditionedExample {
  Tensor<T> target;     // {m - c, H, W}
  Tensor<T> condition;  // {c, H, W}; c == 0 is the null condition
  std::vector<std::uint8_t> indicators;
  double z_norm = 0.0;
  int z = 0;
  ConditionMode mode = ConditionMode::Unconditional;

  int window() const noexcept { return static_cast<int>(indicators.size()); }
};

inline void check_window(int m, int n, int depth) {
  if (n < 1 || n >= m) throw std::invalid_argument("condition count n must satisfy 1 <= n < m");
  if (m > depth) throw std::invalid_argument("subsequence length m exceeds volume depth");
}

// Extracts the window [z, z + m) of an encoded volume and splits it by mode.
template <typename T>
ConditionedExample<T> assemble_training_example_at(const ImageVolume& encoded, int m, int n, ConditionMode mode, int z) {
  check_window(m, n, encoded.depth());
  if (z < 0 || z > encoded.depth() - m) throw std::out_of_range("assemble_training_example: start index out of range");
  ConditionedExample<T> ex;
  ex.mode = mode;
  ex.z = z;
  ex.z_norm = static_cast<double>(z) / encoded.depth();
  ex.indicators = condition_indicators(mode, m, n);
  switch (mode) {
    case ConditionMode::Unconditional:
      ex.target = slab<T>(encoded, z, m);
      ex.condition = Tensor<T>({0, encoded.height(), encoded.width()});
      break;
    case ConditionMode::Forward:
      ex.condition = slab<T>(encoded, z, n);
      ex.target = slab<T>(encoded, z + n, m - n);
      break;
    case ConditionMode::Backward:
      ex.target = slab<T>(encoded, z, m - n);
      ex.condition = slab<T>(encoded, z + m - n, n);
      break;
  }
  return ex;
}

template <typename T>
ConditionedExample<T> assemble_training_example(const ImageVolume& encoded, int m, int n, ConditionMode mode, Rng& rng) {
  check_window(m, n, encoded.depth());
  const int z = std::uniform_int_distribution<int>(0, encoded.depth() - m)(rng);
  return assemble_training_example_at<T>(encoded, m, n, mode, z);
}

// Noise-prediction network interface shared by the production U-Net and
// the small test networks used for gradient checks.
template <typename N, typename T>
concept ConditioningNet = requires(N net, const Tensor<T>& x, const Tensor<T>* emb, const Tensor<T>& dy) {
  { net.forward(x, emb) } -> std::same_as<Tensor<T>>;
  { net.backward(dy) } -> std::same_as<Tensor<T>>;
  { net.parameters() } -> std::same_as<nn::ParamList<T>>;
};

inline constexpr int kTimeEmbedDim = 32;
inline constexpr int kPositionEmbedDim = 32;
inline constexpr int kMcDpmEmbedFeatures = kTimeEmbedDim + kPositionEmbedDim;
inline constexpr double kPositionEmbedScale = 1000.0;

// Time embedding concatenated with the position embedding.
template <typename T>
void time_position_features(int t, double z_norm, T* out) {
  nn::sinusoidal_embedding<T>(static_cast<double>(t), kTimeEmbedDim, out);
  nn::sinusoidal_embedding<T>(z_norm * kPositionEmbedScale, kPositionEmbedDim, out + kTimeEmbedDim);
}

// Writes one window into a {3m, H, W} input block: m noisy-target channels
// (zero at condition slots), m condition channels (zero at target slots) and
// m constant indicator planes. With null_condition the condition and
// indicator channels are zeroed while targets keep their slots.
template <typename T>
void pack_window(const Tensor<T>& noisy_target, const Tensor<T>& condition, std::span<const std::uint8_t> indicators,
                 bool null_condition, T* out) {
  const int m = static_cast<int>(indicators.size());
  const std::size_t plane = static_cast<std::size_t>(noisy_target.dim(1)) * noisy_target.dim(2);
  std::fill_n(out, 3 * m * plane, T{0});
  int ti = 0, ci = 0;
  for (int slot = 0; slot < m; ++slot) {
    if (indicators[slot]) {
      if (!null_condition) {
        std::copy_n(condition.data() + ci * plane, plane, out + (m + slot) * plane);
        std::fill_n(out + (2 * m + slot) * plane, plane, T{1});
      }
      ++ci;
    } else {
      std::copy_n(noisy_target.data() + ti * plane, plane, out + slot * plane);
      ++ti;
    }
  }
}

struct McDpmConfig {
  int m = 6;
  int n = 1;
  int height = 64;
  int width = 64;
  int channels = 24;
  int levels = 4;  // 64-pixel slices reach an 8x8 bottleneck, so the net sees whole-slice layout

  UNetConfig unet() const {
    return UNetConfig{3 * m, m, channels, kMcDpmEmbedFeatures, 64, levels};
  }
};

template <typename T>
struct PackedBatch {
  Tensor<T> inputs;        // {B, 3m, H, W}
  Tensor<T> features;      // {B, 64}
  Tensor<T> noise;         // {B, m, H, W}; zero at condition slots
  Tensor<T> prior;         // {B, m, H, W}; noise prior added to the net output, empty when disabled
  std::vector<T> weight;   // 1 at target-slot voxels
};

template <typename T, typename Net = SliceUNet<T>>
  requires ConditioningNet<Net, T>
class McDpmModel {
 public:
  McDpmModel() = default;
  McDpmModel(const McDpmConfig& cfg, Net net) : cfg_(cfg), net_(std::move(net)) {
    check_window(cfg.m, cfg.n, cfg.m);
  }
  McDpmModel(const McDpmConfig& cfg, std::uint64_t seed)
    requires std::same_as<Net, SliceUNet<T>>
      : McDpmModel(cfg, SliceUNet<T>(cfg.unet(), seed)) {}

  const McDpmConfig& config() const noexcept { return cfg_; }
  Net& net() noexcept { return net_; }

  // With a noise prior the prediction is net + sqrt(1 - abar_t) * x_t on
  // target slots, so the net only models the residual. Parameter-free.
  void set_noise_prior(const DiffusionSchedule& sched) {
    prior_gain_.assign(1, 0.0);
    for (int t = 1; t <= sched.steps(); ++t) prior_gain_.push_back(std::sqrt(1.0 - sched.alpha_bar(t)));
  }
  bool has_noise_prior() const noexcept { return !prior_gain_.empty(); }
  nn::ParamList<T> parameters() { return net_.parameters(); }

  // Predicts noise for the target slots of a single window.
  Tensor<T> predict(const Tensor<T>& noisy_target, const Tensor<T>& condition, std::span<const std::uint8_t> indicators,
                    double z_norm, int t, bool null_condition = false) {
    validate_window(noisy_target, condition, indicators);
    const int m = cfg_.m, h = noisy_target.dim(1), w = noisy_target.dim(2);
    Tensor<T> in({1, 3 * m, h, w});
    pack_window(noisy_target, condition, indicators, null_condition, in.data());
    Tensor<T> feat({1, kMcDpmEmbedFeatures});
    time_position_features<T>(t, z_norm, feat.data());
    Tensor<T> out = net_.forward(in, &feat);
    return add_prior(gather_targets(out.outer(0), indicators, noisy_target.shape()), noisy_target, t);
  }

  // Conditional and null-condition predictions in one batched pass.
  std::pair<Tensor<T>, Tensor<T>> predict_pair(const Tensor<T>& noisy_target, const Tensor<T>& condition,
                                               std::span<const std::uint8_t> indicators, double z_norm, int t) {
    validate_window(noisy_target, condition, indicators);
    const int m = cfg_.m, h = noisy_target.dim(1), w = noisy_target.dim(2);
    Tensor<T> in({2, 3 * m, h, w});
    pack_window(noisy_target, condition, indicators, false, in.data());
    pack_window(noisy_target, condition, indicators, true, in.data() + in.stride0());
    Tensor<T> feat({2, kMcDpmEmbedFeatures});
    time_position_features<T>(t, z_norm, feat.data());
    time_position_features<T>(t, z_norm, feat.data() + kMcDpmEmbedFeatures);
    Tensor<T> out = net_.forward(in, &feat);
    return {add_prior(gather_targets(out.outer(0), indicators, noisy_target.shape()), noisy_target, t),
            add_prior(gather_targets(out.outer(1), indicators, noisy_target.shape()), noisy_target, t)};
  }

  // Diffuses each example's target at the given timesteps/noise and packs the batch.
  PackedBatch<T> pack_batch(std::span<const ConditionedExample<T>> batch, std::span<const int> timesteps,
                            std::span<const Tensor<T>> noises, const DiffusionSchedule& sched) const {
    if (batch.empty()) throw std::invalid_argument("mcdpm: empty batch");
    const int m = cfg_.m, h = batch[0].target.dim(1), w = batch[0].target.dim(2);
    const int b = static_cast<int>(batch.size());
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    PackedBatch<T> pb{Tensor<T>({b, 3 * m, h, w}), Tensor<T>({b, kMcDpmEmbedFeatures}), Tensor<T>({b, m, h, w}), {}, {}};
    pb.weight.assign(pb.noise.size(), T{0});
    if (has_noise_prior()) {
      if (sched.steps() + 1 != static_cast<int>(prior_gain_.size())) throw std::invalid_argument("mcdpm: noise prior built for a different schedule");
      pb.prior = Tensor<T>({b, m, h, w});
    }
    for (int i = 0; i < b; ++i) {
      const auto& ex = batch[i];
      if (ex.window() != m || ex.target.dim(1) != h || ex.target.dim(2) != w)
        throw std::invalid_argument("mcdpm: heterogeneous shapes in batch");
      validate_window(ex.target, ex.condition, ex.indicators);
      const Tensor<T> xt = q_sample(ex.target, timesteps[i], noises[i], sched);
      pack_window(xt, ex.condition, ex.indicators, false, pb.inputs.data() + i * pb.inputs.stride0());
      time_position_features<T>(timesteps[i], ex.z_norm, pb.features.data() + i * kMcDpmEmbedFeatures);
      int ti = 0;
      for (int slot = 0; slot < m; ++slot) {
        if (ex.indicators[slot]) continue;
        const std::size_t off = (static_cast<std::size_t>(i) * m + slot) * plane;
        std::copy_n(noises[i].data() + ti * plane, plane, pb.noise.data() + off);
        std::fill_n(pb.weight.data() + off, plane, T{1});
        if (has_noise_prior()) {
          const T g = static_cast<T>(prior_gain_[timesteps[i]]);
          for (std::size_t k = 0; k < plane; ++k) pb.prior[off + k] = g * xt[ti * plane + k];
        }
        ++ti;
      }
    }
    return pb;
  }

  // Masked noise-prediction MSE; accumulates parameter gradients when requested.
  double loss(const PackedBatch<T>& pb, bool accumulate_grad) {
    Tensor<T> pred = net_.forward(pb.inputs, &pb.features);
    if (!pb.prior.empty()) nn::add_inplace(pred, pb.prior);
    Tensor<T> grad;
    const double l = nn::masked_mse<T>(pred, pb.noise, pb.weight, accumulate_grad ? &grad : nullptr);
    if (accumulate_grad) net_.backward(grad);
    return l;
  }

 private:
  void validate_window(const Tensor<T>& target, const Tensor<T>& condition, std::span<const std::uint8_t> indicators) const {
    const int m = cfg_.m;
    if (static_cast<int>(indicators.size()) != m) throw std::invalid_argument("mcdpm: indicator length must equal m");
    const int c = static_cast<int>(std::count(indicators.begin(), indicators.end(), std::uint8_t{1}));
    if (target.rank() != 3 || condition.rank() != 3) throw std::invalid_argument("mcdpm: slices must be {count, H, W}");
    if (target.dim(0) + condition.dim(0) != m || condition.dim(0) != c)
      throw std::invalid_argument("mcdpm: target/condition slice counts inconsistent with indicators");
    if (c > 0 && (condition.dim(1) != target.dim(1) || condition.dim(2) != target.dim(2)))
      throw std::invalid_argument("mcdpm: condition and target slice shapes differ");
  }

  static Tensor<T> gather_targets(std::span<const T> out, std::span<const std::uint8_t> indicators, const std::vector<int>& shape) {
    Tensor<T> res(shape);
    const std::size_t plane = static_cast<std::size_t>(shape[1]) * shape[2];
    int ti = 0;
    for (std::size_t slot = 0; slot < indicators.size(); ++slot) {
      if (indicators[slot]) continue;
      std::copy_n(out.data() + slot * plane, plane, res.data() + ti * plane);
      ++ti;
    }
    return res;
  }

  Tensor<T> add_prior(Tensor<T> eps, const Tensor<T>& x_t, int t) const {
    if (!has_noise_prior()) return eps;
    const T g = static_cast<T>(prior_gain_.at(static_cast<std::size_t>(t)));
    for (std::size_t i = 0; i < eps.size(); ++i) eps[i] += g * x_t[i];
    return eps;
  }

  McDpmConfig cfg_;
  Net net_;
  std::vector<double> prior_gain_;  // indexed by t; empty when disabled
};

// Draws per-example timesteps and noise, takes one optimizer step, returns the loss.
template <typename T, typename Net>
double mcdpm_train_step(McDpmModel<T, Net>& model, nn::Adam<T>& opt, std::span<const ConditionedExample<T>> batch,
                        const DiffusionSchedule& sched, Rng& rng) {
  if (batch.empty()) throw std::invalid_argument("mcdpm_train_step: empty batch");
  std::vector<int> ts;
  std::vector<Tensor<T>> noises;
  for (const auto& ex : batch) {
    ts.push_back(uniform_timestep(sched, rng));
    noises.push_back(randn<T>(ex.target.shape(), rng));
  }
  const auto pb = model.pack_batch(batch, ts, noises, sched);
  const auto params = model.parameters();
  nn::zero_grad(params);
  const double l = model.loss(pb, true);
  opt.step();
  return l;
}

// Draws a training batch: each example gets a mode from probs and a random window.
template <typename T>
std::vector<ConditionedExample<T>> draw_training_batch(std::span<const ImageVolume> encoded, int m, int n,
                                                       const ModeProbabilities& probs, int batch_size, Rng& rng) {
  if (encoded.empty()) throw std::invalid_argument("draw_training_batch: no volumes");
  std::vector<ConditionedExample<T>> out;
  out.reserve(static_cast<std::size_t>(batch_size));
  for (int i = 0; i < batch_size; ++i) {
    const auto& vol = encoded[std::uniform_int_distribution<std::size_t>(0, encoded.size() - 1)(rng)];
    const ConditionMode mode = sample_condition_mode(probs, rng);
    out.push_back(assemble_training_example<T>(vol, m, n, mode, rng));
  }
  return out;
}

// Fixed windows, timesteps and noise for tracking the training loss without
// the variance of per-step sampling.
template <typename T>
struct ProbeSet {
  std::vector<ConditionedExample<T>> examples;
  std::vector<int> timesteps;
  std::vector<Tensor<T>> noises;
};

// Timesteps are evenly spaced over [1, T]; volumes, modes and windows come from rng.
template <typename T>
ProbeSet<T> make_probe_set(std::span<const ImageVolume> encoded, int m, int n, const ModeProbabilities& probs, int count,
                           const DiffusionSchedule& sched, Rng& rng) {
  if (count < 1) throw std::invalid_argument("make_probe_set: count must be >= 1");
  ProbeSet<T> p;
  p.examples = draw_training_batch<T>(encoded, m, n, probs, count, rng);
  for (int i = 0; i < count; ++i) {
    p.timesteps.push_back(count == 1 ? sched.steps() : 1 + static_cast<int>(std::lround(static_cast<double>(i) * (sched.steps() - 1) / (count - 1))));
    p.noises.push_back(randn<T>(p.examples[i].target.shape(), rng));
  }
  return p;
}

// Masked noise-prediction MSE over the whole probe set, evaluated in chunks.
template <typename T, typename Net>
double probe_loss(McDpmModel<T, Net>& model, const ProbeSet<T>& probe, const DiffusionSchedule& sched, int chunk) {
  if (chunk < 1) throw std::invalid_argument("probe_loss: chunk must be >= 1");
  const std::size_t total = probe.examples.size();
  double sum = 0.0, weight = 0.0;
  for (std::size_t i = 0; i < total; i += static_cast<std::size_t>(chunk)) {
    const std::size_t k = std::min<std::size_t>(chunk, total - i);
    const auto pb = model.pack_batch(std::span(probe.examples).subspan(i, k), std::span(probe.timesteps).subspan(i, k),
                                     std::span(probe.noises).subspan(i, k), sched);
    const double w = static_cast<double>(std::count(pb.weight.begin(), pb.weight.end(), T{1}));
    sum += model.loss(pb, false) * w;
    weight += w;
  }
  return sum / weight;
}

// eps_uncond + s * (eps_cond - eps_uncond)
template <typename T>
Tensor<T> cfg_combine(const Tensor<T>& eps_uncond, const Tensor<T>& eps_cond, double s) {
  require_same_shape(eps_uncond, eps_cond, "cfg_combine");
  if (!(s >= 1.0)) throw std::invalid_argument("cfg_combine: guidance scale must be >= 1");
  if (s == 1.0) return eps_cond;
  Tensor<T> out(eps_cond.shape());
  const T st = static_cast<T>(s);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = eps_uncond[i] + st * (eps_cond[i] - eps_uncond[i]);
  return out;
}

// Ancestral sampling of one subsequence given an optional condition block.
// Returns {m, H, W} for Unconditional, otherwise {m - n, H, W}, clamped to [-1, 1].
template <typename T, typename Net>
Tensor<T> sample_subsequence(McDpmModel<T, Net>& model, const Tensor<T>& condition, ConditionMode mode, double z_norm,
                             int m, int n, const DiffusionSchedule& sched, double guidance, Rng& rng) {
  const auto& cfg = model.config();
  if (cfg.m != m || cfg.n != n) throw std::invalid_argument("sample_subsequence: (m, n) differ from the model's");
  if (!(z_norm >= 0.0 && z_norm <= 1.0)) throw std::invalid_argument("sample_subsequence: z_norm must lie in [0, 1]");
  if (!(guidance >= 1.0)) throw std::invalid_argument("sample_subsequence: guidance scale must be >= 1");
  const int c = condition.rank() == 3 ? condition.dim(0) : -1;
  const int expected = mode == ConditionMode::Unconditional ? 0 : n;
  if (c != expected) throw std::invalid_argument("sample_subsequence: condition slice count must be 0 (unconditional) or n");
  const int h = condition.dim(1), w = condition.dim(2);
  const auto ind = condition_indicators(mode, m, n);
  Tensor<T> x = randn<T>({m - c, h, w}, rng);
  const Tensor<T> zeros(x.shape());
  for (int t = sched.steps(); t >= 1; --t) {
    Tensor<T> eps;
    if (guidance > 1.0 && c > 0) {
      auto [cond, null] = model.predict_pair(x, condition, ind, z_norm, t);
      eps = cfg_combine(null, cond, guidance);
    } else {
      eps = model.predict(x, condition, ind, z_norm, t);
    }
    x = reverse_step(x, eps, t, sched, t > 1 ? randn<T>(x.shape(), rng) : zeros);
  }
  return clamp(std::move(x), T{-1}, T{1});
}

}  // namespace volsynth
