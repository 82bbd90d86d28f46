#pragma once

#include <Eigen/Dense>

#include <iomanip>
#include <map>
#include <optional>

#include <nlohmann/json.hpp>

#include "volsynth/io.hpp"
#include "volsynth/nn.hpp"
#include "volsynth/phantom.hpp"
#include "volsynth/unet.hpp"

namespace volsynth {

// ---------------------------------------------------------------------------
// Fidelity proxy: Frechet distance between Gaussian fits of handcrafted
// per-slice features, computed per view.

inline constexpr int kIntensityBins = 16;
inline constexpr int kGradientBins = 8;
inline constexpr int kBlockGrid = 8;
inline constexpr int kSliceFeatures = kIntensityBins + kGradientBins + kBlockGrid * kBlockGrid;
inline constexpr double kFrechetRidge = 1e-6;

// Intensity histogram over [-1, 1], gradient-magnitude histogram over [0, 1]
// (last bin open), and 8 x 8 block means.
inline std::array<double, kSliceFeatures> slice_features(std::span<const float> s, int rows, int cols) {
  std::array<double, kSliceFeatures> f{};
  const double n = static_cast<double>(rows) * cols;
  for (float v : s) {
    const int b = std::clamp(static_cast<int>((v + 1.0) / 2.0 * kIntensityBins), 0, kIntensityBins - 1);
    f[b] += 1.0 / n;
  }
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      const double gx = (s[r * cols + std::min(c + 1, cols - 1)] - s[r * cols + std::max(c - 1, 0)]) / 2.0;
      const double gy = (s[std::min(r + 1, rows - 1) * cols + c] - s[std::max(r - 1, 0) * cols + c]) / 2.0;
      const int b = std::clamp(static_cast<int>(std::hypot(gx, gy) * kGradientBins), 0, kGradientBins - 1);
      f[kIntensityBins + b] += 1.0 / n;
    }
  std::array<double, kBlockGrid * kBlockGrid> counts{};
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      const int br = r * kBlockGrid / rows, bc = c * kBlockGrid / cols;
      f[kIntensityBins + kGradientBins + br * kBlockGrid + bc] += s[r * cols + c];
      counts[br * kBlockGrid + bc] += 1.0;
    }
  for (int i = 0; i < kBlockGrid * kBlockGrid; ++i)
    if (counts[i] > 0) f[kIntensityBins + kGradientBins + i] /= counts[i];
  return f;
}

// One row per slice along `view`, across all volumes.
inline Eigen::MatrixXd feature_cloud(std::span<const ImageVolume> vols, View view) {
  std::size_t rows = 0;
  for (const auto& v : vols) rows += static_cast<std::size_t>(slice_geometry(v, view).count);
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), kSliceFeatures);
  Eigen::Index r = 0;
  std::vector<float> buf;
  for (const auto& v : vols) {
    const auto g = slice_geometry(v, view);
    buf.resize(static_cast<std::size_t>(g.rows) * g.cols);
    for (int s = 0; s < g.count; ++s, ++r) {
      read_slice(v, view, s, std::span<float>(buf));
      const auto f = slice_features(buf, g.rows, g.cols);
      for (int k = 0; k < kSliceFeatures; ++k) m(r, k) = f[k];
    }
  }
  return m;
}

namespace detail {

inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& s) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (s + s.transpose()));
  const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace detail

// Frechet distance between Gaussian fits (population covariance, ridge on
// the diagonal) of two feature clouds with matching column counts.
inline double frechet_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double ridge = kFrechetRidge) {
  if (a.cols() != b.cols() || a.rows() < 1 || b.rows() < 1) throw std::invalid_argument("frechet_distance: incompatible clouds");
  const Eigen::VectorXd mu_a = a.colwise().mean(), mu_b = b.colwise().mean();
  const Eigen::MatrixXd ca = a.rowwise() - mu_a.transpose(), cb = b.rowwise() - mu_b.transpose();
  const Eigen::Index d = a.cols();
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(d, d);
  const Eigen::MatrixXd sa = (ca.transpose() * ca) / static_cast<double>(a.rows()) + ridge * id;
  const Eigen::MatrixXd sb = (cb.transpose() * cb) / static_cast<double>(b.rows()) + ridge * id;
  const Eigen::MatrixXd ra = detail::psd_sqrt(sa);
  const Eigen::MatrixXd cross = detail::psd_sqrt(ra * sb * ra);
  const double fd = (mu_a - mu_b).squaredNorm() + sa.trace() + sb.trace() - 2.0 * cross.trace();
  return std::max(0.0, fd);
}

struct FrechetScores {
  std::array<double, 3> per_view{};  // indexed by View
  double mean = 0.0;
};

inline FrechetScores frechet_proxy(std::span<const ImageVolume> real, std::span<const ImageVolume> synth) {
  if (real.size() < 2 || synth.size() < 2) throw std::invalid_argument("frechet_proxy: each set needs at least two volumes");
  FrechetScores out;
  for (View v : kAllViews) {
    out.per_view[static_cast<std::size_t>(v)] = frechet_distance(feature_cloud(real, v), feature_cloud(synth, v));
  }
  out.mean = (out.per_view[0] + out.per_view[1] + out.per_view[2]) / 3.0;
  return out;
}

// Mean over all unordered pairs of the mean absolute voxel difference.
template <typename V>
double diversity_score(std::span<const Volume<V>> vols) {
  if (vols.size() < 2) throw std::invalid_argument("diversity_score: need at least two volumes");
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < vols.size(); ++i)
    for (std::size_t j = i + 1; j < vols.size(); ++j) {
      if (vols[i].shape() != vols[j].shape()) throw std::invalid_argument("diversity_score: shape mismatch");
      double s = 0.0;
      const auto& a = vols[i].voxels();
      const auto& b = vols[j].voxels();
      for (std::size_t k = 0; k < a.size(); ++k) s += std::abs(static_cast<double>(a[k]) - static_cast<double>(b[k]));
      total += s / static_cast<double>(a.size());
      ++pairs;
    }
  return total / static_cast<double>(pairs);
}

// ---------------------------------------------------------------------------
// Overlap scores

// 2|A n B| / (|A| + |B|); nullopt when the label is absent from both.
inline std::optional<double> dice(const LabelGrid& a, const LabelGrid& b, std::uint8_t label) {
  if (a.shape() != b.shape()) throw std::invalid_argument("dice: shape mismatch");
  std::size_t inter = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a.voxels()[i] == label, y = b.voxels()[i] == label;
    na += x;
    nb += y;
    inter += x && y;
  }
  if (na + nb == 0) return std::nullopt;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

using LabelDice = std::vector<std::optional<double>>;  // indexed by label

inline LabelDice per_label_dice(const LabelGrid& pred, const LabelGrid& truth, int labels) {
  LabelDice out;
  for (int l = 0; l < labels; ++l) out.push_back(dice(pred, truth, static_cast<std::uint8_t>(l)));
  return out;
}

// Mean over present labels >= first_label.
inline std::optional<double> mean_dice(const LabelDice& d, int first_label = 1) {
  double s = 0.0;
  int n = 0;
  for (std::size_t l = static_cast<std::size_t>(first_label); l < d.size(); ++l)
    if (d[l]) { s += *d[l]; ++n; }
  if (n == 0) return std::nullopt;
  return s / n;
}

// Classifies the image with the phantom's intensity bands and scores the
// result against the paired mask.
inline LabelDice alignment_dice(const ImageVolume& image, const MaskVolume& mask, const PhantomSpec& spec) {
  if (image.shape() != mask.shape()) throw std::invalid_argument("alignment_dice: image and mask shapes differ");
  const MaskVolume pred = classify_by_band(image, spec);
  return per_label_dice(pred.voxels, mask.voxels, spec.labels);
}

// ---------------------------------------------------------------------------
// Downstream segmentation study

enum class Strategy { RealOnly = 0, SynthOnly = 1, RealPlusSynth = 2, SynthPretrainRealFinetune = 3 };

inline constexpr std::array<Strategy, 4> kAllStrategies{Strategy::RealOnly, Strategy::SynthOnly, Strategy::RealPlusSynth,
                                                        Strategy::SynthPretrainRealFinetune};

inline std::string_view strategy_name(Strategy s) {
  switch (s) {
    case Strategy::RealOnly: return "real-only";
    case Strategy::SynthOnly: return "synth-only";
    case Strategy::RealPlusSynth: return "real+synth";
    case Strategy::SynthPretrainRealFinetune: return "synth-pretrain/real-finetune";
  }
  return "?";
}

struct SegmenterBudget {
  int steps = 1000;
  int batch = 4;
  int channels = 8;
  double lr = 3e-3;
};

// Slicewise 2-D segmenter: encoder-decoder over single axial slices.
class Segmenter2d {
 public:
  Segmenter2d(int labels, const SegmenterBudget& b, std::uint64_t seed)
      : labels_(labels), net_(UNetConfig{1, labels, b.channels, 0, 64}, seed),
        opt_(net_.parameters(), {.lr = b.lr}) {}

  double train_step(std::span<const PhantomPair* const> data, int batch, Rng& rng) {
    const auto& first = data.front()->image;
    const int h = first.height(), w = first.width();
    const std::size_t plane = first.slice_size();
    Tensor<float> in({batch, 1, h, w});
    std::vector<std::uint8_t> labels(static_cast<std::size_t>(batch) * plane);
    for (int b = 0; b < batch; ++b) {
      const auto* p = data[std::uniform_int_distribution<std::size_t>(0, data.size() - 1)(rng)];
      const int z = std::uniform_int_distribution<int>(0, p->image.depth() - 1)(rng);
      std::copy_n(p->image.slice(z).data(), plane, in.data() + b * plane);
      std::copy_n(p->mask.voxels.slice(z).data(), plane, labels.data() + b * plane);
    }
    nn::zero_grad(net_.parameters());
    Tensor<float> logits = net_.forward(in, nullptr);
    Tensor<float> grad;
    const double loss = nn::softmax_cross_entropy<float>(logits, labels, &grad);
    net_.backward(grad);
    opt_.step();
    return loss;
  }

  LabelGrid predict(const ImageVolume& image) {
    const int d = image.depth(), h = image.height(), w = image.width();
    const std::size_t plane = image.slice_size();
    LabelGrid out(d, h, w);
    for (int z = 0; z < d; ++z) {
      Tensor<float> in({1, 1, h, w});
      std::copy_n(image.slice(z).data(), plane, in.data());
      const Tensor<float> logits = net_.forward(in, nullptr);
      for (std::size_t i = 0; i < plane; ++i) {
        int best = 0;
        for (int k = 1; k < labels_; ++k)
          if (logits[k * plane + i] > logits[best * plane + i]) best = k;
        out.slice(z)[i] = static_cast<std::uint8_t>(best);
      }
    }
    return out;
  }

 private:
  int labels_;
  SliceUNet<float> net_;
  nn::Adam<float> opt_;
};

// Volumetric segmenter: three 3x3x3 convolutions trained on random crops.
class Segmenter3d {
 public:
  static constexpr int kCropDepth = 8, kCropSize = 24;

  Segmenter3d(int labels, const SegmenterBudget& b, std::uint64_t seed)
      : labels_(labels), c1_(1, b.channels, "seg3d.c1"), c2_(b.channels, b.channels, "seg3d.c2"), c3_(b.channels, labels, "seg3d.c3") {
    Rng rng(seed);
    c1_.init(rng);
    c2_.init(rng);
    c3_.init(rng);
    nn::ParamList<float> ps;
    c1_.collect(ps);
    c2_.collect(ps);
    c3_.collect(ps);
    params_ = ps;
    opt_ = nn::Adam<float>(ps, {.lr = b.lr});
  }

  double train_step(std::span<const PhantomPair* const> data, int batch, Rng& rng) {
    const auto& first = data.front()->image;
    const int cd = std::min(kCropDepth, first.depth()), ch = std::min(kCropSize, first.height()), cw = std::min(kCropSize, first.width());
    Tensor<float> in({batch, 1, cd, ch, cw});
    std::vector<std::uint8_t> labels(static_cast<std::size_t>(batch) * cd * ch * cw);
    for (int b = 0; b < batch; ++b) {
      const auto* p = data[std::uniform_int_distribution<std::size_t>(0, data.size() - 1)(rng)];
      const int z0 = std::uniform_int_distribution<int>(0, p->image.depth() - cd)(rng);
      const int y0 = std::uniform_int_distribution<int>(0, p->image.height() - ch)(rng);
      const int x0 = std::uniform_int_distribution<int>(0, p->image.width() - cw)(rng);
      std::size_t k = static_cast<std::size_t>(b) * cd * ch * cw;
      for (int z = 0; z < cd; ++z)
        for (int y = 0; y < ch; ++y)
          for (int x = 0; x < cw; ++x, ++k) {
            in[k] = p->image.at(z0 + z, y0 + y, x0 + x);
            labels[k] = p->mask.voxels.at(z0 + z, y0 + y, x0 + x);
          }
    }
    nn::zero_grad(params_);
    Tensor<float> logits = forward(in);
    Tensor<float> grad;
    const double loss = nn::softmax_cross_entropy<float>(logits, labels, &grad);
    c1_.backward(a1_.backward(c2_.backward(a2_.backward(c3_.backward(grad)))));
    opt_.step();
    return loss;
  }

  LabelGrid predict(const ImageVolume& image) {
    const int d = image.depth(), h = image.height(), w = image.width();
    Tensor<float> in({1, 1, d, h, w}, std::vector<float>(image.voxels()));
    const Tensor<float> logits = forward(in);
    const std::size_t vol = image.size();
    LabelGrid out(d, h, w);
    for (std::size_t i = 0; i < vol; ++i) {
      int best = 0;
      for (int k = 1; k < labels_; ++k)
        if (logits[k * vol + i] > logits[best * vol + i]) best = k;
      out.voxels()[i] = static_cast<std::uint8_t>(best);
    }
    return out;
  }

 private:
  Tensor<float> forward(const Tensor<float>& x) { return c3_.forward(a2_.forward(c2_.forward(a1_.forward(c1_.forward(x))))); }

  int labels_;
  nn::Conv3d<float> c1_, c2_, c3_;
  nn::SiLU<float> a1_, a2_;
  nn::ParamList<float> params_;
  nn::Adam<float> opt_;
};

struct StudyConfig {
  int labels = 6;
  SegmenterBudget budget2d{};
  SegmenterBudget budget3d{};
  std::uint64_t seed = 0;
};

struct DiceRow {
  std::string segmenter;  // "unet2d" / "conv3d"
  Strategy strategy;
  LabelDice per_label;
  std::optional<double> mean_foreground;
};

struct DiceTable {
  int labels = 0;
  std::vector<DiceRow> rows;
};

namespace detail {

template <typename Seg>
DiceRow run_strategy(const char* name, Strategy s, std::span<const PhantomPair> real, std::span<const PhantomPair> synth,
                     std::span<const PhantomPair> test, const SegmenterBudget& budget, int labels, std::uint64_t seed) {
  Seg seg(labels, budget, seed);
  std::vector<const PhantomPair*> pool;
  auto add = [&](std::span<const PhantomPair> src) { for (const auto& p : src) pool.push_back(&p); };
  auto train = [&](std::uint64_t stream) {
    if (pool.empty()) throw std::invalid_argument("downstream_study: empty training pool for " + std::string(strategy_name(s)));
    for (int i = 0; i < budget.steps; ++i) {
      Rng r = derive_rng(seed, stream, static_cast<std::uint64_t>(i));
      seg.train_step(pool, budget.batch, r);
    }
  };
  switch (s) {
    case Strategy::RealOnly: add(real); train(1); break;
    case Strategy::SynthOnly: add(synth); train(1); break;
    case Strategy::RealPlusSynth: add(real); add(synth); train(1); break;
    case Strategy::SynthPretrainRealFinetune:
      add(synth);
      train(1);
      pool.clear();
      add(real);
      train(2);
      break;
  }
  LabelDice sum(static_cast<std::size_t>(labels));
  std::vector<int> counts(static_cast<std::size_t>(labels), 0);
  for (const auto& p : test) {
    const auto d = per_label_dice(seg.predict(p.image), p.mask.voxels, labels);
    for (int l = 0; l < labels; ++l)
      if (d[l]) { sum[l] = sum[l].value_or(0.0) + *d[l]; ++counts[l]; }
  }
  for (int l = 0; l < labels; ++l)
    if (counts[l]) sum[l] = *sum[l] / counts[l];
  return DiceRow{name, s, sum, mean_dice(sum, 2 <= labels - 1 ? 2 : 1)};
}

}  // namespace detail

// Trains both toy segmenters under each strategy (per-strategy seeds derived
// from cfg.seed) and scores them on the test set. mean_foreground averages
// organ labels (>= 2) when present, else all non-background labels.
inline DiceTable downstream_study(std::span<const PhantomPair> real, std::span<const PhantomPair> synth,
                                  std::span<const PhantomPair> test, std::span<const Strategy> strategies, const StudyConfig& cfg) {
  if (test.empty()) throw std::invalid_argument("downstream_study: empty test set");
  std::map<std::string, std::string> train_sums;
  for (auto set : {real, synth})
    for (const auto& p : set) train_sums[sha256_hex(p.image.voxels())] = "";
  for (const auto& p : test)
    if (train_sums.contains(sha256_hex(p.image.voxels())))
      throw std::invalid_argument("downstream_study: test volume also appears in a training set");
  DiceTable table;
  table.labels = cfg.labels;
  for (Strategy s : strategies) {
    const std::uint64_t seed = derived_seed(cfg.seed, static_cast<std::uint64_t>(s));
    table.rows.push_back(detail::run_strategy<Segmenter2d>("unet2d", s, real, synth, test, cfg.budget2d, cfg.labels, seed));
    table.rows.push_back(detail::run_strategy<Segmenter3d>("conv3d", s, real, synth, test, cfg.budget3d, cfg.labels, seed));
  }
  return table;
}

// ---------------------------------------------------------------------------
// Report

struct EvalReport {
  std::optional<FrechetScores> fidelity;
  std::optional<double> diversity;
  LabelDice alignment;  // mean over synthetic pairs, per label
  std::optional<DiceTable> downstream;
};

inline nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j;
  if (r.fidelity) {
    j["fidelity"] = {{"axial", r.fidelity->per_view[0]}, {"coronal", r.fidelity->per_view[1]},
                     {"sagittal", r.fidelity->per_view[2]}, {"mean", r.fidelity->mean}};
  }
  if (r.diversity) j["diversity"] = *r.diversity;
  auto& al = j["alignment"] = nlohmann::json::array();
  for (const auto& d : r.alignment) al.push_back(optional_json(d));
  j["alignment_mean_foreground"] = optional_json(mean_dice(r.alignment));
  if (r.downstream) {
    auto& rows = j["downstream"]["rows"] = nlohmann::json::array();
    j["downstream"]["labels"] = r.downstream->labels;
    for (const auto& row : r.downstream->rows) {
      nlohmann::json pl = nlohmann::json::array();
      for (const auto& d : row.per_label) pl.push_back(optional_json(d));
      rows.push_back({{"segmenter", row.segmenter}, {"strategy", strategy_name(row.strategy)}, {"dice", pl},
                      {"mean_foreground", optional_json(row.mean_foreground)}});
    }
  }
  return j;
}

inline std::string to_text(const EvalReport& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  auto cell = [&](const std::optional<double>& v) {
    std::ostringstream c;
    c << std::fixed << std::setprecision(4);
    if (v) c << *v; else c << "-";
    return c.str();
  };
  if (r.fidelity) {
    os << "Fidelity (Frechet proxy, lower is better)\n";
    os << std::left << std::setw(12) << "axial" << std::setw(12) << "coronal" << std::setw(12) << "sagittal" << "mean\n";
    os << std::setw(12) << r.fidelity->per_view[0] << std::setw(12) << r.fidelity->per_view[1] << std::setw(12)
       << r.fidelity->per_view[2] << r.fidelity->mean << "\n\n";
  }
  if (r.diversity) os << "Diversity (mean pairwise |dx|): " << *r.diversity << "\n\n";
  if (!r.alignment.empty()) {
    os << "Alignment Dice per label\n";
    for (std::size_t l = 0; l < r.alignment.size(); ++l) os << std::left << std::setw(9) << ("L" + std::to_string(l));
    os << "mean(fg)\n";
    for (const auto& d : r.alignment) os << std::setw(9) << cell(d);
    os << cell(mean_dice(r.alignment)) << "\n\n";
  }
  if (r.downstream) {
    os << "Downstream segmentation Dice\n";
    os << std::left << std::setw(10) << "model" << std::setw(30) << "strategy";
    for (int l = 0; l < r.downstream->labels; ++l) os << std::setw(9) << ("L" + std::to_string(l));
    os << "mean\n";
    for (const auto& row : r.downstream->rows) {
      os << std::setw(10) << row.segmenter << std::setw(30) << strategy_name(row.strategy);
      for (const auto& d : row.per_label) os << std::setw(9) << cell(d);
      os << cell(row.mean_foreground) << "\n";
    }
  }
  return os.str();
}

}  // namespace volsynth
