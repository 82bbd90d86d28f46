#pragma once

#include <numbers>
#include <optional>

#include <nlohmann/json.hpp>

#include "volsynth/volume.hpp"

namespace volsynth {

// Organ geometry as fractions of the volume extent.
struct OrganSpec {
  double depth_lo = 0.3, depth_hi = 0.5;          // centre along depth
  double half_depth_lo = 0.15, half_depth_hi = 0.22;
  double radius_lo = 0.08, radius_hi = 0.13;      // in-plane radius / min(H, W)
};

struct IntensityBand {
  double mean = 0.0;
  double std = 0.03;
};

// Label 0 is background, label 1 the body shell, labels 2.. are organs
// painted in increasing priority inside the body.
struct PhantomSpec {
  int depth = 32, height = 64, width = 64;
  int labels = 6;
  double body_radius_lo = 0.36, body_radius_hi = 0.43;
  std::vector<OrganSpec> organs;
  std::vector<IntensityBand> bands;
  double field_amplitude = 0.02;
  double deformation = 0.08;

  // Organs spread over distinct, partly overlapping depth ranges; band means
  // evenly spaced over [-0.85, 0.85].
  static PhantomSpec make(int depth, int height, int width, int labels) {
    PhantomSpec s;
    s.depth = depth;
    s.height = height;
    s.width = width;
    s.labels = labels;
    const int organs = std::max(0, labels - 2);
    for (int i = 0; i < organs; ++i) {
      OrganSpec o;
      const double c = (i + 1.0) / (organs + 1.0);
      o.depth_lo = std::clamp(c - 0.08, 0.1, 0.9);
      o.depth_hi = std::clamp(c + 0.08, 0.1, 0.9);
      s.organs.push_back(o);
    }
    for (int i = 0; i < labels; ++i) {
      const double mean = labels == 1 ? -0.85 : -0.85 + 1.7 * i / (labels - 1.0);
      s.bands.push_back({mean, 0.03});
    }
    return s;
  }

  void validate() const {
    if (depth < 1 || height < 1 || width < 1) throw std::invalid_argument("PhantomSpec: shape extents must be >= 1");
    if (labels < 1 || labels > 255) throw std::invalid_argument("PhantomSpec: labels must lie in [1, 255]");
    if (static_cast<int>(organs.size()) != std::max(0, labels - 2))
      throw std::invalid_argument("PhantomSpec: need labels - 2 organ entries");
    if (static_cast<int>(bands.size()) != labels) throw std::invalid_argument("PhantomSpec: need one intensity band per label");
    if (!(body_radius_lo > 0 && body_radius_lo <= body_radius_hi && body_radius_hi <= 0.5))
      throw std::invalid_argument("PhantomSpec: body radius range must satisfy 0 < lo <= hi <= 0.5");
    for (const auto& o : organs) {
      if (!(0 <= o.depth_lo && o.depth_lo <= o.depth_hi && o.depth_hi <= 1)) throw std::invalid_argument("PhantomSpec: organ depth range");
      if (!(0 < o.half_depth_lo && o.half_depth_lo <= o.half_depth_hi)) throw std::invalid_argument("PhantomSpec: organ half-depth range");
      if (!(0 < o.radius_lo && o.radius_lo <= o.radius_hi && o.radius_hi < 0.5)) throw std::invalid_argument("PhantomSpec: organ radius range");
    }
    for (const auto& b : bands)
      if (!(b.std >= 0 && b.mean >= -1 && b.mean <= 1)) throw std::invalid_argument("PhantomSpec: band mean in [-1,1], std >= 0");
    for (std::size_t i = 0; i < bands.size(); ++i)
      for (std::size_t j = i + 1; j < bands.size(); ++j) {
        const double pooled = std::sqrt(0.5 * (bands[i].std * bands[i].std + bands[j].std * bands[j].std));
        if (std::abs(bands[i].mean - bands[j].mean) < 3.0 * pooled)
          throw std::invalid_argument("PhantomSpec: intensity bands " + std::to_string(i) + " and " + std::to_string(j) +
                                      " are closer than 3 pooled std");
      }
    if (field_amplitude < 0 || deformation < 0 || deformation >= 0.5) throw std::invalid_argument("PhantomSpec: field/deformation out of range");
  }
};

inline void to_json(nlohmann::json& j, const PhantomSpec& s) {
  j = {{"shape", {s.depth, s.height, s.width}},
       {"labels", s.labels},
       {"body_radius", {s.body_radius_lo, s.body_radius_hi}},
       {"field_amplitude", s.field_amplitude},
       {"deformation", s.deformation}};
  auto& organs = j["organs"] = nlohmann::json::array();
  for (const auto& o : s.organs)
    organs.push_back({{"depth", {o.depth_lo, o.depth_hi}}, {"half_depth", {o.half_depth_lo, o.half_depth_hi}},
                      {"radius", {o.radius_lo, o.radius_hi}}});
  auto& bands = j["bands"] = nlohmann::json::array();
  for (const auto& b : s.bands) bands.push_back({{"mean", b.mean}, {"std", b.std}});
}

inline void from_json(const nlohmann::json& j, PhantomSpec& s) {
  const auto shape = j.value("shape", std::vector<int>{32, 64, 64});
  if (shape.size() != 3) throw std::invalid_argument("phantom.shape must have three entries");
  s = PhantomSpec::make(shape[0], shape[1], shape[2], j.value("labels", 6));
  if (j.contains("body_radius")) {
    s.body_radius_lo = j["body_radius"].at(0).get<double>();
    s.body_radius_hi = j["body_radius"].at(1).get<double>();
  }
  s.field_amplitude = j.value("field_amplitude", s.field_amplitude);
  s.deformation = j.value("deformation", s.deformation);
  if (j.contains("organs")) {
    s.organs.clear();
    for (const auto& o : j["organs"]) {
      OrganSpec os;
      os.depth_lo = o.at("depth").at(0);
      os.depth_hi = o.at("depth").at(1);
      os.half_depth_lo = o.at("half_depth").at(0);
      os.half_depth_hi = o.at("half_depth").at(1);
      os.radius_lo = o.at("radius").at(0);
      os.radius_hi = o.at("radius").at(1);
      s.organs.push_back(os);
    }
  }
  if (j.contains("bands")) {
    s.bands.clear();
    for (const auto& b : j["bands"]) s.bands.push_back({b.at("mean").get<double>(), b.at("std").get<double>()});
  }
}

struct PhantomPair {
  MaskVolume mask;
  ImageVolume image;
};

namespace detail {

// Star-shaped radius modulation with a few angular harmonics.
struct Wobble {
  std::array<double, 3> amp{}, phase{};
  double operator()(double theta) const {
    return 1.0 + amp[0] * std::sin(2 * theta + phase[0]) + amp[1] * std::sin(3 * theta + phase[1]) +
           amp[2] * std::sin(4 * theta + phase[2]);
  }
  static Wobble draw(double deformation, Rng& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Wobble w;
    for (int i = 0; i < 3; ++i) {
      w.amp[i] = deformation * u(rng) / (i + 1);
      w.phase[i] = 2 * std::numbers::pi * u(rng);
    }
    return w;
  }
};

}  // namespace detail

inline PhantomPair generate_phantom(const PhantomSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };
  const int D = spec.depth, H = spec.height, W = spec.width;
  const double extent = std::min(H, W);

  std::vector<std::uint8_t> label_set(static_cast<std::size_t>(spec.labels));
  std::iota(label_set.begin(), label_set.end(), std::uint8_t{0});
  PhantomPair out{MaskVolume{LabelGrid(D, H, W, 0), label_set}, ImageVolume(D, H, W)};
  auto& mask = out.mask.voxels;

  if (spec.labels >= 2) {
    const double cy = H / 2.0 + uni(-0.03, 0.03) * H, cx = W / 2.0 + uni(-0.03, 0.03) * W;
    const double ry = uni(spec.body_radius_lo, spec.body_radius_hi) * H;
    const double rx = uni(spec.body_radius_lo, spec.body_radius_hi) * W;
    const detail::Wobble wob = detail::Wobble::draw(spec.deformation, rng);
    const double zf = uni(0.5, 1.5), zp = uni(0.0, 2 * std::numbers::pi), za = uni(0.0, spec.deformation);
    for (int z = 0; z < D; ++z) {
      const double scale = 1.0 + za * std::sin(2 * std::numbers::pi * zf * z / D + zp);
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          const double dy = (y + 0.5 - cy) / (ry * scale), dx = (x + 0.5 - cx) / (rx * scale);
          const double r = std::hypot(dy, dx), theta = std::atan2(dy, dx);
          if (r <= wob(theta)) mask.at(z, y, x) = 1;
        }
    }
    for (std::size_t i = 0; i < spec.organs.size(); ++i) {
      const auto& o = spec.organs[i];
      const auto label = static_cast<std::uint8_t>(i + 2);
      const double cz = uni(o.depth_lo, o.depth_hi) * D;
      const double rz = uni(o.half_depth_lo, o.half_depth_hi) * D;
      const double oy = uni(o.radius_lo, o.radius_hi) * extent, ox = uni(o.radius_lo, o.radius_hi) * extent;
      const double ang = uni(0.0, 2 * std::numbers::pi), off = uni(0.0, 0.45);
      const double ccy = cy + off * std::sin(ang) * (ry - oy), ccx = cx + off * std::cos(ang) * (rx - ox);
      const detail::Wobble owob = detail::Wobble::draw(spec.deformation, rng);
      for (int z = 0; z < D; ++z) {
        const double dz = (z + 0.5 - cz) / rz;
        if (std::abs(dz) >= 1.0) continue;
        const double shrink = std::sqrt(1.0 - dz * dz);
        for (int y = 0; y < H; ++y)
          for (int x = 0; x < W; ++x) {
            if (mask.at(z, y, x) == 0) continue;
            const double dy = (y + 0.5 - ccy) / (oy * shrink), dx = (x + 0.5 - ccx) / (ox * shrink);
            if (std::hypot(dy, dx) <= owob(std::atan2(dy, dx))) mask.at(z, y, x) = label;
          }
      }
    }
  }

  // Smooth low-frequency intensity field: a sum of three random plane waves.
  std::array<std::array<double, 4>, 3> waves{};
  for (auto& w : waves) w = {uni(0.3, 1.2) / D, uni(0.3, 1.2) / H, uni(0.3, 1.2) / W, uni(0.0, 2 * std::numbers::pi)};
  std::normal_distribution<double> normal(0.0, 1.0);
  auto& img = out.image;
  for (int z = 0; z < D; ++z)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        double field = 0.0;
        for (const auto& w : waves) field += std::sin(2 * std::numbers::pi * (w[0] * z + w[1] * y + w[2] * x) + w[3]);
        const auto& band = spec.bands[mask.at(z, y, x)];
        const double v = band.mean + band.std * normal(rng) + spec.field_amplitude * field / 3.0;
        img.at(z, y, x) = static_cast<float>(std::clamp(v, -1.0, 1.0));
      }
  return out;
}

// Labels each voxel by the nearest band mean.
inline MaskVolume classify_by_band(const ImageVolume& image, const PhantomSpec& spec) {
  LabelGrid grid(image.depth(), image.height(), image.width());
  for (std::size_t i = 0; i < image.size(); ++i) {
    const double v = image.voxels()[i];
    int best = 0;
    for (int k = 1; k < static_cast<int>(spec.bands.size()); ++k)
      if (std::abs(v - spec.bands[k].mean) < std::abs(v - spec.bands[best].mean)) best = k;
    grid.voxels()[i] = static_cast<std::uint8_t>(best);
  }
  std::vector<std::uint8_t> labels(spec.bands.size());
  std::iota(labels.begin(), labels.end(), std::uint8_t{0});
  return {std::move(grid), std::move(labels)};
}

struct Dataset {
  std::vector<PhantomPair> pairs;
  std::vector<std::uint64_t> seeds;
  std::vector<int> train;
  std::vector<int> val;
};

inline std::uint64_t derived_seed(std::uint64_t master, std::uint64_t index) {
  Rng r = derive_rng(master, index, 0x9e3779b97f4a7c15ull);
  return r();
}

// Per-volume seeds are derived from the master seed; the first floor(0.8 * count)
// volumes form the training split.
inline Dataset make_dataset(int count, const PhantomSpec& spec, std::uint64_t seed) {
  if (count < 2) throw std::invalid_argument("make_dataset: count must be >= 2");
  spec.validate();
  Dataset ds;
  const int n_train = std::clamp(count * 4 / 5, 1, count - 1);
  for (int i = 0; i < count; ++i) {
    ds.seeds.push_back(derived_seed(seed, static_cast<std::uint64_t>(i)));
    ds.pairs.push_back(generate_phantom(spec, ds.seeds.back()));
    (i < n_train ? ds.train : ds.val).push_back(i);
  }
  return ds;
}

// Mean symmetric distance between a label's boundary pixels on adjacent
// slices, averaged over slice pairs where the label is present on both.
// Returns nullopt when no such pair exists.
inline std::optional<double> mean_boundary_displacement(const MaskVolume& mask, std::uint8_t label) {
  const auto& g = mask.voxels;
  const int D = g.depth(), H = g.height(), W = g.width();
  auto boundary = [&](int z) {
    std::vector<std::pair<int, int>> pts;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        if (g.at(z, y, x) != label) continue;
        const bool edge = y == 0 || x == 0 || y == H - 1 || x == W - 1 || g.at(z, y - 1, x) != label ||
                          g.at(z, y + 1, x) != label || g.at(z, y, x - 1) != label || g.at(z, y, x + 1) != label;
        if (edge) pts.emplace_back(y, x);
      }
    return pts;
  };
  auto directed = [](const auto& a, const auto& b) {
    double s = 0.0;
    for (const auto& [ay, ax] : a) {
      double best = 1e300;
      for (const auto& [by, bx] : b) best = std::min(best, std::hypot(double(ay - by), double(ax - bx)));
      s += best;
    }
    return s / a.size();
  };
  double total = 0.0;
  int pairs = 0;
  auto prev = boundary(0);
  for (int z = 1; z < D; ++z) {
    auto cur = boundary(z);
    if (!prev.empty() && !cur.empty()) {
      total += 0.5 * (directed(prev, cur) + directed(cur, prev));
      ++pairs;
    }
    prev = std::move(cur);
  }
  if (pairs == 0) return std::nullopt;
  return total / pairs;
}

}  // namespace volsynth
