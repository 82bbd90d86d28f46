#pragma once

#include <array>
#include <cstdint>
#include <string_view>

#include "volsynth/tensor.hpp"

namespace volsynth {

// D x H x W voxel grid, z-major (index = (z * H + y) * W + x).
template <typename V>
class Volume {
 public:
  Volume() = default;
  Volume(int depth, int height, int width, V fill = V{}) : d_(depth), h_(height), w_(width) {
    if (depth < 1 || height < 1 || width < 1) throw std::invalid_argument("Volume: extents must be >= 1");
    voxels_.assign(static_cast<std::size_t>(depth) * height * width, fill);
  }
  Volume(int depth, int height, int width, std::vector<V> voxels) : d_(depth), h_(height), w_(width), voxels_(std::move(voxels)) {
    if (depth < 1 || height < 1 || width < 1) throw std::invalid_argument("Volume: extents must be >= 1");
    if (voxels_.size() != static_cast<std::size_t>(depth) * height * width) throw std::invalid_argument("Volume: voxel count mismatch");
  }

  int depth() const noexcept { return d_; }
  int height() const noexcept { return h_; }
  int width() const noexcept { return w_; }
  std::array<int, 3> shape() const noexcept { return {d_, h_, w_}; }
  std::size_t size() const noexcept { return voxels_.size(); }
  std::size_t slice_size() const noexcept { return static_cast<std::size_t>(h_) * w_; }

  V& at(int z, int y, int x) { return voxels_[(static_cast<std::size_t>(z) * h_ + y) * w_ + x]; }
  const V& at(int z, int y, int x) const { return voxels_[(static_cast<std::size_t>(z) * h_ + y) * w_ + x]; }

  std::vector<V>& voxels() noexcept { return voxels_; }
  const std::vector<V>& voxels() const noexcept { return voxels_; }

  std::span<V> slice(int z) { return std::span<V>(voxels_).subspan(z * slice_size(), slice_size()); }
  std::span<const V> slice(int z) const { return std::span<const V>(voxels_).subspan(z * slice_size(), slice_size()); }

  friend bool operator==(const Volume&, const Volume&) = default;

 private:
  int d_ = 0, h_ = 0, w_ = 0;
  std::vector<V> voxels_;
};

using LabelGrid = Volume<std::uint8_t>;
using ImageVolume = Volume<float>;

// Multi-label mask: voxel labels plus the set of permitted labels (0 is background).
struct MaskVolume {
  LabelGrid voxels;
  std::vector<std::uint8_t> label_set;

  int depth() const noexcept { return voxels.depth(); }
  std::array<int, 3> shape() const noexcept { return voxels.shape(); }

  bool valid() const {
    if (voxels.size() == 0) return false;
    std::array<bool, 256> allowed{};
    for (auto l : label_set) allowed[l] = true;
    return std::all_of(voxels.voxels().begin(), voxels.voxels().end(), [&](std::uint8_t v) { return allowed[v]; });
  }

  friend bool operator==(const MaskVolume&, const MaskVolume&) = default;
};

namespace detail {
// Visits the in-bounds 6-neighbours of (z, y, x).
template <typename F>
void for_each_face_neighbour(const LabelGrid& g, int z, int y, int x, F&& f) {
  if (z > 0) f(g.at(z - 1, y, x));
  if (z + 1 < g.depth()) f(g.at(z + 1, y, x));
  if (y > 0) f(g.at(z, y - 1, x));
  if (y + 1 < g.height()) f(g.at(z, y + 1, x));
  if (x > 0) f(g.at(z, y, x - 1));
  if (x + 1 < g.width()) f(g.at(z, y, x + 1));
}
}  // namespace detail

// A voxel is isolated when none of its 6-neighbours shares its label.
inline std::size_t count_isolated_voxels(const LabelGrid& g) {
  std::size_t n = 0;
  for (int z = 0; z < g.depth(); ++z)
    for (int y = 0; y < g.height(); ++y)
      for (int x = 0; x < g.width(); ++x) {
        bool same = false;
        detail::for_each_face_neighbour(g, z, y, x, [&](std::uint8_t v) { same |= v == g.at(z, y, x); });
        n += !same;
      }
  return n;
}

// Relabels each isolated voxel to the most frequent label among its
// 6-neighbours (smallest label on ties). Decisions use the input grid only.
inline LabelGrid remove_isolated_voxels(const LabelGrid& g) {
  LabelGrid out = g;
  for (int z = 0; z < g.depth(); ++z)
    for (int y = 0; y < g.height(); ++y)
      for (int x = 0; x < g.width(); ++x) {
        std::array<int, 256> votes{};
        bool same = false, any = false;
        detail::for_each_face_neighbour(g, z, y, x, [&](std::uint8_t v) {
          ++votes[v];
          any = true;
          same |= v == g.at(z, y, x);
        });
        if (!same && any) out.at(z, y, x) = static_cast<std::uint8_t>(std::max_element(votes.begin(), votes.end()) - votes.begin());
      }
  return out;
}

inline bool image_in_range(const ImageVolume& img) {
  return std::all_of(img.voxels().begin(), img.voxels().end(),
                     [](float v) { return std::isfinite(v) && v >= -1.0f && v <= 1.0f; });
}

// Slicing axis: axial slices index depth (H x W planes), coronal slices index
// height (D x W planes), sagittal slices index width (D x H planes).
enum class View { Axial = 0, Coronal = 1, Sagittal = 2 };

inline constexpr std::array<View, 3> kAllViews{View::Axial, View::Coronal, View::Sagittal};

inline std::string_view view_name(View v) {
  switch (v) {
    case View::Axial: return "axial";
    case View::Coronal: return "coronal";
    case View::Sagittal: return "sagittal";
  }
  return "?";
}

inline View view_from_name(std::string_view s) {
  for (View v : kAllViews)
    if (view_name(v) == s) return v;
  throw std::invalid_argument("unknown view '" + std::string(s) + "'");
}

struct SliceGeometry {
  int count;   // number of slices along the view axis
  int rows;    // slice height
  int cols;    // slice width
};

template <typename V>
SliceGeometry slice_geometry(const Volume<V>& vol, View view) {
  switch (view) {
    case View::Axial: return {vol.depth(), vol.height(), vol.width()};
    case View::Coronal: return {vol.height(), vol.depth(), vol.width()};
    case View::Sagittal: return {vol.width(), vol.depth(), vol.height()};
  }
  throw std::invalid_argument("slice_geometry: bad view");
}

// Copies slice `index` along `view` into `out` (rows * cols values).
template <typename V, typename U>
void read_slice(const Volume<V>& vol, View view, int index, std::span<U> out) {
  const auto g = slice_geometry(vol, view);
  for (int r = 0; r < g.rows; ++r)
    for (int c = 0; c < g.cols; ++c) {
      V v{};
      switch (view) {
        case View::Axial: v = vol.at(index, r, c); break;
        case View::Coronal: v = vol.at(r, index, c); break;
        case View::Sagittal: v = vol.at(r, c, index); break;
      }
      out[static_cast<std::size_t>(r) * g.cols + c] = static_cast<U>(v);
    }
}

template <typename V, typename U>
void write_slice(Volume<V>& vol, View view, int index, std::span<const U> in) {
  const auto g = slice_geometry(vol, view);
  for (int r = 0; r < g.rows; ++r)
    for (int c = 0; c < g.cols; ++c) {
      const V v = static_cast<V>(in[static_cast<std::size_t>(r) * g.cols + c]);
      switch (view) {
        case View::Axial: vol.at(index, r, c) = v; break;
        case View::Coronal: vol.at(r, index, c) = v; break;
        case View::Sagittal: vol.at(r, c, index) = v; break;
      }
    }
}

// Axial slice range [z0, z0 + count) as a {count, H, W} tensor.
template <typename T, typename V>
Tensor<T> slab(const Volume<V>& vol, int z0, int count) {
  if (z0 < 0 || count < 0 || z0 + count > vol.depth()) throw std::out_of_range("slab: range outside volume");
  Tensor<T> t({count, vol.height(), vol.width()});
  const std::size_t n = vol.slice_size();
  for (int i = 0; i < count; ++i) {
    auto s = vol.slice(z0 + i);
    std::transform(s.begin(), s.end(), t.data() + i * n, [](V v) { return static_cast<T>(v); });
  }
  return t;
}

template <typename T, typename V>
Volume<V> volume_from_tensor(const Tensor<T>& t) {
  if (t.rank() != 3) throw std::invalid_argument("volume_from_tensor: expected {D, H, W}");
  std::vector<V> vox(t.size());
  std::transform(t.values().begin(), t.values().end(), vox.begin(), [](T v) { return static_cast<V>(v); });
  return Volume<V>(t.dim(0), t.dim(1), t.dim(2), std::move(vox));
}

}  // namespace volsynth
