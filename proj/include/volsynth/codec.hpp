#pragma once

#include "volsynth/volume.hpp"

namespace volsynth {

// Maps K ordered labels onto K evenly spaced values spanning [-1, 1].
// A single-label codec maps its label to -1.
class LabelCodec {
 public:
  LabelCodec() = default;

  explicit LabelCodec(std::vector<std::uint8_t> labels) : labels_(std::move(labels)) {
    if (labels_.empty()) throw std::invalid_argument("LabelCodec: need at least one label");
    std::sort(labels_.begin(), labels_.end());
    if (std::adjacent_find(labels_.begin(), labels_.end()) != labels_.end())
      throw std::invalid_argument("LabelCodec: labels must be distinct");
    index_.fill(-1);
    for (std::size_t i = 0; i < labels_.size(); ++i) index_[labels_[i]] = static_cast<int>(i);
  }

  // Codec over {0, 1, ..., count-1}.
  static LabelCodec contiguous(int count) {
    if (count < 1 || count > 256) throw std::invalid_argument("LabelCodec: label count out of range");
    std::vector<std::uint8_t> l(static_cast<std::size_t>(count));
    std::iota(l.begin(), l.end(), std::uint8_t{0});
    return LabelCodec(std::move(l));
  }

  int size() const noexcept { return static_cast<int>(labels_.size()); }
  const std::vector<std::uint8_t>& labels() const noexcept { return labels_; }
  bool contains(std::uint8_t label) const noexcept { return index_[label] >= 0; }

  double value_at(int i) const noexcept {
    const int k = size();
    return k == 1 ? -1.0 : -1.0 + 2.0 * static_cast<double>(i) / (k - 1);
  }

  float encode(std::uint8_t label) const {
    const int i = index_[label];
    if (i < 0) throw std::invalid_argument("LabelCodec: unknown label " + std::to_string(label));
    return static_cast<float>(value_at(i));
  }

  // Nearest encoded value; exact midpoints go to the smaller label.
  std::uint8_t decode(double v) const noexcept {
    const int k = size();
    if (k == 1 || !(v > -1.0)) return labels_.front();
    if (v >= 1.0) return labels_.back();
    const double pos = (v + 1.0) * (k - 1) / 2.0;
    int i = static_cast<int>(std::ceil(pos - 0.5));
    i = std::clamp(i, 0, k - 1);
    return labels_[static_cast<std::size_t>(i)];
  }

 private:
  std::vector<std::uint8_t> labels_;
  std::array<int, 256> index_{};
};

inline ImageVolume encode_labels(const MaskVolume& mask, const LabelCodec& codec) {
  ImageVolume out(mask.voxels.depth(), mask.voxels.height(), mask.voxels.width());
  auto& dst = out.voxels();
  const auto& src = mask.voxels.voxels();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = codec.encode(src[i]);
  return out;
}

template <typename T>
MaskVolume decode_labels(const Tensor<T>& encoded, const LabelCodec& codec) {
  if (encoded.rank() != 3) throw std::invalid_argument("decode_labels: expected {D, H, W}");
  LabelGrid grid(encoded.dim(0), encoded.dim(1), encoded.dim(2));
  for (std::size_t i = 0; i < encoded.size(); ++i) grid.voxels()[i] = codec.decode(static_cast<double>(encoded[i]));
  return {std::move(grid), codec.labels()};
}

inline MaskVolume decode_labels(const ImageVolume& encoded, const LabelCodec& codec) {
  LabelGrid grid(encoded.depth(), encoded.height(), encoded.width());
  for (std::size_t i = 0; i < encoded.size(); ++i) grid.voxels()[i] = codec.decode(encoded.voxels()[i]);
  return {std::move(grid), codec.labels()};
}

}  // namespace volsynth
