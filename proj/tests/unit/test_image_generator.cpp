#include <gtest/gtest.h>

#include "volsynth/image_generator.hpp"
#include "volsynth/phantom.hpp"

using namespace volsynth;

namespace {

const LabelCodec kCodec = LabelCodec::contiguous(4);

PhantomPair small_pair(std::uint64_t seed) { return generate_phantom(PhantomSpec::make(12, 32, 32, 4), seed); }

}  // namespace

TEST(SeqGen, OverfitsOnePairAndReconstructsIt) {
  const auto p = small_pair(1);
  const auto data = make_seqgen_data(std::span(&p.mask, 1), std::span(&p.image, 1), kCodec);
  std::vector<double> trace;
  Rng rng(3);
  auto model = train_seq_generator(data, SeqGenConfig{16, 2000, 4, 2e-3}, rng, &trace);
  double tail = 0;
  for (std::size_t i = trace.size() - 100; i < trace.size(); ++i) tail += trace[i] / 100;
  EXPECT_LT(tail, 0.05);
  const auto gen = generate_image_volume(p.mask, model, kCodec);
  double mae = 0;
  for (std::size_t i = 0; i < gen.size(); ++i) mae += std::abs(gen.voxels()[i] - p.image.voxels()[i]) / gen.size();
  EXPECT_LT(mae, 0.1);
}

TEST(SeqGen, ConstantTargetIsLearnedExactly) {
  const auto p = small_pair(2);
  const ImageVolume flat(p.image.depth(), p.image.height(), p.image.width(), 0.25f);
  const auto data = make_seqgen_data(std::span(&p.mask, 1), std::span(&flat, 1), kCodec);
  std::vector<double> trace;
  Rng rng(4);
  train_seq_generator(data, SeqGenConfig{8, 800, 4, 2e-3}, rng, &trace);
  EXPECT_LT(trace.back(), 0.01);
}

TEST(SeqGen, SameSeedGivesIdenticalLossTrace) {
  const auto p = small_pair(3);
  const auto data = make_seqgen_data(std::span(&p.mask, 1), std::span(&p.image, 1), kCodec);
  std::vector<double> a, b;
  Rng r1(5), r2(5);
  train_seq_generator(data, SeqGenConfig{8, 30, 2, 2e-3}, r1, &a);
  train_seq_generator(data, SeqGenConfig{8, 30, 2, 2e-3}, r2, &b);
  EXPECT_EQ(a, b);
}

TEST(SeqGen, GenerationIsCausalDeterministicAndInRange) {
  SeqGenModel model(8, 7);
  const auto p = small_pair(4);
  const auto a = generate_image_volume(p.mask, model, kCodec);
  EXPECT_EQ(a, generate_image_volume(p.mask, model, kCodec));
  EXPECT_TRUE(image_in_range(a));
  auto changed = p.mask;
  for (auto& v : changed.voxels.slice(8)) v = 3;
  const auto b = generate_image_volume(changed, model, kCodec);
  for (int z = 0; z < 8; ++z)
    for (std::size_t i = 0; i < a.slice_size(); ++i) ASSERT_EQ(a.slice(z)[i], b.slice(z)[i]) << "slice " << z;
  bool later_differs = false;
  for (std::size_t i = 0; i < a.slice_size(); ++i) later_differs |= a.slice(8)[i] != b.slice(8)[i];
  EXPECT_TRUE(later_differs);
}

TEST(SeqGen, SingleSliceVolumeAndUnknownLabel) {
  SeqGenModel model(8, 1);
  MaskVolume one{LabelGrid(1, 16, 16, 2), kCodec.labels()};
  const auto img = generate_image_volume(one, model, kCodec);
  EXPECT_EQ(img.shape(), (std::array<int, 3>{1, 16, 16}));
  MaskVolume bad{LabelGrid(2, 4, 4, 9), {9}};
  EXPECT_THROW(generate_image_volume(bad, model, kCodec), std::invalid_argument);
}

TEST(SeqGen, ContinuityOnRepeatedMaskSlices) {
  // Train on a few phantoms, then feed a mask whose slices are all equal.
  const auto spec = PhantomSpec::make(12, 32, 32, 4);
  std::vector<MaskVolume> masks;
  std::vector<ImageVolume> images;
  for (int i = 0; i < 3; ++i) {
    auto p = generate_phantom(spec, 10 + i);
    masks.push_back(p.mask);
    images.push_back(p.image);
  }
  double inter = 0;
  int pairs = 0;
  for (const auto& img : images)
    for (int z = 1; z < img.depth(); ++z, ++pairs) {
      double s = 0;
      for (std::size_t i = 0; i < img.slice_size(); ++i) s += std::abs(img.slice(z)[i] - img.slice(z - 1)[i]);
      inter += s / img.slice_size();
    }
  inter /= pairs;
  Rng rng(6);
  auto model = train_seq_generator(make_seqgen_data(masks, images, kCodec), SeqGenConfig{12, 1000, 4, 2e-3}, rng);
  MaskVolume rep{LabelGrid(12, 32, 32), kCodec.labels()};
  for (int z = 0; z < 12; ++z) std::copy_n(masks[0].voxels.slice(6).data(), rep.voxels.slice_size(), rep.voxels.slice(z).data());
  const auto gen = generate_image_volume(rep, model, kCodec);
  double gdiff = 0;
  for (int z = 1; z < 12; ++z) {
    double s = 0;
    for (std::size_t i = 0; i < gen.slice_size(); ++i) s += std::abs(gen.slice(z)[i] - gen.slice(z - 1)[i]);
    gdiff += s / gen.slice_size() / 11;
  }
  EXPECT_LT(gdiff, inter);
}
