#include <gtest/gtest.h>

#include "../support/oracles.hpp"
#include "volsynth/phantom.hpp"
#include "volsynth/semantic_refiner.hpp"

using namespace volsynth;

namespace {

struct Sdms {
  std::array<SdmModel, 3> models;
  SdmSet set() {
    SdmSet s;
    for (auto& m : models) s[m.view()] = &m;
    return s;
  }
};

Sdms untrained(int channels = 4) {
  return {{SdmModel(View::Axial, channels, 1), SdmModel(View::Coronal, channels, 2), SdmModel(View::Sagittal, channels, 3)}};
}

}  // namespace

TEST(Renoise, ZeroStepsIsIdentityAndRangeIsChecked) {
  const auto s = make_schedule(300, 1e-4, 0.02);
  ImageVolume v(4, 5, 6, 0.3f);
  Rng rng(1);
  EXPECT_EQ(renoise(v, 0, s, rng), v);
  EXPECT_THROW(renoise(v, -1, s, rng), std::out_of_range);
  EXPECT_THROW(renoise(v, 301, s, rng), std::out_of_range);
}

TEST(Renoise, FullHorizonApproachesStandardNormalForZeroInput) {
  // x0 = 0 isolates the noise term; mean/std checked within 2% of the unit scale at 128^3.
  const auto s = make_schedule(300, 1e-4, 0.02);
  ImageVolume v(128, 128, 128, 0.0f);
  Rng rng(2);
  const auto out = renoise(v, 300, s, rng);
  std::vector<double> vals(out.voxels().begin(), out.voxels().end());
  const auto mo = oracle::moments(vals);
  EXPECT_NEAR(mo.mean, 0.0, 0.02);
  EXPECT_NEAR(mo.std, std::sqrt(1 - s.alpha_bar(300)), 0.02);
}

TEST(Renoise, TenStepPerturbationMatchesClosedForm) {
  const auto s = make_schedule(300, 1e-4, 0.02);
  ImageVolume v(32, 64, 64, 0.0f);
  Rng rng(3);
  const auto out = renoise(v, 10, s, rng);
  double mad = 0;
  for (float x : out.voxels()) mad += std::abs(x) / out.size();
  const double ab = oracle::alpha_bar_product(300, 1e-4, 0.02)[9];
  const double want = std::sqrt(1 - ab) * std::sqrt(2 / std::numbers::pi);
  EXPECT_NEAR(mad, want, 0.05 * want);
}

TEST(Refine, ZeroStepsIsExactIdentity) {
  auto sdms = untrained();
  const auto p = generate_phantom(PhantomSpec::make(8, 16, 16, 4), 1);
  Rng rng(4);
  const auto out = refine_volume(p.image, p.mask, sdms.set(), 0, make_schedule(300, 1e-4, 0.02), LabelCodec::contiguous(4), rng);
  EXPECT_EQ(out, p.image);
}

TEST(Refine, ViewOrderDoesNotChangeTheResult) {
  auto sdms = untrained();
  const auto p = generate_phantom(PhantomSpec::make(8, 16, 12, 4), 2);
  const auto sched = make_schedule(300, 1e-4, 0.02);
  std::array<View, 3> order = kAllViews;
  std::optional<ImageVolume> ref;
  do {
    Rng rng(5);
    const auto out = refine_volume(p.image, p.mask, sdms.set(), 3, sched, LabelCodec::contiguous(4), rng, order);
    if (!ref) ref = out;
    else EXPECT_TRUE(std::memcmp(ref->voxels().data(), out.voxels().data(), out.size() * sizeof(float)) == 0);
  } while (std::next_permutation(order.begin(), order.end(), [](View a, View b) { return int(a) < int(b); }));
}

TEST(Refine, ValidatesModelsOrderAndShapes) {
  auto sdms = untrained();
  const auto p = generate_phantom(PhantomSpec::make(8, 16, 16, 4), 3);
  const auto sched = make_schedule(50, 1e-4, 0.02);
  const auto codec = LabelCodec::contiguous(4);
  Rng rng(6);
  auto missing = sdms.set();
  missing.erase(View::Coronal);
  EXPECT_THROW(refine_volume(p.image, p.mask, missing, 2, sched, codec, rng), std::invalid_argument);
  auto swapped = sdms.set();
  std::swap(swapped[View::Axial], swapped[View::Sagittal]);
  EXPECT_THROW(refine_volume(p.image, p.mask, swapped, 2, sched, codec, rng), std::invalid_argument);
  const std::array<View, 3> dup{View::Axial, View::Axial, View::Coronal};
  EXPECT_THROW(refine_volume(p.image, p.mask, sdms.set(), 2, sched, codec, rng, dup), std::invalid_argument);
  EXPECT_THROW(refine_volume(p.image, p.mask, sdms.set(), 51, sched, codec, rng), std::out_of_range);
  const ImageVolume wrong(8, 16, 15);
  EXPECT_THROW(refine_volume(wrong, p.mask, sdms.set(), 2, sched, codec, rng), std::invalid_argument);
}

TEST(Refine, CubicVolumeHasEqualSliceCountsPerView) {
  const ImageVolume cube(9, 9, 9);
  for (View v : kAllViews) EXPECT_EQ(slice_geometry(cube, v).count, 9);
}

TEST(Sdm, PerfectPredictorHasZeroLoss) {
  const auto s = make_schedule(100, 1e-4, 0.02);
  Rng rng(7);
  const auto x0 = randn<double>({1, 1, 8, 8}, rng);
  const auto eps = randn<double>({1, 1, 8, 8}, rng);
  EXPECT_EQ(ddpm_loss([&](const Tensor<double>&, int) { return eps; }, x0, 40, eps, s), 0.0);
}

TEST(Sdm, OverfitLossRunningMeanDecreases) {
  const auto p = generate_phantom(PhantomSpec::make(12, 32, 32, 4), 4);
  const auto data = make_sdm_data(std::span(&p.mask, 1), std::span(&p.image, 1), LabelCodec::contiguous(4));
  const auto sched = make_schedule(300, 1e-4, 0.02);
  std::vector<double> trace;
  Rng rng(8);
  train_sdm(View::Coronal, data, sched, SdmConfig{8, 2000, 4, 2e-3}, rng, &trace);
  // Means over consecutive 400-step windows are non-increasing, and the last is well below the first.
  std::vector<double> means;
  for (std::size_t w = 0; w + 400 <= trace.size(); w += 400)
    means.push_back(std::accumulate(trace.begin() + w, trace.begin() + w + 400, 0.0) / 400);
  for (std::size_t i = 1; i < means.size(); ++i) EXPECT_LE(means[i], means[i - 1] * 1.02) << "window " << i;
  EXPECT_LT(means.back(), 0.6 * means.front());
}
