#include <gtest/gtest.h>

#include "volsynth/config.hpp"
#include "volsynth/phantom.hpp"

using namespace volsynth;

namespace {

std::vector<ImageVolume> phantom_images(const PhantomSpec& spec, std::uint64_t first_seed, int count) {
  std::vector<ImageVolume> v;
  for (int i = 0; i < count; ++i) v.push_back(generate_phantom(spec, first_seed + i).image);
  return v;
}

}  // namespace

TEST(Frechet, IdenticalCloudsScoreZero) {
  Rng rng(1);
  Eigen::MatrixXd a(200, 5);
  for (int i = 0; i < a.size(); ++i) a.data()[i] = std::normal_distribution<double>()(rng);
  EXPECT_LT(std::abs(frechet_distance(a, a)), 1e-3);
}

TEST(Frechet, UnitShiftOfOneDimensionalCloudScoresOne) {
  // Population variance 1 in both sets; means 0 and 1.
  Eigen::MatrixXd a(2, 1), b(2, 1);
  a << -1, 1;
  b << 0, 2;
  EXPECT_NEAR(frechet_distance(a, b), 1.0, 1e-6);
}

TEST(Frechet, MatchesClosedFormForDiagonalGaussians) {
  // Independent dims: d = |mu_a - mu_b|^2 + sum (sa - sb)^2 with sample stds sa, sb.
  Eigen::MatrixXd a(4, 2), b(4, 2);
  a << 1, 0, -1, 0, 1, 2, -1, -2;     // means 0,0; pop var 1, 2
  b << 3, 1, 1, 1, 3, 5, 1, -3;       // means 2,1; pop var 1, 8
  // cross-covariances are zero in both sets by construction
  const double want = 4 + 1 + 0 + std::pow(std::sqrt(2.0) - std::sqrt(8.0), 2);
  EXPECT_NEAR(frechet_distance(a, b), want, 1e-5);
}

TEST(Frechet, SameSpecCloserThanDifferentSpec) {
  const auto spec_a = PhantomSpec::make(16, 32, 32, 6);
  auto spec_b = PhantomSpec::make(16, 32, 32, 4);
  const auto a1 = phantom_images(spec_a, 1, 6), a2 = phantom_images(spec_a, 100, 6), b = phantom_images(spec_b, 200, 6);
  const double same = frechet_proxy(a1, a2).mean, cross = frechet_proxy(a1, b).mean;
  EXPECT_LT(same, cross);
  EXPECT_THROW(frechet_proxy(std::span(a1).first(1), a2), std::invalid_argument);
}

TEST(Diversity, DuplicatesOffsetsAndVariedSets) {
  const ImageVolume base(4, 6, 6, 0.1f);
  ImageVolume shifted = base;
  for (float& v : shifted.voxels()) v += 0.5f;
  const std::vector<ImageVolume> dup{base, base, base};
  EXPECT_EQ(diversity_score<float>(dup), 0.0);
  const std::vector<ImageVolume> pair{base, shifted};
  EXPECT_NEAR(diversity_score<float>(pair), 0.5, 1e-6);
  const auto spec = PhantomSpec::make(16, 32, 32, 6);
  const auto varied = phantom_images(spec, 1, 10);
  const std::vector<ImageVolume> copies(10, varied[0]);
  EXPECT_GT(diversity_score<float>(varied), diversity_score<float>(copies));
  EXPECT_THROW(diversity_score<float>(std::span(dup).first(1)), std::invalid_argument);
}

TEST(Dice, DefinitionAndAbsentLabel) {
  LabelGrid a(1, 2, 4), b(1, 2, 4);
  // a has label 1 at 3 voxels, b at 2 voxels, overlapping in 1.
  a.voxels() = {1, 1, 1, 0, 0, 0, 0, 0};
  b.voxels() = {0, 0, 1, 1, 0, 0, 0, 0};
  EXPECT_DOUBLE_EQ(*dice(a, b, 1), 2.0 * 1 / 5);
  EXPECT_FALSE(dice(a, b, 3).has_value());
  EXPECT_DOUBLE_EQ(*dice(a, a, 1), 1.0);
  EXPECT_THROW(dice(a, LabelGrid(1, 2, 3), 1), std::invalid_argument);
  const LabelDice d{0.5, std::nullopt, 0.75, 0.25};
  EXPECT_DOUBLE_EQ(*mean_dice(d), 0.5);
  EXPECT_FALSE(mean_dice(LabelDice{1.0, std::nullopt}).has_value());
}

TEST(Alignment, GroundTruthPairsAndConstantImage) {
  const auto spec = PhantomSpec::make(24, 48, 48, 6);
  const auto p = generate_phantom(spec, 11);
  const auto d = alignment_dice(p.image, p.mask, spec);
  ASSERT_EQ(d.size(), 6u);
  EXPECT_GE(*mean_dice(d, 0), 0.99);
  // Constant background intensity: everything predicted as label 0.
  const ImageVolume flat(p.image.depth(), p.image.height(), p.image.width(), static_cast<float>(spec.bands[0].mean));
  const auto f = alignment_dice(flat, p.mask, spec);
  std::size_t bg = 0;
  for (auto v : p.mask.voxels.voxels()) bg += v == 0;
  EXPECT_NEAR(*f[0], 2.0 * bg / (p.mask.voxels.size() + bg), 1e-12);
  for (int l = 1; l < 6; ++l) EXPECT_DOUBLE_EQ(*f[l], 0.0);
}

TEST(DownstreamStudy, TableShapeRangesAndOverlapGuard) {
  const auto spec = PhantomSpec::make(8, 32, 32, 4);
  const auto ds = make_dataset(6, spec, 3);
  std::vector<PhantomPair> real{ds.pairs[0], ds.pairs[1]}, synth{ds.pairs[2], ds.pairs[3]}, test{ds.pairs[4], ds.pairs[5]};
  StudyConfig cfg{4, {20, 2, 4, 3e-3}, {20, 1, 4, 3e-3}, 9};
  const auto t = downstream_study(real, synth, test, kAllStrategies, cfg);
  ASSERT_EQ(t.rows.size(), 8u);
  for (const auto& r : t.rows) {
    ASSERT_EQ(r.per_label.size(), 4u);
    for (const auto& d : r.per_label)
      if (d) {
        EXPECT_GE(*d, 0.0);
        EXPECT_LE(*d, 1.0);
      }
  }
  const auto again = downstream_study(real, synth, test, kAllStrategies, cfg);
  for (std::size_t i = 0; i < t.rows.size(); ++i) EXPECT_EQ(t.rows[i].per_label, again.rows[i].per_label);
  std::vector<PhantomPair> leaky{ds.pairs[4]};
  EXPECT_THROW(downstream_study(real, leaky, test, kAllStrategies, cfg), std::invalid_argument);
  EXPECT_THROW(downstream_study(real, synth, {}, kAllStrategies, cfg), std::invalid_argument);
}

TEST(DownstreamStudy, RealOnlyBaselineSegmentsPhantomOrgans) {
  const auto spec = PhantomSpec::make(32, 64, 64, 6);
  const auto ds = make_dataset(10, spec, 21);
  std::vector<PhantomPair> real, test;
  for (int i : ds.train) real.push_back(ds.pairs[i]);
  for (int i : ds.val) test.push_back(ds.pairs[i]);
  const std::array<Strategy, 1> only{Strategy::RealOnly};
  const auto t = downstream_study(real, {}, test, only, StudyConfig{6, PipelineConfig{}.seg2d, PipelineConfig{}.seg3d, 5});
  // Recorded at default budgets: unet2d 0.970, conv3d 0.976.
  for (const auto& r : t.rows) {
    std::cout << r.segmenter << " real-only mean organ Dice " << *r.mean_foreground << "\n";
    EXPECT_GE(*r.mean_foreground, 0.9) << r.segmenter;
  }
}

TEST(Report, JsonCarriesNullForAbsentLabels) {
  EvalReport r;
  r.alignment = {1.0, std::nullopt, 0.5};
  r.diversity = 0.25;
  const auto j = to_json(r);
  EXPECT_TRUE(j["alignment"][1].is_null());
  EXPECT_DOUBLE_EQ(j["alignment_mean_foreground"].get<double>(), 0.5);
  EXPECT_FALSE(j.contains("fidelity"));
  EXPECT_NE(to_text(r).find("0.2500"), std::string::npos);
}
