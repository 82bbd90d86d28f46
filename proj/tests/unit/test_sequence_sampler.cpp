#include <gtest/gtest.h>

#include "../support/oracles.hpp"

using namespace volsynth;

TEST(Stitching, StubGridProducesExactSequences) {
  for (int L = 6; L <= 40; ++L)
    for (int m : {4, 6})
      for (int n : {1, 2}) {
        if (m > L) continue;
        for (std::uint64_t seed : {1u, 2u, 3u}) {
          const auto rep = oracle::check_stitching(L, m, n, seed * 1000 + L);
          for (const auto& f : rep.failures) ADD_FAILURE() << f;
          EXPECT_LE(rep.iterations, rep.bound);
        }
      }
}

TEST(Stitching, SeedStartCoversAllAdmissiblePositions) {
  // Z = L - (m - 1) positions, each reachable.
  const int L = 12, m = 6;
  EXPECT_EQ(start_range_upper(L, m), 7);
  std::set<int> seen;
  auto stub = [&](const Tensor<float>& c, ConditionMode mode, double, Rng&) {
    return Tensor<float>({mode == ConditionMode::Unconditional ? m : m - 1, 1, 1});
    (void)c;
  };
  Rng rng(4);
  for (int i = 0; i < 500; ++i) {
    GenerationTrace tr;
    stitch_sequence(stub, GenerationConfig{L, m, 1, 1.0, {}, 0}, 1, 1, rng, &tr);
    seen.insert(tr.seed_start);
  }
  EXPECT_EQ(seen, (std::set<int>{0, 1, 2, 3, 4, 5, 6}));
}

TEST(Stitching, PositionConditionFollowsWindowStart) {
  std::vector<std::pair<ConditionMode, double>> calls;
  auto stub = [&](const Tensor<float>&, ConditionMode mode, double zn, Rng&) {
    calls.emplace_back(mode, zn);
    return Tensor<float>({mode == ConditionMode::Unconditional ? 6 : 5, 1, 1});
  };
  Rng rng(9);
  GenerationTrace tr;
  stitch_sequence(stub, GenerationConfig{32, 6, 1, 1.0, {}, 0}, 1, 1, rng, &tr);
  ASSERT_EQ(calls.size(), tr.blocks.size());
  EXPECT_DOUBLE_EQ(calls[0].second, tr.seed_start / 32.0);
  for (std::size_t i = 1; i < calls.size(); ++i) {
    const auto& b = tr.blocks[i];
    if (b.mode == ConditionMode::Forward) EXPECT_DOUBLE_EQ(calls[i].second, b.window_start / 32.0);
    else EXPECT_DOUBLE_EQ(calls[i].second, std::max(0, b.window_start) / 32.0);
  }
}

TEST(Stitching, RejectsInvalidConfigAndWrongBlockShapes) {
  auto good = [](const Tensor<float>&, ConditionMode mode, double, Rng&) {
    return Tensor<float>({mode == ConditionMode::Unconditional ? 4 : 3, 2, 2});
  };
  auto bad = [](const Tensor<float>&, ConditionMode, double, Rng&) { return Tensor<float>({2, 2, 2}); };
  Rng rng(1);
  EXPECT_THROW(stitch_sequence(good, GenerationConfig{3, 4, 1, 1.0, {}, 0}, 2, 2, rng), std::invalid_argument);
  EXPECT_THROW(stitch_sequence(good, GenerationConfig{8, 4, 4, 1.0, {}, 0}, 2, 2, rng), std::invalid_argument);
  EXPECT_THROW(stitch_sequence(good, GenerationConfig{8, 4, 1, 0.5, {}, 0}, 2, 2, rng), std::invalid_argument);
  EXPECT_THROW(stitch_sequence(bad, GenerationConfig{8, 4, 1, 1.0, {}, 0}, 2, 2, rng), std::runtime_error);
}

TEST(Stitching, LengthEqualToWindowNeedsNoExtension) {
  auto stub = [](const Tensor<float>&, ConditionMode mode, double, Rng&) {
    EXPECT_EQ(mode, ConditionMode::Unconditional);
    return Tensor<float>({6, 1, 1}, 0.5f);
  };
  Rng rng(2);
  GenerationTrace tr;
  const auto out = stitch_sequence(stub, GenerationConfig{6, 6, 1, 1.0, {}, 0}, 1, 1, rng, &tr);
  EXPECT_EQ(out.dim(0), 6);
  EXPECT_EQ(tr.blocks.size(), 1u);
}

TEST(GenerateMaskVolume, DecodesIntoTheCodecLabelSet) {
  McDpmModel<float> model({4, 1, 8, 8, 4}, 5);
  const auto sched = make_schedule(4, 1e-4, 0.02);
  const auto codec = LabelCodec::contiguous(3);
  Rng rng(3);
  const auto mask = generate_mask_volume(model, GenerationConfig{10, 4, 1, 1.0, {}, 0}, codec, sched, rng);
  EXPECT_EQ(mask.shape(), (std::array<int, 3>{10, 8, 8}));
  EXPECT_TRUE(mask.valid());
  EXPECT_EQ(mask.label_set, codec.labels());
  EXPECT_THROW(generate_mask_volume(model, GenerationConfig{10, 6, 1, 1.0, {}, 0}, codec, sched, rng), std::invalid_argument);
}
