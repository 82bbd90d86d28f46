#include <gtest/gtest.h>

#include <unistd.h>

#include "volsynth/config.hpp"
#include "volsynth/unet.hpp"

using namespace volsynth;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("volsynth_io_" + std::to_string(::getpid()) + "_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(Io, Sha256KnownVector) {
  const std::string abc = "abc";
  EXPECT_EQ(sha256_hex(abc.data(), abc.size()), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Io, VolumeRoundTripIsBitExact) {
  const auto dir = scratch("vol");
  const auto p = generate_phantom(PhantomSpec::make(6, 10, 12, 4), 3);
  save_mask(dir / "m", p.mask, {{"note", "x"}});
  save_image(dir / "i", p.image);
  const auto m = load_mask(dir / "m");
  const auto i = load_image(dir / "i");
  EXPECT_EQ(m.voxels, p.mask.voxels);
  EXPECT_EQ(m.label_set, p.mask.label_set);
  EXPECT_EQ(i, p.image);
  EXPECT_EQ(read_json(dir / "m.json").at("note"), "x");
  EXPECT_THROW(load_mask(dir / "i"), IoError);
  write_file(dir / "i.raw", "short");
  EXPECT_THROW(load_image(dir / "i"), IoError);
  fs::remove_all(dir);
}

TEST(Io, CheckpointRoundTripWithOptimizerState) {
  const auto dir = scratch("ckpt");
  SliceUNet<float> a(UNetConfig{2, 1, 4, 0, 16}, 1), b(UNetConfig{2, 1, 4, 0, 16}, 2);
  nn::Adam<float> oa(a.parameters(), {.lr = 1e-3}), ob(b.parameters(), {.lr = 1e-3});
  Rng rng(3);
  const auto x = randn<float>({2, 2, 8, 8}, rng);
  for (int s = 0; s < 3; ++s) {
    nn::zero_grad(a.parameters());
    auto y = a.forward(x, nullptr);
    a.backward(y);
    oa.step();
  }
  save_checkpoint(dir / "c", {{"stage", "test"}}, a.parameters(), &oa);
  const auto h = load_checkpoint(dir / "c", b.parameters(), &ob);
  EXPECT_EQ(h.at("stage"), "test");
  EXPECT_EQ(ob.steps(), oa.steps());
  EXPECT_EQ(ob.first_moments(), oa.first_moments());
  EXPECT_EQ(a.forward(x, nullptr).values()[5], b.forward(x, nullptr).values()[5]);
  // A flipped byte in the blob is detected.
  auto blob = read_file(dir / "c.bin");
  blob[10] ^= 1;
  write_file(dir / "c.bin", blob);
  EXPECT_THROW(load_checkpoint(dir / "c", b.parameters()), IoError);
  // Layout mismatch is rejected.
  save_checkpoint(dir / "d", {}, a.parameters());
  SliceUNet<float> wide(UNetConfig{2, 1, 8, 0, 16}, 1);
  EXPECT_THROW(load_checkpoint(dir / "d", wide.parameters()), IoError);
  fs::remove_all(dir);
}

TEST(Io, PngSignature) {
  const auto dir = scratch("png");
  std::vector<std::uint8_t> px(6 * 4, 128);
  write_png_gray(dir / "a.png", 6, 4, px);
  const auto bytes = read_file(dir / "a.png");
  ASSERT_GE(bytes.size(), 8u);
  EXPECT_EQ(bytes.substr(1, 3), "PNG");
  EXPECT_THROW(write_png_gray(dir / "b.png", 5, 4, px), IoError);
  fs::remove_all(dir);
}

TEST(Config, DefaultsAreValidAndRoundTrip) {
  PipelineConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.mask.m, 6);
  EXPECT_EQ(c.mask.n, 1);
  EXPECT_EQ(c.schedule.T, 300);
  const auto r = PipelineConfig::from_json(c.to_json());
  EXPECT_EQ(r.to_json(), c.to_json());
  EXPECT_EQ(r.hash(), c.hash());
}

TEST(Config, PartialJsonKeepsDefaults) {
  const auto c = PipelineConfig::from_json(nlohmann::json::parse(R"({"seed": 9, "mask": {"guidance_scale": 2.5}})"));
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.mask.guidance, 2.5);
  EXPECT_EQ(c.mask.m, 6);
  EXPECT_NE(c.hash(), PipelineConfig{}.hash());
}

TEST(Config, ErrorsNameTheOffendingField) {
  auto expect_msg = [](const PipelineConfig& c, const std::string& field) {
    try {
      c.validate();
      ADD_FAILURE() << "no error for " << field;
    } catch (const ConfigError& e) {
      EXPECT_NE(std::string(e.what()).find(field), std::string::npos) << e.what();
    }
  };
  PipelineConfig c;
  c.count = 1;
  expect_msg(c, "data.count");
  c = {};
  c.mask.n = 6;
  expect_msg(c, "mask.n");
  c = {};
  c.mask.probs = {0.5, 0.5, 0.5};
  expect_msg(c, "mask.mode_probs");
  c = {};
  c.mask.guidance = 0.5;
  expect_msg(c, "mask.guidance_scale");
  c = {};
  c.refine_steps = 301;
  expect_msg(c, "refine_steps");
  c = {};
  c.image.lr = 0;
  expect_msg(c, "image.lr");
  EXPECT_THROW(PipelineConfig::from_json(nlohmann::json::parse(R"({"optimiser": {}})")), ConfigError);
  EXPECT_THROW(PipelineConfig::from_json(nlohmann::json::parse(R"({"mask": {"mode_probs": [1, 0]}})")), ConfigError);
  EXPECT_THROW(PipelineConfig::from_json(nlohmann::json::parse(R"({"schedule": {"kind": "cosine"}})")), ConfigError);
  EXPECT_THROW(PipelineConfig::from_json(nlohmann::json::parse(R"({"mask": {"m": "six"}})")), ConfigError);
}
