#pragma once

#include <set>

#include "volsynth/diffusion.hpp"
#include "volsynth/eval.hpp"
#include "volsynth/image_generator.hpp"
#include "volsynth/io.hpp"
#include "volsynth/mc_dpm.hpp"
#include "volsynth/phantom.hpp"
#include "volsynth/semantic_refiner.hpp"

namespace volsynth {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct MaskStageConfig {
  int m = 6;
  int n = 1;
  ModeProbabilities probs;
  double guidance = 1.0;
  int channels = 24;
  int levels = 4;
  int steps = 3000;
  int batch = 4;
  double lr = 1e-3;
};

struct PipelineConfig {
  std::uint64_t seed = 1234;
  struct {
    std::string data_dir = "data";
    std::string checkpoint_dir = "checkpoints";
    std::string synth_dir = "synth";
    std::string report_dir = "report";
  } paths;
  PhantomSpec phantom = PhantomSpec::make(32, 64, 64, 6);
  int count = 30;
  struct {
    int T = 300;
    double beta_start = 1e-4;
    double beta_end = 0.02;
  } schedule;
  MaskStageConfig mask;
  SeqGenConfig image;
  SdmConfig refiner;
  int refine_steps = 10;
  int synth_count = 110;
  bool downstream = true;
  SegmenterBudget seg2d{1000, 4, 8, 3e-3};
  SegmenterBudget seg3d{1000, 4, 8, 3e-3};

  DiffusionSchedule make_diffusion_schedule() const { return make_schedule(schedule.T, schedule.beta_start, schedule.beta_end); }
  LabelCodec codec() const { return LabelCodec::contiguous(phantom.labels); }

  // Rejects every numeric constraint of the downstream types with a message naming the field.
  void validate() const {
    auto need = [](bool ok, const std::string& field, const std::string& rule) {
      if (!ok) throw ConfigError("config." + field + ": " + rule);
    };
    need(count >= 2, "data.count", "must be >= 2");
    try {
      phantom.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("config.phantom: ") + e.what());
    }
    need(schedule.T >= 1, "schedule.T", "must be >= 1");
    need(schedule.beta_start > 0 && schedule.beta_start < 1, "schedule.beta_start", "must lie in (0, 1)");
    need(schedule.beta_end > 0 && schedule.beta_end < 1, "schedule.beta_end", "must lie in (0, 1)");
    need(schedule.beta_start <= schedule.beta_end, "schedule.beta_start", "must not exceed beta_end");
    need(mask.n >= 1, "mask.n", "must be >= 1");
    need(mask.n < mask.m, "mask.n", "must be < mask.m");
    need(mask.m <= phantom.depth, "mask.m", "must not exceed the phantom depth");
    try {
      mask.probs.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("config.mask.mode_probs: ") + e.what());
    }
    need(mask.guidance >= 1.0, "mask.guidance_scale", "must be >= 1");
    need(mask.levels >= 2 && mask.levels <= 6, "mask.levels", "must lie in [2, 6]");
    for (auto [name, v] : {std::pair{"mask.channels", mask.channels}, {"mask.steps", mask.steps}, {"mask.batch", mask.batch},
                           {"image.channels", image.channels}, {"image.steps", image.steps}, {"image.batch", image.batch},
                           {"refiner.channels", refiner.channels}, {"refiner.steps", refiner.steps}, {"refiner.batch", refiner.batch},
                           {"eval.seg2d.steps", seg2d.steps}, {"eval.seg3d.steps", seg3d.steps},
                           {"eval.seg2d.batch", seg2d.batch}, {"eval.seg3d.batch", seg3d.batch},
                           {"eval.seg2d.channels", seg2d.channels}, {"eval.seg3d.channels", seg3d.channels}})
      need(v >= 1, name, "must be >= 1");
    for (auto [name, v] : {std::pair{"mask.lr", mask.lr}, {"image.lr", image.lr}, {"refiner.lr", refiner.lr},
                           {"eval.seg2d.lr", seg2d.lr}, {"eval.seg3d.lr", seg3d.lr}})
      need(v > 0, name, "must be > 0");
    need(refine_steps >= 0 && refine_steps <= schedule.T, "refiner.refine_steps", "must lie in [0, schedule.T]");
    need(synth_count >= 1, "synth.count", "must be >= 1");
  }

  nlohmann::json to_json() const {
    nlohmann::json ph;
    volsynth::to_json(ph, phantom);
    auto seg = [](const SegmenterBudget& b) { return nlohmann::json{{"steps", b.steps}, {"batch", b.batch}, {"channels", b.channels}, {"lr", b.lr}}; };
    return {
        {"seed", seed},
        {"paths", {{"data_dir", paths.data_dir}, {"checkpoint_dir", paths.checkpoint_dir}, {"synth_dir", paths.synth_dir}, {"report_dir", paths.report_dir}}},
        {"data", {{"count", count}, {"phantom", ph}}},
        {"schedule", {{"T", schedule.T}, {"beta_start", schedule.beta_start}, {"beta_end", schedule.beta_end}, {"kind", "linear"}}},
        {"mask", {{"m", mask.m}, {"n", mask.n}, {"mode_probs", mask.probs.as_array()}, {"guidance_scale", mask.guidance},
                  {"channels", mask.channels}, {"levels", mask.levels}, {"steps", mask.steps}, {"batch", mask.batch}, {"lr", mask.lr}}},
        {"image", {{"channels", image.channels}, {"steps", image.steps}, {"batch", image.batch}, {"lr", image.lr}}},
        {"refiner", {{"channels", refiner.channels}, {"steps", refiner.steps}, {"batch", refiner.batch}, {"lr", refiner.lr},
                     {"refine_steps", refine_steps}}},
        {"synth", {{"count", synth_count}}},
        {"eval", {{"downstream", downstream}, {"seg2d", seg(seg2d)}, {"seg3d", seg(seg3d)}}},
    };
  }

  // Missing keys keep their defaults; unknown top-level sections are rejected.
  static PipelineConfig from_json(const nlohmann::json& j) {
    PipelineConfig c;
    static const std::set<std::string> sections{"seed", "paths", "data", "schedule", "mask", "image", "refiner", "synth", "eval"};
    for (const auto& [k, v] : j.items())
      if (!sections.contains(k)) throw ConfigError("config: unknown section '" + k + "'");
    try {
      c.seed = j.value("seed", c.seed);
      if (j.contains("paths")) {
        const auto& p = j["paths"];
        c.paths.data_dir = p.value("data_dir", c.paths.data_dir);
        c.paths.checkpoint_dir = p.value("checkpoint_dir", c.paths.checkpoint_dir);
        c.paths.synth_dir = p.value("synth_dir", c.paths.synth_dir);
        c.paths.report_dir = p.value("report_dir", c.paths.report_dir);
      }
      if (j.contains("data")) {
        const auto& d = j["data"];
        c.count = d.value("count", c.count);
        if (d.contains("phantom")) c.phantom = d["phantom"].get<PhantomSpec>();
      }
      if (j.contains("schedule")) {
        const auto& s = j["schedule"];
        if (s.value("kind", "linear") != "linear") throw ConfigError("config.schedule.kind: only 'linear' is supported");
        c.schedule.T = s.value("T", c.schedule.T);
        c.schedule.beta_start = s.value("beta_start", c.schedule.beta_start);
        c.schedule.beta_end = s.value("beta_end", c.schedule.beta_end);
      }
      if (j.contains("mask")) {
        const auto& m = j["mask"];
        c.mask.m = m.value("m", c.mask.m);
        c.mask.n = m.value("n", c.mask.n);
        if (m.contains("mode_probs")) {
          const auto p = m["mode_probs"].get<std::vector<double>>();
          if (p.size() != 3) throw ConfigError("config.mask.mode_probs: expected [p_forward, p_backward, p_uncondition]");
          c.mask.probs = {p[0], p[1], p[2]};
        }
        c.mask.guidance = m.value("guidance_scale", c.mask.guidance);
        c.mask.channels = m.value("channels", c.mask.channels);
        c.mask.levels = m.value("levels", c.mask.levels);
        c.mask.steps = m.value("steps", c.mask.steps);
        c.mask.batch = m.value("batch", c.mask.batch);
        c.mask.lr = m.value("lr", c.mask.lr);
      }
      if (j.contains("image")) {
        const auto& m = j["image"];
        c.image.channels = m.value("channels", c.image.channels);
        c.image.steps = m.value("steps", c.image.steps);
        c.image.batch = m.value("batch", c.image.batch);
        c.image.lr = m.value("lr", c.image.lr);
      }
      if (j.contains("refiner")) {
        const auto& m = j["refiner"];
        c.refiner.channels = m.value("channels", c.refiner.channels);
        c.refiner.steps = m.value("steps", c.refiner.steps);
        c.refiner.batch = m.value("batch", c.refiner.batch);
        c.refiner.lr = m.value("lr", c.refiner.lr);
        c.refine_steps = m.value("refine_steps", c.refine_steps);
      }
      if (j.contains("synth")) c.synth_count = j["synth"].value("count", c.synth_count);
      if (j.contains("eval")) {
        const auto& e = j["eval"];
        c.downstream = e.value("downstream", c.downstream);
        auto seg = [](const nlohmann::json& s, SegmenterBudget b) {
          return SegmenterBudget{s.value("steps", b.steps), s.value("batch", b.batch), s.value("channels", b.channels), s.value("lr", b.lr)};
        };
        if (e.contains("seg2d")) c.seg2d = seg(e["seg2d"], c.seg2d);
        if (e.contains("seg3d")) c.seg3d = seg(e["seg3d"], c.seg3d);
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
    return c;
  }

  static PipelineConfig load(const fs::path& p) { return from_json(read_json(p)); }

  // Hash of the canonical JSON form; embedded in every artifact.
  std::string hash() const {
    const std::string s = to_json().dump();
    return sha256_hex(s.data(), s.size());
  }
};

}  // namespace volsynth
