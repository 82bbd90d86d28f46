#pragma once

#include <cinttypes>
#include <iostream>

#include "volsynth/config.hpp"
#include "volsynth/sequence_sampler.hpp"

namespace volsynth {

enum class Stage { Mask, Image, Refiner };

inline std::string_view stage_name(Stage s) {
  switch (s) {
    case Stage::Mask: return "mask";
    case Stage::Image: return "image";
    case Stage::Refiner: return "refiner";
  }
  return "?";
}

inline Stage stage_from_name(std::string_view s) {
  if (s == "mask") return Stage::Mask;
  if (s == "image") return Stage::Image;
  if (s == "refiner") return Stage::Refiner;
  throw std::invalid_argument("unknown stage '" + std::string(s) + "' (expected mask, image or refiner)");
}

// RNG stream ids; keep stable, they are part of the reproducibility contract.
namespace stream {
inline constexpr std::uint64_t kMaskTrain = 101, kImageTrain = 102, kRefinerTrain = 103, kSynth = 110, kStudy = 120;
}

namespace paths {
inline fs::path data(const PipelineConfig& c) { return c.paths.data_dir; }
inline fs::path manifest(const PipelineConfig& c) { return data(c) / "manifest.json"; }
inline fs::path checkpoint(const PipelineConfig& c, std::string_view name) { return fs::path(c.paths.checkpoint_dir) / std::string(name); }
inline fs::path loss_csv(const PipelineConfig& c, Stage s) {
  return fs::path(c.paths.checkpoint_dir) / ("loss_" + std::string(stage_name(s)) + ".csv");
}
inline fs::path probe_csv(const PipelineConfig& c) { return fs::path(c.paths.checkpoint_dir) / "probe_mask.csv"; }
inline std::string refiner_name(View v) { return "refiner_" + std::string(view_name(v)); }
inline fs::path synth(const PipelineConfig& c) { return c.paths.synth_dir; }
inline fs::path provenance(const PipelineConfig& c) { return synth(c) / "provenance.json"; }
inline std::string pair_stem(std::string_view prefix, int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*s_%03d", static_cast<int>(prefix.size()), prefix.data(), i);
  return buf;
}
}  // namespace paths

// ---------------------------------------------------------------------------
// make-data

inline nlohmann::json cmd_make_data(const PipelineConfig& cfg, std::ostream& log = std::clog) {
  cfg.validate();
  const Dataset ds = make_dataset(cfg.count, cfg.phantom, cfg.seed);
  const fs::path dir = paths::data(cfg);
  fs::create_directories(dir);
  nlohmann::json vols = nlohmann::json::array();
  std::set<int> train(ds.train.begin(), ds.train.end());
  for (std::size_t i = 0; i < ds.pairs.size(); ++i) {
    const std::string stem = paths::pair_stem("vol", static_cast<int>(i));
    const nlohmann::json extra{{"seed", ds.seeds[i]}, {"config_hash", cfg.hash()}};
    save_mask(dir / (stem + "_mask"), ds.pairs[i].mask, extra);
    save_image(dir / (stem + "_image"), ds.pairs[i].image, extra);
    vols.push_back({{"id", stem},
                    {"mask", stem + "_mask"},
                    {"image", stem + "_image"},
                    {"seed", ds.seeds[i]},
                    {"split", train.contains(static_cast<int>(i)) ? "train" : "val"},
                    {"mask_sha256", file_sha256(raw_path(dir / (stem + "_mask")))},
                    {"image_sha256", file_sha256(raw_path(dir / (stem + "_image")))}});
  }
  nlohmann::json ph;
  to_json(ph, cfg.phantom);
  nlohmann::json manifest{{"master_seed", cfg.seed}, {"config_hash", cfg.hash()}, {"phantom", ph}, {"volumes", vols}};
  write_json(paths::manifest(cfg), manifest);
  log << "make-data: wrote " << ds.pairs.size() << " volumes (" << ds.train.size() << " train, " << ds.val.size() << " val) to "
      << dir.string() << "\n";
  return manifest;
}

struct LoadedDataset {
  std::vector<PhantomPair> train;
  std::vector<PhantomPair> val;
};

// Reads the manifest and verifies every volume against its recorded checksum.
inline LoadedDataset load_dataset(const PipelineConfig& cfg) {
  const fs::path mp = paths::manifest(cfg);
  if (!fs::exists(mp)) throw IoError("dataset manifest not found at " + mp.string() + " (run make-data first)");
  const auto manifest = read_json(mp);
  LoadedDataset ds;
  for (const auto& v : manifest.at("volumes")) {
    const fs::path ms = paths::data(cfg) / v.at("mask").get<std::string>();
    const fs::path is = paths::data(cfg) / v.at("image").get<std::string>();
    if (file_sha256(raw_path(ms)) != v.at("mask_sha256") || file_sha256(raw_path(is)) != v.at("image_sha256"))
      throw IoError("dataset volume " + v.at("id").get<std::string>() + " does not match its manifest checksum");
    PhantomPair p{load_mask(ms), load_image(is)};
    if (p.mask.shape() != p.image.shape()) throw IoError("dataset volume " + v.at("id").get<std::string>() + ": mask/image shape mismatch");
    (v.at("split") == "train" ? ds.train : ds.val).push_back(std::move(p));
  }
  if (ds.train.empty()) throw IoError("dataset has no training volumes");
  const auto& s = ds.train.front().mask.shape();
  if (s != std::array<int, 3>{cfg.phantom.depth, cfg.phantom.height, cfg.phantom.width})
    throw IoError("dataset shape " + shape_string(std::vector<int>(s.begin(), s.end())) + " differs from the configured phantom shape");
  return ds;
}

// ---------------------------------------------------------------------------
// train

namespace detail {

inline nlohmann::json arch_json(const UNetConfig& u) {
  return {{"kind", "slice_unet"}, {"in_channels", u.in_channels}, {"out_channels", u.out_channels}, {"width", u.width},
          {"embed_features", u.embed_features}, {"embed_hidden", u.embed_hidden}, {"levels", u.levels}};
}

inline nlohmann::json base_header(const PipelineConfig& cfg, Stage s, const UNetConfig& u, std::int64_t step, std::uint64_t init_seed) {
  return {{"stage", stage_name(s)},
          {"architecture", arch_json(u)},
          {"depth", cfg.phantom.depth},
          {"height", cfg.phantom.height},
          {"width", cfg.phantom.width},
          {"labels", cfg.phantom.labels},
          {"schedule", schedule_to_json(cfg.make_diffusion_schedule())},
          {"step", step},
          {"init_seed", init_seed},
          {"config_hash", cfg.hash()}};
}

// Loss rows are "step,value[,value...]"; on resume, rows before `from` are kept.
class LossLog {
 public:
  LossLog(fs::path p, std::string header, std::int64_t from, bool resume) : path_(std::move(p)) {
    if (resume && fs::exists(path_)) {
      std::istringstream in(read_file(path_));
      std::string line;
      std::getline(in, line);
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (std::stoll(line.substr(0, line.find(','))) < from) text_ += line + "\n";
      }
    }
    text_ = header + "\n" + text_;
  }
  void add(std::int64_t step, std::span<const double> values) {
    char buf[64];
    text_ += std::to_string(step);
    for (double v : values) {
      std::snprintf(buf, sizeof buf, ",%.10g", v);
      text_ += buf;
    }
    text_ += "\n";
  }
  void flush() const { write_file(path_, text_); }

 private:
  fs::path path_;
  std::string text_;
};

// Restores a stage checkpoint for resumption; returns the completed step count.
inline std::int64_t resume_from(const fs::path& stem, const nlohmann::json& expect, const nn::ParamList<float>& params,
                                nn::Adam<float>& opt) {
  if (!fs::exists(stem.string() + ".json")) throw IoError("cannot resume: no checkpoint at " + stem.string());
  const auto h = read_checkpoint_header(stem);
  for (const char* key : {"architecture", "depth", "height", "width", "labels", "schedule", "init_seed"})
    if (h.at(key) != expect.at(key)) throw IoError(std::string("cannot resume: checkpoint ") + key + " differs from the configuration");
  if (expect.contains("m") && (h.at("m") != expect.at("m") || h.at("n") != expect.at("n")))
    throw IoError("cannot resume: checkpoint (m, n) differ from the configuration");
  load_checkpoint(stem, params, &opt);
  return h.at("step").get<std::int64_t>();
}

inline std::uint64_t stage_seed(const PipelineConfig& cfg, std::uint64_t stream, std::uint64_t sub = 0) {
  return derived_seed(derived_seed(cfg.seed, stream), sub);
}

}  // namespace detail

// Mask training logs the loss on a fixed probe set every kMaskProbeEvery steps.
inline constexpr int kMaskProbeCount = 32;
inline constexpr int kMaskProbeEvery = 100;

inline McDpmConfig mask_model_config(const PipelineConfig& cfg) {
  return McDpmConfig{cfg.mask.m, cfg.mask.n, cfg.phantom.height, cfg.phantom.width, cfg.mask.channels, cfg.mask.levels};
}

// Trains one stage to its configured step count. With resume, continues from
// the stage checkpoint; per-step RNG streams make the result identical to an
// uninterrupted run. Returns the final-step losses.
inline std::vector<double> cmd_train(const PipelineConfig& cfg, Stage stage, bool resume, std::ostream& log = std::clog) {
  cfg.validate();
  const LoadedDataset ds = load_dataset(cfg);
  const auto sched = cfg.make_diffusion_schedule();
  const auto codec = cfg.codec();
  std::vector<MaskVolume> masks;
  std::vector<ImageVolume> images;
  for (const auto& p : ds.train) {
    masks.push_back(p.mask);
    images.push_back(p.image);
  }
  const auto report_every = [](int total) { return std::max(1, total / 10); };
  std::vector<double> last;

  switch (stage) {
    case Stage::Mask: {
      std::vector<ImageVolume> enc;
      for (const auto& m : masks) enc.push_back(encode_labels(m, codec));
      const McDpmConfig mc = mask_model_config(cfg);
      const std::uint64_t seed = detail::stage_seed(cfg, stream::kMaskTrain);
      McDpmModel<float> model(mc, seed);
      model.set_noise_prior(sched);
      const auto params = model.parameters();
      nn::Adam<float> opt(params, {.lr = cfg.mask.lr});
      auto header = detail::base_header(cfg, stage, mc.unet(), 0, seed);
      header["m"] = mc.m;
      header["n"] = mc.n;
      header["mode_probs"] = cfg.mask.probs.as_array();
      header["noise_prior"] = true;
      const fs::path stem = paths::checkpoint(cfg, "mask");
      const std::int64_t start = resume ? detail::resume_from(stem, header, params, opt) : 0;
      detail::LossLog csv(paths::loss_csv(cfg, stage), "step,loss", start, resume);
      detail::LossLog probe_csv(paths::probe_csv(cfg), "step,probe_loss", start, resume);
      Rng probe_rng = derive_rng(seed, 1, 0);
      const auto probe = make_probe_set<float>(enc, mc.m, mc.n, cfg.mask.probs, kMaskProbeCount, sched, probe_rng);
      for (std::int64_t s = start; s < cfg.mask.steps; ++s) {
        Rng r = derive_rng(seed, 0, static_cast<std::uint64_t>(s));
        const auto batch = draw_training_batch<float>(enc, mc.m, mc.n, cfg.mask.probs, cfg.mask.batch, r);
        const double l = mcdpm_train_step(model, opt, std::span<const ConditionedExample<float>>(batch), sched, r);
        last = {l};
        csv.add(s, last);
        if ((s + 1) % kMaskProbeEvery == 0)
          probe_csv.add(s, std::array{probe_loss(model, probe, sched, cfg.mask.batch)});
        if ((s + 1) % report_every(cfg.mask.steps) == 0) log << "train mask: step " << s + 1 << "/" << cfg.mask.steps << " loss " << l << "\n";
      }
      header["step"] = std::max<std::int64_t>(start, cfg.mask.steps);
      save_checkpoint(stem, header, params, &opt);
      csv.flush();
      probe_csv.flush();
      break;
    }
    case Stage::Image: {
      const SeqGenData data = make_seqgen_data(masks, images, codec);
      const std::uint64_t seed = detail::stage_seed(cfg, stream::kImageTrain);
      SeqGenModel model(cfg.image.channels, seed);
      const auto params = model.parameters();
      nn::Adam<float> opt(params, {.lr = cfg.image.lr});
      const auto header = detail::base_header(cfg, stage, UNetConfig{SeqGenModel::kInputs, 1, cfg.image.channels, 0, 64}, 0, seed);
      const fs::path stem = paths::checkpoint(cfg, "image");
      const std::int64_t start = resume ? detail::resume_from(stem, header, params, opt) : 0;
      detail::LossLog csv(paths::loss_csv(cfg, stage), "step,loss", start, resume);
      for (std::int64_t s = start; s < cfg.image.steps; ++s) {
        Rng r = derive_rng(seed, 0, static_cast<std::uint64_t>(s));
        const double l = seqgen_train_step(model, opt, data, cfg.image.batch, r);
        last = {l};
        csv.add(s, last);
        if ((s + 1) % report_every(cfg.image.steps) == 0) log << "train image: step " << s + 1 << "/" << cfg.image.steps << " loss " << l << "\n";
      }
      auto out = header;
      out["step"] = std::max<std::int64_t>(start, cfg.image.steps);
      save_checkpoint(stem, out, params, &opt);
      csv.flush();
      break;
    }
    case Stage::Refiner: {
      const SdmData data = make_sdm_data(masks, images, codec);
      struct Branch {
        View view;
        std::uint64_t seed;
        SdmModel model;
        nn::Adam<float> opt;
        nlohmann::json header;
        std::int64_t start;
      };
      std::vector<std::unique_ptr<Branch>> branches;
      const UNetConfig u{2, 1, cfg.refiner.channels, kTimeEmbedDim, 64};
      for (View v : kAllViews) {
        const std::uint64_t seed = detail::stage_seed(cfg, stream::kRefinerTrain, static_cast<std::uint64_t>(v));
        auto b = std::make_unique<Branch>(Branch{v, seed, SdmModel(v, cfg.refiner.channels, seed), {}, {}, 0});
        b->opt = nn::Adam<float>(b->model.parameters(), {.lr = cfg.refiner.lr});
        b->header = detail::base_header(cfg, stage, u, 0, seed);
        b->header["view"] = view_name(v);
        if (resume) b->start = detail::resume_from(paths::checkpoint(cfg, paths::refiner_name(v)), b->header, b->model.parameters(), b->opt);
        branches.push_back(std::move(b));
      }
      const std::int64_t start = std::min({branches[0]->start, branches[1]->start, branches[2]->start});
      detail::LossLog csv(paths::loss_csv(cfg, stage), "step,axial,coronal,sagittal", start, resume);
      for (std::int64_t s = start; s < cfg.refiner.steps; ++s) {
        last.assign(3, std::numeric_limits<double>::quiet_NaN());
        for (auto& b : branches) {
          if (s < b->start) continue;
          Rng r = derive_rng(b->seed, 0, static_cast<std::uint64_t>(s));
          last[static_cast<std::size_t>(b->view)] = sdm_train_step(b->model, b->opt, data, sched, cfg.refiner.batch, r);
        }
        csv.add(s, last);
        if ((s + 1) % report_every(cfg.refiner.steps) == 0)
          log << "train refiner: step " << s + 1 << "/" << cfg.refiner.steps << " loss " << last[0] << " " << last[1] << " " << last[2] << "\n";
      }
      for (auto& b : branches) {
        b->header["step"] = std::max<std::int64_t>(b->start, cfg.refiner.steps);
        save_checkpoint(paths::checkpoint(cfg, paths::refiner_name(b->view)), b->header, b->model.parameters(), &b->opt);
      }
      csv.flush();
      break;
    }
  }
  log << "train " << stage_name(stage) << ": checkpoint written to " << cfg.paths.checkpoint_dir << "\n";
  return last;
}

// ---------------------------------------------------------------------------
// synthesize

struct TrainedModels {
  McDpmModel<float> mask;
  SeqGenModel image;
  std::array<SdmModel, 3> sdm;
  std::map<std::string, std::string> checkpoint_hashes;

  SdmSet sdm_set() {
    SdmSet s;
    for (auto& m : sdm) s[m.view()] = &m;
    return s;
  }
};

namespace detail {

inline nlohmann::json checked_header(const PipelineConfig& cfg, const fs::path& stem) {
  if (!fs::exists(stem.string() + ".json") || !fs::exists(stem.string() + ".bin"))
    throw IoError("missing checkpoint " + stem.string() + " (run train first)");
  const auto h = read_checkpoint_header(stem);
  if (h.at("depth") != cfg.phantom.depth || h.at("height") != cfg.phantom.height || h.at("width") != cfg.phantom.width)
    throw IoError("checkpoint " + stem.string() + " was trained on a different volume shape");
  if (h.at("labels") != cfg.phantom.labels) throw IoError("checkpoint " + stem.string() + " was trained with a different label count");
  if (schedule_from_json(h.at("schedule")).steps() != cfg.schedule.T) throw IoError("checkpoint " + stem.string() + " uses a different schedule");
  return h;
}

inline std::string blob_hash(const fs::path& stem) { return read_checkpoint_header(stem).at("blob_sha256").get<std::string>(); }

}  // namespace detail

// Architecture hyperparameters come from the checkpoint headers; the config
// only has to agree on shapes.
inline std::unique_ptr<TrainedModels> load_models(const PipelineConfig& cfg) {
  auto tm = std::make_unique<TrainedModels>();
  {
    const fs::path stem = paths::checkpoint(cfg, "mask");
    const auto h = detail::checked_header(cfg, stem);
    const McDpmConfig mc{h.at("m").get<int>(), h.at("n").get<int>(), cfg.phantom.height, cfg.phantom.width,
                         h.at("architecture").at("width").get<int>(), h.at("architecture").at("levels").get<int>()};
    tm->mask = McDpmModel<float>(mc, 0);
    if (h.value("noise_prior", false)) tm->mask.set_noise_prior(schedule_from_json(h.at("schedule")));
    load_checkpoint(stem, tm->mask.parameters());
    tm->checkpoint_hashes["mask"] = detail::blob_hash(stem);
  }
  {
    const fs::path stem = paths::checkpoint(cfg, "image");
    const auto h = detail::checked_header(cfg, stem);
    tm->image = SeqGenModel(h.at("architecture").at("width").get<int>(), 0);
    load_checkpoint(stem, tm->image.parameters());
    tm->checkpoint_hashes["image"] = detail::blob_hash(stem);
  }
  for (View v : kAllViews) {
    const fs::path stem = paths::checkpoint(cfg, paths::refiner_name(v));
    const auto h = detail::checked_header(cfg, stem);
    auto& m = tm->sdm[static_cast<std::size_t>(v)];
    m = SdmModel(v, h.at("architecture").at("width").get<int>(), 0);
    load_checkpoint(stem, m.parameters());
    tm->checkpoint_hashes[paths::refiner_name(v)] = detail::blob_hash(stem);
  }
  return tm;
}

struct SynthPair {
  std::uint64_t seed;
  PhantomPair pair;
};

// Full pipeline for one seed: mask, then image, then refinement.
inline SynthPair synthesize_one(TrainedModels& tm, const PipelineConfig& cfg, std::uint64_t seed) {
  const auto sched = cfg.make_diffusion_schedule();
  const auto codec = cfg.codec();
  const auto& mc = tm.mask.config();
  GenerationConfig gc{cfg.phantom.depth, mc.m, mc.n, cfg.mask.guidance, cfg.mask.probs, seed};
  Rng mask_rng = derive_rng(seed, 1);
  MaskVolume mask = generate_mask_volume(tm.mask, gc, codec, sched, mask_rng);
  mask.voxels = remove_isolated_voxels(mask.voxels);
  ImageVolume coarse = generate_image_volume(mask, tm.image, codec);
  if (coarse.shape() != mask.shape()) throw std::runtime_error("synthesize: image and mask shapes differ");
  Rng refine_rng = derive_rng(seed, 2);
  ImageVolume refined = refine_volume(coarse, mask, tm.sdm_set(), cfg.refine_steps, sched, codec, refine_rng);
  if (!mask.valid() || !image_in_range(refined)) throw std::runtime_error("synthesize: generated pair violates volume invariants");
  return {seed, {std::move(mask), std::move(refined)}};
}

inline nlohmann::json cmd_synthesize(const PipelineConfig& cfg, std::ostream& log = std::clog) {
  cfg.validate();
  auto tm = load_models(cfg);
  const fs::path dir = paths::synth(cfg);
  fs::create_directories(dir);
  nlohmann::json pairs = nlohmann::json::array();
  for (int i = 0; i < cfg.synth_count; ++i) {
    const std::uint64_t seed = detail::stage_seed(cfg, stream::kSynth, static_cast<std::uint64_t>(i));
    const SynthPair sp = synthesize_one(*tm, cfg, seed);
    const std::string stem = paths::pair_stem("synth", i);
    const nlohmann::json extra{{"seed", seed}, {"config_hash", cfg.hash()}};
    save_mask(dir / (stem + "_mask"), sp.pair.mask, extra);
    save_image(dir / (stem + "_image"), sp.pair.image, extra);
    pairs.push_back({{"id", stem}, {"mask", stem + "_mask"}, {"image", stem + "_image"}, {"seed", seed},
                     {"mask_sha256", file_sha256(raw_path(dir / (stem + "_mask")))},
                     {"image_sha256", file_sha256(raw_path(dir / (stem + "_image")))}});
    log << "synthesize: " << i + 1 << "/" << cfg.synth_count << " done\n";
  }
  nlohmann::json prov{{"master_seed", cfg.seed},
                      {"config_hash", cfg.hash()},
                      {"checkpoints", tm->checkpoint_hashes},
                      {"guidance_scale", cfg.mask.guidance},
                      {"refine_steps", cfg.refine_steps},
                      {"pairs", pairs}};
  write_json(paths::provenance(cfg), prov);
  return prov;
}

inline std::vector<PhantomPair> load_synthetic(const PipelineConfig& cfg) {
  const fs::path pp = paths::provenance(cfg);
  if (!fs::exists(pp)) throw IoError("synthetic set not found at " + pp.string() + " (run synthesize first)");
  const auto prov = read_json(pp);
  std::vector<PhantomPair> out;
  for (const auto& p : prov.at("pairs"))
    out.push_back({load_mask(paths::synth(cfg) / p.at("mask").get<std::string>()),
                   load_image(paths::synth(cfg) / p.at("image").get<std::string>())});
  if (out.empty()) throw IoError("synthetic set is empty");
  return out;
}

// ---------------------------------------------------------------------------
// evaluate

// Real reference set for fidelity and downstream testing is the val split;
// downstream training uses the train split.
inline EvalReport evaluate_sets(const PipelineConfig& cfg, std::span<const PhantomPair> real_train, std::span<const PhantomPair> real_test,
                                std::span<const PhantomPair> synth) {
  if (real_test.empty() || synth.empty()) throw std::invalid_argument("evaluate: real and synthetic sets must be non-empty");
  EvalReport r;
  std::vector<ImageVolume> ri, si;
  for (const auto& p : real_test) ri.push_back(p.image);
  for (const auto& p : synth) si.push_back(p.image);
  if (ri.size() >= 2 && si.size() >= 2) r.fidelity = frechet_proxy(ri, si);
  if (si.size() >= 2) r.diversity = diversity_score<float>(si);
  LabelDice sum(static_cast<std::size_t>(cfg.phantom.labels));
  std::vector<int> counts(sum.size(), 0);
  for (const auto& p : synth) {
    const auto d = alignment_dice(p.image, p.mask, cfg.phantom);
    for (std::size_t l = 0; l < sum.size(); ++l)
      if (d[l]) { sum[l] = sum[l].value_or(0.0) + *d[l]; ++counts[l]; }
  }
  for (std::size_t l = 0; l < sum.size(); ++l)
    if (counts[l]) sum[l] = *sum[l] / counts[l];
  r.alignment = sum;
  if (cfg.downstream) {
    StudyConfig sc{cfg.phantom.labels, cfg.seg2d, cfg.seg3d, detail::stage_seed(cfg, stream::kStudy)};
    r.downstream = downstream_study(real_train, synth, real_test, kAllStrategies, sc);
  }
  return r;
}

inline EvalReport cmd_evaluate(const PipelineConfig& cfg, std::ostream& log = std::clog) {
  cfg.validate();
  const LoadedDataset ds = load_dataset(cfg);
  const auto synth = load_synthetic(cfg);
  const EvalReport r = evaluate_sets(cfg, ds.train, ds.val, synth);
  const fs::path dir = cfg.paths.report_dir;
  auto j = to_json(r);
  j["config_hash"] = cfg.hash();
  j["real_test_count"] = ds.val.size();
  j["synthetic_count"] = synth.size();
  write_json(dir / "report.json", j);
  write_file(dir / "report.txt", to_text(r));
  log << to_text(r);
  return r;
}

// ---------------------------------------------------------------------------
// export-slices

// Writes <out_dir>/<name>_{axial,coronal,sagittal}.png for a mask or image volume.
inline std::vector<fs::path> cmd_export_slices(const fs::path& stem, const fs::path& out_dir) {
  const auto side = read_json(sidecar_path(stem));
  const std::string name = stem.filename().string();
  std::vector<fs::path> written;
  const std::string dtype = side.value("dtype", "");
  if (dtype == "uint8") {
    const MaskVolume m = load_mask(stem);
    const int top = std::max<int>(1, *std::max_element(m.label_set.begin(), m.label_set.end()));
    for (View v : kAllViews) {
      written.push_back(out_dir / (name + "_" + std::string(view_name(v)) + ".png"));
      export_slice_grid(written.back(), m.voxels, v, [top](std::uint8_t x) { return static_cast<std::uint8_t>(x * 255 / top); });
    }
  } else if (dtype == "float32") {
    const ImageVolume img = load_image(stem);
    for (View v : kAllViews) {
      written.push_back(out_dir / (name + "_" + std::string(view_name(v)) + ".png"));
      export_slice_grid(written.back(), img, v, [](float x) {
        return static_cast<std::uint8_t>(std::lround(std::clamp((static_cast<double>(x) + 1.0) * 127.5, 0.0, 255.0)));
      });
    }
  } else {
    throw IoError(stem.string() + ": unknown dtype '" + dtype + "'");
  }
  return written;
}

}  // namespace volsynth
