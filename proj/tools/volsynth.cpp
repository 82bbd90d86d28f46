// Command-line front end: make-data, train, synthesize, evaluate, export-slices.

#include <CLI11.hpp>

#include "volsynth/pipeline.hpp"

namespace {

using namespace volsynth;

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> count;
  std::optional<int> steps;
  std::optional<std::string> mode_probs;
  std::optional<double> guidance;
  std::optional<int> refine_steps;
  std::optional<std::string> data_dir, checkpoint_dir, synth_dir, report_dir;
};

ModeProbabilities parse_mode_probs(const std::string& s) {
  std::vector<double> v;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    std::size_t used = 0;
    double x = 0;
    try {
      x = std::stod(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != tok.size()) throw ConfigError("--mode-probs: '" + tok + "' is not a number");
    v.push_back(x);
  }
  if (v.size() != 3) throw ConfigError("--mode-probs: expected three comma-separated values p_forward,p_backward,p_uncondition");
  return {v[0], v[1], v[2]};
}

// Precedence: command line > config file > built-in defaults.
PipelineConfig resolve(const Overrides& o, const std::string& command, std::optional<Stage> stage = std::nullopt) {
  PipelineConfig c = o.config.empty() ? PipelineConfig{} : PipelineConfig::load(o.config);
  if (o.seed) c.seed = *o.seed;
  if (o.count) (command == "make-data" ? c.count : c.synth_count) = *o.count;
  if (o.steps && stage) {
    switch (*stage) {
      case Stage::Mask: c.mask.steps = *o.steps; break;
      case Stage::Image: c.image.steps = *o.steps; break;
      case Stage::Refiner: c.refiner.steps = *o.steps; break;
    }
  }
  if (o.mode_probs) c.mask.probs = parse_mode_probs(*o.mode_probs);
  if (o.guidance) c.mask.guidance = *o.guidance;
  if (o.refine_steps) c.refine_steps = *o.refine_steps;
  if (o.data_dir) c.paths.data_dir = *o.data_dir;
  if (o.checkpoint_dir) c.paths.checkpoint_dir = *o.checkpoint_dir;
  if (o.synth_dir) c.paths.synth_dir = *o.synth_dir;
  if (o.report_dir) c.paths.report_dir = *o.report_dir;
  c.validate();
  return c;
}

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "JSON configuration file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "master seed");
  cmd->add_option("--data-dir", o.data_dir, "dataset directory");
  cmd->add_option("--checkpoint-dir", o.checkpoint_dir, "checkpoint directory");
  cmd->add_option("--synth-dir", o.synth_dir, "synthetic output directory");
  cmd->add_option("--report-dir", o.report_dir, "report directory");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Synthetic 3D mask/image pair generation with multi-condition diffusion"};
  app.require_subcommand(1);
  Overrides o;
  std::string stage_name_arg;
  bool resume = false;
  std::string input, output = ".";

  auto* make_data = app.add_subcommand("make-data", "generate the phantom dataset and its manifest");
  add_common(make_data, o);
  make_data->add_option("--count", o.count, "number of phantom volumes");

  auto* train = app.add_subcommand("train", "train one stage: mask, image or refiner");
  add_common(train, o);
  train->add_option("--stage", stage_name_arg, "mask | image | refiner")->required();
  train->add_option("--steps", o.steps, "training steps for the stage");
  train->add_option("--mode-probs", o.mode_probs, "p_forward,p_backward,p_uncondition");
  train->add_flag("--resume", resume, "continue from the stage checkpoint");

  auto* synth = app.add_subcommand("synthesize", "generate paired mask/image volumes");
  add_common(synth, o);
  synth->add_option("--count", o.count, "number of pairs");
  synth->add_option("--guidance-scale", o.guidance, "classifier-free guidance scale (>= 1)");
  synth->add_option("--refine-steps", o.refine_steps, "refinement noise level k");

  auto* evaluate = app.add_subcommand("evaluate", "score the synthetic set against the real one");
  add_common(evaluate, o);

  auto* exp = app.add_subcommand("export-slices", "write PNG slice grids for one volume, one per view");
  exp->add_option("--input", input, "volume stem (path without .raw/.json)")->required();
  exp->add_option("--output", output, "output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*make_data) {
      cmd_make_data(resolve(o, "make-data"));
    } else if (*train) {
      const Stage s = stage_from_name(stage_name_arg);
      cmd_train(resolve(o, "train", s), s, resume);
    } else if (*synth) {
      cmd_synthesize(resolve(o, "synthesize"));
    } else if (*evaluate) {
      cmd_evaluate(resolve(o, "evaluate"));
    } else if (*exp) {
      for (const auto& p : cmd_export_slices(input, output)) std::clog << "wrote " << p.string() << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
