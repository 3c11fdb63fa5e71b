// Command-line front end: train / eval / infer / verify / synth.
// Exit codes: 0 success, 1 validation or IO error, 2 verification failure.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

#include "egf/commands.hpp"
#include "egf/synth.hpp"
#include "egf/verify.hpp"

namespace {

std::optional<std::array<std::int64_t, 2>> parse_size(const std::string& s) {
  if (s.empty()) return std::nullopt;
  const auto x = s.find('x');
  egf::check_arg(x != std::string::npos && x > 0 && x + 1 < s.size(),
                 "expected HxW, got \"" + s + "\"");
  return std::array<std::int64_t, 2>{std::stoll(s.substr(0, x)),
                                     std::stoll(s.substr(x + 1))};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EGFNet RGB-thermal scene parsing"};
  app.require_subcommand(1);

  std::string config_path, checkpoint_path, split = "test", metrics_out;
  std::string rgb_path, thermal_path, out_dir, resize_spec, synth_out;
  std::int64_t synth_samples = 4, synth_classes = 9;
  std::uint64_t synth_seed = 0;
  std::string synth_size = "64x64";

  CLI::App* train = app.add_subcommand("train", "train a model from a JSON config");
  train->add_option("--config", config_path, "experiment config JSON")->required();

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  eval->add_option("--config", config_path)->required();
  eval->add_option("--checkpoint", checkpoint_path)->required();
  eval->add_option("--split", split, "split file name (train/val/test)");
  eval->add_option("--out", metrics_out, "write the JSON metrics report here");

  CLI::App* infer = app.add_subcommand("infer", "run one RGB/thermal pair");
  infer->add_option("--config", config_path)->required();
  infer->add_option("--checkpoint", checkpoint_path)->required();
  infer->add_option("--rgb", rgb_path)->required();
  infer->add_option("--thermal", thermal_path)->required();
  infer->add_option("--out", out_dir)->required();
  infer->add_option("--resize", resize_spec, "resize inputs to HxW first");

  CLI::App* verify = app.add_subcommand("verify", "run the self-check suites");

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  synth->add_option("--out", synth_out)->required();
  synth->add_option("--samples", synth_samples);
  synth->add_option("--seed", synth_seed);
  synth->add_option("--size", synth_size, "HxW, divisible by 32");
  synth->add_option("--classes", synth_classes);

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) {
      egf::ExperimentConfig cfg = egf::ExperimentConfig::load(config_path);
      egf::Trainer trainer(cfg);
      trainer.run();
      std::cout << "trained " << trainer.step_count() << " steps\n"
                << "checkpoint: " << cfg.checkpoint << "\n"
                << "loss log:   " << cfg.loss_log << "\n";
      return 0;
    }
    if (eval->parsed()) {
      egf::ExperimentConfig cfg = egf::ExperimentConfig::load(config_path);
      egf::EvalReport report = egf::run_evaluation(cfg, checkpoint_path, split);
      std::cout << report.to_table();
      if (!metrics_out.empty()) {
        const auto parent = std::filesystem::path(metrics_out).parent_path();
        if (!parent.empty()) std::filesystem::create_directories(parent);
        std::ofstream os(metrics_out, std::ios::binary);
        egf::check_arg(os.good(), "cannot open " + metrics_out);
        os << report.to_json().dump(2) << "\n";
        std::cout << "report: " << metrics_out << "\n";
      }
      return 0;
    }
    if (infer->parsed()) {
      egf::ExperimentConfig cfg = egf::ExperimentConfig::load(config_path);
      auto outputs = egf::run_inference(cfg, checkpoint_path, rgb_path, thermal_path,
                                        out_dir, parse_size(resize_spec));
      std::cout << "prediction: " << outputs.prediction << "\n"
                << "boundary:   " << outputs.boundary << "\n"
                << "edge map:   " << outputs.edge << "\n";
      return 0;
    }
    if (verify->parsed()) {
      const auto results = egf::run_verification();
      for (const auto& r : results) {
        std::cout << (r.passed ? "[PASS] " : "[FAIL] ") << r.name << ": " << r.detail
                  << "\n";
      }
      return egf::all_passed(results) ? 0 : 2;
    }
    if (synth->parsed()) {
      egf::SynthConfig cfg;
      cfg.samples = synth_samples;
      cfg.seed = synth_seed;
      cfg.num_classes = synth_classes;
      const auto size = parse_size(synth_size);
      if (size) {
        cfg.height = (*size)[0];
        cfg.width = (*size)[1];
      }
      egf::generate_synthetic_dataset(synth_out, cfg);
      std::cout << "wrote " << cfg.samples << " samples to " << synth_out << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
