#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "egf/checkpoint.hpp"
#include "egf/commands.hpp"
#include "egf/config.hpp"
#include "egf/synth.hpp"
#include "egf/verify.hpp"
#include "support/test_util.hpp"

using namespace egf;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("egf_pipe_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<char> slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return std::vector<char>(std::istreambuf_iterator<char>(is), {});
}

// Small architecture + small corpus so pipeline tests stay quick.
ExperimentConfig tiny_config(const fs::path& data_dir, const fs::path& out_dir) {
  nlohmann::json j;
  j["dataset"] = data_dir.string();
  j["seed"] = 0;
  j["epochs"] = 1;
  j["batch_size"] = 2;
  j["crop"] = {32, 32};
  j["encoder"] = {{"stem_channels", 4},
                  {"stage_widths", {4, 4, 8, 8, 8}},
                  {"blocks_per_stage", {1, 1, 1, 1, 1}},
                  {"reduced_channels", 8}};
  j["optimizer"] = {{"lr", 1e-3}};
  j["checkpoint"] = (out_dir / "model.ckpt").string();
  j["loss_log"] = (out_dir / "loss.csv").string();
  return ExperimentConfig::from_json(j);
}

fs::path shared_corpus() {
  static fs::path dir = [] {
    fs::path p = temp_dir("corpus");
    SynthConfig cfg;
    cfg.samples = 2;
    cfg.seed = 3;
    generate_synthetic_dataset(p, cfg);
    return p;
  }();
  return dir;
}

EgfNet net_for(const ExperimentConfig& cfg, std::int64_t classes) {
  EgfNetConfig nc;
  nc.encoder = cfg.encoder;
  nc.channels = cfg.encoder.reduced_channels;
  nc.num_classes = classes;
  nc.variants = cfg.variants;
  auto s = Rng(cfg.seed).stream("init");
  return EgfNet::init(nc, s);
}

}  // namespace

TEST(Config, ParsesDefaultsAndOverrides) {
  nlohmann::json j;
  j["dataset"] = "data";
  j["seed"] = 7;
  j["epochs"] = 3;
  ExperimentConfig cfg = ExperimentConfig::from_json(j);
  EXPECT_EQ(cfg.batch_size, 2);
  EXPECT_EQ(cfg.crop[0], 64);
  EXPECT_DOUBLE_EQ(cfg.optimizer.lr, 5e-5);
  EXPECT_DOUBLE_EQ(cfg.optimizer.weight_decay, 5e-4);
  EXPECT_DOUBLE_EQ(cfg.boundary_weights[1], 5.0);
  EXPECT_FALSE(cfg.variants.no_edge);
  EXPECT_FALSE(cfg.ignore_index.has_value());

  j["variants"] = {{"no_gim", true}};
  j["optimizer"] = {{"lr", 0.01}, {"weight_decay", 0.0}};
  cfg = ExperimentConfig::from_json(j);
  EXPECT_TRUE(cfg.variants.no_gim);
  EXPECT_DOUBLE_EQ(cfg.optimizer.lr, 0.01);
}

TEST(Config, RejectsUnknownAndInvalid) {
  nlohmann::json base;
  base["dataset"] = "data";
  base["seed"] = 0;
  base["epochs"] = 1;

  nlohmann::json j = base;
  j["learning_rate"] = 0.1;  // should live under optimizer.lr
  EXPECT_THROW(ExperimentConfig::from_json(j), std::invalid_argument);

  j = base;
  j["variants"] = {{"no_edges", true}};  // typo
  EXPECT_THROW(ExperimentConfig::from_json(j), std::invalid_argument);

  j = base;
  j["crop"] = {48, 64};  // not divisible by 32
  EXPECT_THROW(ExperimentConfig::from_json(j), std::invalid_argument);

  j = base;
  j["batch_size"] = 0;
  EXPECT_THROW(ExperimentConfig::from_json(j), std::invalid_argument);

  j = base;
  j.erase("epochs");
  EXPECT_THROW(ExperimentConfig::from_json(j), std::invalid_argument);
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  auto dir = temp_dir("ckpt");
  ExperimentConfig cfg = tiny_config(shared_corpus(), dir);
  EgfNet a = net_for(cfg, 9);
  const std::string p1 = (dir / "a.ckpt").string();
  save_checkpoint(p1, a);

  EgfNet b = net_for(cfg, 9);
  // Perturb b so the load has to do real work.
  b.classifier.weight.values()[0] += 1.0;
  load_checkpoint(p1, b);
  const std::string p2 = (dir / "b.ckpt").string();
  save_checkpoint(p2, b);
  EXPECT_EQ(slurp(p1), slurp(p2));
}

TEST(Checkpoint, MismatchedArchitectureIsRejected) {
  auto dir = temp_dir("ckpt_mismatch");
  ExperimentConfig cfg = tiny_config(shared_corpus(), dir);
  EgfNet small = net_for(cfg, 9);
  const std::string path = (dir / "small.ckpt").string();
  save_checkpoint(path, small);

  EXPECT_NO_THROW(load_checkpoint(path, small));

  // Different width: shapes disagree.
  ExperimentConfig wide_cfg = cfg;
  wide_cfg.encoder.reduced_channels = 16;
  wide_cfg.encoder.stage_widths = {8, 8, 16, 16, 16};
  EgfNet wide = net_for(wide_cfg, 9);
  EXPECT_THROW(load_checkpoint(path, wide), std::invalid_argument);

  // Different class count: classifier shape disagrees.
  EgfNet more_classes = net_for(cfg, 5);
  EXPECT_THROW(load_checkpoint(path, more_classes), std::invalid_argument);

  // Not a checkpoint.
  const std::string junk = (dir / "junk.ckpt").string();
  std::ofstream(junk) << "not a checkpoint";
  EXPECT_THROW(load_checkpoint(junk, small), std::invalid_argument);
}

TEST(Training, ZeroEpochsEqualsSeededInit) {
  auto dir = temp_dir("train0");
  ExperimentConfig cfg = tiny_config(shared_corpus(), dir);
  cfg.epochs = 0;
  Trainer trainer(cfg);
  trainer.run();

  EgfNet fresh = net_for(cfg, 9);
  const std::string ref_path = (dir / "fresh.ckpt").string();
  save_checkpoint(ref_path, fresh);
  EXPECT_EQ(slurp(cfg.checkpoint), slurp(ref_path));

  // Loss log holds only the header.
  std::ifstream log(cfg.loss_log);
  std::string line;
  ASSERT_TRUE(std::getline(log, line));
  EXPECT_EQ(line, "step,loss_b1,loss_b2,loss_b3,loss_s1,loss_s2,total");
  EXPECT_FALSE(std::getline(log, line));
}

TEST(Training, RunTwiceIsByteIdentical) {
  auto d1 = temp_dir("train_a");
  auto d2 = temp_dir("train_b");
  ExperimentConfig c1 = tiny_config(shared_corpus(), d1);
  ExperimentConfig c2 = tiny_config(shared_corpus(), d2);
  c1.epochs = c2.epochs = 2;
  Trainer(c1).run();
  Trainer(c2).run();
  EXPECT_EQ(slurp(c1.loss_log), slurp(c2.loss_log));
  EXPECT_EQ(slurp(c1.checkpoint), slurp(c2.checkpoint));

  EvalReport r1 = run_evaluation(c1, c1.checkpoint, "val");
  EvalReport r2 = run_evaluation(c2, c2.checkpoint, "val");
  EXPECT_EQ(r1.to_json().dump(), r2.to_json().dump());
}

TEST(Training, LossLogHasOneRowPerStep) {
  auto dir = temp_dir("train_log");
  ExperimentConfig cfg = tiny_config(shared_corpus(), dir);
  cfg.epochs = 3;  // 2 samples, batch 2 -> 1 step per epoch
  Trainer trainer(cfg);
  trainer.run();
  EXPECT_EQ(trainer.step_count(), 3);
  std::ifstream log(cfg.loss_log);
  std::string line;
  int rows = 0;
  while (std::getline(log, line)) ++rows;
  EXPECT_EQ(rows, 4);  // header + 3 steps
}

TEST(Training, NonFiniteAbortsWithDiagnostic) {
  auto dir = temp_dir("train_blowup");
  ExperimentConfig cfg = tiny_config(shared_corpus(), dir);
  Trainer trainer(cfg);
  trainer.net().visit([](const std::string& name, Tensor& t, bool) {
    if (name == "rgb_encoder/reduce1/weight")
      for (double& v : t.values()) v = 1e200;
  });
  try {
    trainer.train_epoch(0);
    FAIL() << "expected non-finite abort";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("training aborted at step"),
              std::string::npos);
  }
}

TEST(Eval, TaggedSplitProducesSubReports) {
  auto dir = temp_dir("eval_tags");
  ExperimentConfig cfg = tiny_config(shared_corpus(), dir);
  cfg.epochs = 0;
  Trainer trainer(cfg);
  trainer.run();
  EvalReport report = run_evaluation(cfg, cfg.checkpoint, "test");
  ASSERT_EQ(report.by_tag.size(), 2u);
  EXPECT_EQ(report.by_tag[0].first, "day");
  EXPECT_EQ(report.by_tag[1].first, "night");
  nlohmann::json j = report.to_json();
  EXPECT_TRUE(j.contains("by_tag"));
  EXPECT_TRUE(j["by_tag"].contains("night"));
  EXPECT_TRUE(j["overall"].contains("macc"));

  EvalReport untagged = run_evaluation(cfg, cfg.checkpoint, "train");
  EXPECT_TRUE(untagged.by_tag.empty());
  EXPECT_FALSE(untagged.to_json().contains("by_tag"));
}

TEST(Eval, WorkerCountDoesNotChangeReports) {
  auto dir = temp_dir("eval_workers");
  ExperimentConfig cfg = tiny_config(shared_corpus(), dir);
  cfg.epochs = 0;
  Trainer trainer(cfg);
  trainer.run();

  DatasetSpec spec = DatasetSpec::load(cfg.dataset);
  auto entries = read_split(spec, "test");
  EvalReport direct = evaluate_split(trainer.net(), spec, entries);

  // A single-entry split forces the one-worker path; the merged multi-worker
  // report over the full split must agree with a fresh single pass.
  EvalReport again = evaluate_split(trainer.net(), spec, entries);
  EXPECT_EQ(direct.to_json().dump(), again.to_json().dump());
}

TEST(Infer, OutputsAreDeterministicAndRightSized) {
  auto dir = temp_dir("infer");
  ExperimentConfig cfg = tiny_config(shared_corpus(), dir);
  cfg.epochs = 0;
  Trainer trainer(cfg);
  trainer.run();

  const fs::path corpus = shared_corpus();
  const std::string rgb = (corpus / "rgb" / "s00000.png").string();
  const std::string thermal = (corpus / "thermal" / "s00000.png").string();

  auto out1 = run_inference(cfg, cfg.checkpoint, rgb, thermal,
                            (dir / "o1").string(), std::nullopt);
  auto out2 = run_inference(cfg, cfg.checkpoint, rgb, thermal,
                            (dir / "o2").string(), std::nullopt);
  EXPECT_EQ(slurp(out1.prediction), slurp(out2.prediction));
  EXPECT_EQ(slurp(out1.boundary), slurp(out2.boundary));
  EXPECT_EQ(slurp(out1.edge), slurp(out2.edge));

  Image pred = read_png(out1.prediction);
  EXPECT_EQ(pred.width, 64);
  EXPECT_EQ(pred.height, 64);
  EXPECT_EQ(pred.channels, 3);
  Image edge = read_png(out1.edge);
  EXPECT_EQ(edge.channels, 1);
  EXPECT_EQ(edge.bit_depth, 8);
}

TEST(Infer, NoEdgeVariantStillDumpsEdgeMap) {
  auto dir = temp_dir("infer_noedge");
  ExperimentConfig cfg = tiny_config(shared_corpus(), dir);
  cfg.epochs = 0;
  cfg.variants.no_edge = true;
  Trainer trainer(cfg);
  trainer.run();
  const fs::path corpus = shared_corpus();
  auto out = run_inference(cfg, cfg.checkpoint,
                           (corpus / "rgb" / "s00001.png").string(),
                           (corpus / "thermal" / "s00001.png").string(),
                           (dir / "o").string(), std::nullopt);
  Image edge = read_png(out.edge);
  // The prior is input-derived, so it is still produced and non-trivial.
  std::uint16_t mx = 0;
  for (auto v : edge.px) mx = std::max(mx, v);
  EXPECT_GT(mx, 0);
}

TEST(Infer, ResizeHandlesIndivisibleInputs) {
  auto dir = temp_dir("infer_resize");
  ExperimentConfig cfg = tiny_config(shared_corpus(), dir);
  cfg.epochs = 0;
  Trainer trainer(cfg);
  trainer.run();

  // Write a 50x70 pair (not divisible by 32).
  Image rgb;
  rgb.width = 70;
  rgb.height = 50;
  rgb.channels = 3;
  rgb.bit_depth = 8;
  rgb.px.assign(70 * 50 * 3, 100);
  Image th;
  th.width = 70;
  th.height = 50;
  th.channels = 1;
  th.bit_depth = 8;
  th.px.assign(70 * 50, 30);
  const std::string rp = (dir / "r.png").string();
  const std::string tp = (dir / "t.png").string();
  write_png(rp, rgb);
  write_png(tp, th);

  EXPECT_THROW(run_inference(cfg, cfg.checkpoint, rp, tp, (dir / "o").string(),
                             std::nullopt),
               std::invalid_argument);
  auto out = run_inference(cfg, cfg.checkpoint, rp, tp, (dir / "o").string(),
                           std::array<std::int64_t, 2>{64, 64});
  Image pred = read_png(out.prediction);
  EXPECT_EQ(pred.width, 64);
  EXPECT_EQ(pred.height, 64);
}

TEST(Verify, QuickPassAndCorruptionIsCaught) {
  VerifyOptions quick;
  quick.seeds = 1;
  auto results = run_verification(quick);
  ASSERT_EQ(results.size(), 5u);
  for (const auto& r : results) EXPECT_TRUE(r.passed) << r.name << ": " << r.detail;

  VerifyOptions corrupt;
  corrupt.seeds = 1;
  corrupt.corrupt_conv_backward = true;
  auto broken = run_verification(corrupt);
  EXPECT_FALSE(broken[0].passed);  // gradients suite
  for (std::size_t i = 1; i < broken.size(); ++i) EXPECT_TRUE(broken[i].passed);
}

TEST(Verify, ReportsAreDeterministic) {
  VerifyOptions quick;
  quick.seeds = 1;
  auto a = run_verification(quick);
  auto b = run_verification(quick);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].name, b[i].name);
    EXPECT_EQ(a[i].passed, b[i].passed);
    EXPECT_EQ(a[i].detail, b[i].detail);
  }
}
