// Orchestration behind the CLI subcommands: the training loop (augment,
// forward, multitask loss, Adam), split evaluation with optional tag
// sub-reports and parallel workers, and single-pair inference dumps.

#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <thread>

#include "egf/checkpoint.hpp"
#include "egf/config.hpp"
#include "egf/data_io.hpp"
#include "egf/edge_prior.hpp"
#include "egf/metrics.hpp"
#include "egf/supervision.hpp"

namespace egf {

// Shortest round-trip decimal form; locale-free and stable across runs.
inline std::string fmt_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

struct Batch {
  Tensor rgb;
  Tensor thermal;
  LabelMap labels;
};

inline Batch stack_samples(const std::vector<Sample>& samples) {
  check_arg(!samples.empty(), "stack_samples: empty batch");
  const Shape4 rs = samples.front().rgb.shape();
  const std::int64_t B = static_cast<std::int64_t>(samples.size());
  Batch b;
  b.rgb = Tensor::zeros(Shape4{B, 3, rs.h, rs.w});
  b.thermal = Tensor::zeros(Shape4{B, 1, rs.h, rs.w});
  b.labels = LabelMap(B, rs.h, rs.w);
  for (std::int64_t i = 0; i < B; ++i) {
    const Sample& s = samples[static_cast<std::size_t>(i)];
    check_arg(s.rgb.shape() == rs, "stack_samples: inconsistent sample sizes");
    std::copy(s.rgb.values().begin(), s.rgb.values().end(),
              b.rgb.values().begin() + i * 3 * rs.h * rs.w);
    std::copy(s.thermal.values().begin(), s.thermal.values().end(),
              b.thermal.values().begin() + i * rs.h * rs.w);
    std::copy(s.labels.v.begin(), s.labels.v.end(),
              b.labels.v.begin() + i * rs.h * rs.w);
  }
  return b;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

class Trainer {
 public:
  explicit Trainer(const ExperimentConfig& cfg)
      : cfg_(cfg), spec_(DatasetSpec::load(cfg.dataset)), rng_(cfg.seed),
        adam_(cfg.optimizer) {
    cfg_.validate();
    EgfNetConfig net_cfg;
    net_cfg.encoder = cfg_.encoder;
    net_cfg.channels = cfg_.encoder.reduced_channels;
    net_cfg.num_classes = spec_.num_classes();
    net_cfg.variants = cfg_.variants;
    auto init_stream = rng_.stream("init");
    net_ = EgfNet::init(net_cfg, init_stream);
    net_.visit([&](const std::string& name, Tensor& t, bool is_buffer) {
      if (!is_buffer) params_.emplace_back(name, t);
    });

    for (const SplitEntry& e : read_split(spec_, "train"))
      train_set_.push_back(load_sample(spec_, e.id));
    check_arg(cfg_.crop[0] <= spec_.height && cfg_.crop[1] <= spec_.width,
              "config: crop exceeds dataset size");

    std::vector<std::int64_t> hist(static_cast<std::size_t>(spec_.num_classes()), 0);
    for (const Sample& s : train_set_)
      for (std::int32_t l : s.labels.v) {
        if (cfg_.ignore_index && l == *cfg_.ignore_index) continue;
        ++hist[static_cast<std::size_t>(l)];
      }
    weights_ = class_weights(hist);
    weights_.boundary = cfg_.boundary_weights;
    log_lines_.push_back("step,loss_b1,loss_b2,loss_b3,loss_s1,loss_s2,total");
  }

  LossBreakdown train_step(const std::vector<Sample>& batch_samples) {
    Batch batch = stack_samples(batch_samples);
    Tensor edge = prior_edge_map(batch.rgb, batch.thermal);
    BoundaryTarget btarget =
        boundary_gt(batch.labels, spec_.num_classes(), cfg_.boundary_dilate_radius);

    LossBreakdown lb;
    try {
      GradTape tape;
      RunCtx ctx = RunCtx::train(&tape);
      PredictionSet preds = net_.forward(ctx, batch.rgb, batch.thermal, edge);
      lb = total_loss(&tape, preds, batch.labels, btarget, weights_,
                      cfg_.variants.no_sup, cfg_.ignore_index);
      backward(lb.total);

      // Ablation flags detach whole modules from the objective; only the
      // supervised subgraph steps. With the full model every parameter must
      // have received a gradient.
      std::vector<std::pair<std::string, Tensor>> stepped;
      for (const auto& p : params_)
        if (p.second.has_grad()) stepped.push_back(p);
      const VariantFlags& v = cfg_.variants;
      if (!(v.no_sup || v.no_mfm || v.no_gim || v.no_sim)) {
        check_arg(stepped.size() == params_.size(),
                  "dead parameters: gradient missing for " +
                      std::to_string(params_.size() - stepped.size()) +
                      " tensors");
      }
      adam_.step(stepped);
      for (const auto& p : params_) p.second.clear_grad();
    } catch (const std::domain_error& e) {
      throw std::runtime_error("training aborted at step " +
                               std::to_string(step_ + 1) + ": " + e.what());
    }
    ++step_;
    log_lines_.push_back(std::to_string(step_) + "," + fmt_double(lb.boundary[0]) +
                         "," + fmt_double(lb.boundary[1]) + "," +
                         fmt_double(lb.boundary[2]) + "," + fmt_double(lb.sem_side) +
                         "," + fmt_double(lb.sem_final) + "," +
                         fmt_double(lb.total.item()));
    return lb;
  }

  // One pass over the train split: deterministic shuffle, fixed-size batches
  // (the final short batch trains too).
  double train_epoch(std::int64_t epoch) {
    std::vector<std::size_t> order(train_set_.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Pcg32 shuffle = rng_.stream("shuffle", static_cast<std::uint64_t>(epoch));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle.bounded(static_cast<std::uint32_t>(i))]);

    double last_total = 0.0;
    for (std::size_t pos = 0; pos < order.size();
         pos += static_cast<std::size_t>(cfg_.batch_size)) {
      std::vector<Sample> batch;
      for (std::size_t k = pos;
           k < std::min(order.size(), pos + static_cast<std::size_t>(cfg_.batch_size));
           ++k) {
        Pcg32 aug = rng_.stream("augment", (static_cast<std::uint64_t>(epoch) << 32) |
                                               static_cast<std::uint64_t>(k));
        batch.push_back(
            augment(train_set_[order[k]], cfg_.crop[0], cfg_.crop[1], aug));
      }
      last_total = train_step(batch).total.item();
    }
    return last_total;
  }

  void run() {
    for (std::int64_t e = 0; e < cfg_.epochs; ++e) train_epoch(e);
    write_outputs();
  }

  void write_outputs() {
    save_checkpoint(cfg_.checkpoint, net_);
    const auto parent = std::filesystem::path(cfg_.loss_log).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::ofstream os(cfg_.loss_log, std::ios::binary);
    check_arg(os.good(), "cannot open " + cfg_.loss_log + " for writing");
    for (const std::string& line : log_lines_) os << line << "\n";
  }

  EgfNet& net() { return net_; }
  const DatasetSpec& dataset() const { return spec_; }
  const ExperimentConfig& config() const { return cfg_; }
  const ClassWeights& weights() const { return weights_; }
  std::int64_t step_count() const { return step_; }

 private:
  ExperimentConfig cfg_;
  DatasetSpec spec_;
  Rng rng_;
  Adam adam_;
  EgfNet net_;
  std::vector<std::pair<std::string, Tensor>> params_;
  std::vector<Sample> train_set_;
  ClassWeights weights_;
  std::vector<std::string> log_lines_;
  std::int64_t step_ = 0;
};

inline void run_training(const ExperimentConfig& cfg) {
  Trainer trainer(cfg);
  trainer.run();
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct EvalReport {
  std::vector<ClassStat> stats;
  MetricSummary summary;
  std::vector<std::pair<std::string, ConfusionMatrix>> by_tag;  // sorted by tag
  std::vector<std::string> class_names;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["overall"] = metrics_json(stats, summary, class_names);
    if (!by_tag.empty()) {
      nlohmann::json tags;
      for (const auto& [tag, cm] : by_tag)
        tags[tag] = metrics_json(per_class(cm), egf::summary(cm), class_names);
      j["by_tag"] = tags;
    }
    return j;
  }

  std::string to_table() const {
    std::string out = metrics_table(stats, summary, class_names);
    for (const auto& [tag, cm] : by_tag) {
      out += "\n[" + tag + "]\n";
      out += metrics_table(per_class(cm), egf::summary(cm), class_names);
    }
    return out;
  }
};

// Eval-mode forward for one sample; returns the predicted label map.
inline LabelMap predict_labels(EgfNet& net, const Sample& s) {
  Tensor edge = prior_edge_map(s.rgb, s.thermal);
  PredictionSet preds = net.forward(RunCtx::eval(), s.rgb, s.thermal, edge);
  return argmax_channels(preds.sem_final);
}

// Confusion matrices accumulate per worker and merge by addition, so the
// report is independent of the worker count.
inline EvalReport evaluate_split(EgfNet& net, const DatasetSpec& spec,
                                 const std::vector<SplitEntry>& entries) {
  const int workers = static_cast<int>(
      std::min<std::size_t>(static_cast<std::size_t>(max_threads()), entries.size()));
  const std::int64_t C = spec.num_classes();

  struct WorkerState {
    ConfusionMatrix overall;
    std::map<std::string, ConfusionMatrix> tags;
    std::exception_ptr error;
  };
  std::vector<WorkerState> states(static_cast<std::size_t>(std::max(workers, 1)));

  auto work = [&](int w) {
    WorkerState& st = states[static_cast<std::size_t>(w)];
    st.overall = ConfusionMatrix(C);
    try {
      for (std::size_t i = static_cast<std::size_t>(w); i < entries.size();
           i += static_cast<std::size_t>(workers)) {
        const SplitEntry& e = entries[i];
        Sample s = load_sample(spec, e.id);
        LabelMap pred = predict_labels(net, s);
        accumulate(st.overall, pred, s.labels);
        if (!e.tag.empty()) {
          auto [it, inserted] = st.tags.try_emplace(e.tag, C);
          accumulate(it->second, pred, s.labels);
        }
      }
    } catch (...) {
      st.error = std::current_exception();
    }
  };

  if (workers <= 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }

  ConfusionMatrix overall(C);
  std::map<std::string, ConfusionMatrix> tag_cms;
  for (const WorkerState& st : states) {
    if (st.error) std::rethrow_exception(st.error);
    if (st.overall.num_classes == C) overall.merge(st.overall);
    for (const auto& [tag, cm] : st.tags) {
      auto [it, inserted] = tag_cms.try_emplace(tag, C);
      it->second.merge(cm);
    }
  }

  EvalReport report;
  report.class_names = spec.class_names;
  report.stats = per_class(overall);
  report.summary = summary(overall);
  for (auto& [tag, cm] : tag_cms) report.by_tag.emplace_back(tag, cm);
  return report;
}

inline EvalReport run_evaluation(const ExperimentConfig& cfg,
                                 const std::string& checkpoint_path,
                                 const std::string& split) {
  DatasetSpec spec = DatasetSpec::load(cfg.dataset);
  EgfNetConfig net_cfg;
  net_cfg.encoder = cfg.encoder;
  net_cfg.channels = cfg.encoder.reduced_channels;
  net_cfg.num_classes = spec.num_classes();
  net_cfg.variants = cfg.variants;
  auto init_stream = Rng(cfg.seed).stream("init");
  EgfNet net = EgfNet::init(net_cfg, init_stream);
  load_checkpoint(checkpoint_path, net);
  return evaluate_split(net, spec, read_split(spec, split));
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

struct InferOutputs {
  std::string prediction;
  std::string boundary;
  std::string edge;
};

inline InferOutputs run_inference(const ExperimentConfig& cfg,
                                  const std::string& checkpoint_path,
                                  const std::string& rgb_path,
                                  const std::string& thermal_path,
                                  const std::string& out_dir,
                                  std::optional<std::array<std::int64_t, 2>> resize) {
  DatasetSpec spec = DatasetSpec::load(cfg.dataset);
  Image rgb_img = read_png(rgb_path);
  check_arg(rgb_img.channels == 3, rgb_path + ": expected RGB input");
  Image th_img = read_png(thermal_path);
  check_arg(th_img.channels == 1, thermal_path + ": expected single-channel input");
  Tensor rgb = image_to_tensor(rgb_img);
  Tensor thermal = image_to_tensor(th_img);
  check_arg(rgb.shape().h == thermal.shape().h && rgb.shape().w == thermal.shape().w,
            "inference: rgb and thermal sizes differ");
  if (resize) {
    rgb = resize_bilinear(rgb, (*resize)[0], (*resize)[1]);
    thermal = resize_bilinear(thermal, (*resize)[0], (*resize)[1]);
  }
  check_arg(rgb.shape().h % 32 == 0 && rgb.shape().w % 32 == 0,
            "inference: input size must be divisible by 32 (or pass a resize)");

  EgfNetConfig net_cfg;
  net_cfg.encoder = cfg.encoder;
  net_cfg.channels = cfg.encoder.reduced_channels;
  net_cfg.num_classes = spec.num_classes();
  net_cfg.variants = cfg.variants;
  auto init_stream = Rng(cfg.seed).stream("init");
  EgfNet net = EgfNet::init(net_cfg, init_stream);
  load_checkpoint(checkpoint_path, net);

  Tensor edge = prior_edge_map(rgb, thermal);
  PredictionSet preds = net.forward(RunCtx::eval(), rgb, thermal, edge);

  std::filesystem::create_directories(out_dir);
  InferOutputs out;
  out.prediction = (std::filesystem::path(out_dir) / "pred.png").string();
  out.boundary = (std::filesystem::path(out_dir) / "boundary.png").string();
  out.edge = (std::filesystem::path(out_dir) / "edge.png").string();

  write_png(out.prediction,
            colorize(argmax_channels(preds.sem_final), spec.palette));

  Tensor b3 = preds.boundary[2].clone();
  for (double& v : b3.values()) v = detail::sigmoid(v);
  write_png(out.boundary, tensor_to_image(b3, 8));
  write_png(out.edge, tensor_to_image(edge, 8));
  return out;
}

}  // namespace egf
