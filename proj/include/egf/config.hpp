// Experiment configuration: JSON in, exhaustively validated. Unknown keys
// are errors; every default below is the documented one.

#pragma once

#include <array>
#include <fstream>
#include <optional>
#include <string>

#include <json.hpp>

#include "egf/fusion.hpp"
#include "egf/supervision.hpp"

namespace egf {

struct ExperimentConfig {
  std::string dataset;  // directory containing dataset.json and the rasters
  std::uint64_t seed = 0;
  std::int64_t epochs = 0;
  std::int64_t batch_size = 2;
  std::array<std::int64_t, 2> crop{64, 64};  // H, W
  EncoderConfig encoder;
  VariantFlags variants;
  AdamConfig optimizer;
  std::array<double, 2> boundary_weights{1.0, 5.0};
  int boundary_dilate_radius = 1;
  std::optional<std::int32_t> ignore_index;
  std::string checkpoint = "out/model.ckpt";
  std::string loss_log = "out/loss.csv";

  void validate() const {
    check_arg(!dataset.empty(), "config: dataset path is required");
    check_arg(epochs >= 0, "config: epochs must be >= 0");
    check_arg(batch_size >= 1, "config: batch_size must be >= 1");
    check_arg(crop[0] % 32 == 0 && crop[1] % 32 == 0 && crop[0] > 0 && crop[1] > 0,
              "config: crop must be positive and divisible by 32");
    encoder.validate();
    check_arg(optimizer.lr > 0, "config: lr must be positive");
    check_arg(optimizer.weight_decay >= 0, "config: weight_decay must be >= 0");
    check_arg(optimizer.beta1 > 0 && optimizer.beta1 < 1 && optimizer.beta2 > 0 &&
                  optimizer.beta2 < 1,
              "config: betas must lie in (0,1)");
    check_arg(optimizer.eps > 0, "config: eps must be positive");
    check_arg(boundary_weights[0] > 0 && boundary_weights[1] > 0,
              "config: boundary weights must be positive");
    check_arg(boundary_dilate_radius >= 0, "config: dilate radius must be >= 0");
  }

  static ExperimentConfig from_json(const nlohmann::json& j);

  static ExperimentConfig load(const std::string& path) {
    std::ifstream is(path);
    check_arg(is.good(), "cannot open config " + path);
    nlohmann::json j;
    try {
      is >> j;
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument("config " + path + ": " + e.what());
    }
    return from_json(j);
  }
};

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j,
                                std::initializer_list<const char*> allowed,
                                const std::string& where) {
  for (const auto& [key, _] : j.items()) {
    bool known = false;
    for (const char* a : allowed)
      if (key == a) known = true;
    check_arg(known, "config: unknown key \"" + key + "\" in " + where);
  }
}

}  // namespace detail

inline ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  detail::reject_unknown_keys(
      j,
      {"dataset", "seed", "epochs", "batch_size", "crop", "encoder", "variants",
       "optimizer", "boundary_weights", "boundary_dilate_radius", "ignore_index",
       "checkpoint", "loss_log"},
      "top level");
  ExperimentConfig cfg;
  check_arg(j.contains("dataset"), "config: dataset is required");
  check_arg(j.contains("epochs"), "config: epochs is required");
  check_arg(j.contains("seed"), "config: seed is required");
  cfg.dataset = j["dataset"].get<std::string>();
  cfg.seed = j["seed"].get<std::uint64_t>();
  cfg.epochs = j["epochs"].get<std::int64_t>();
  if (j.contains("batch_size")) cfg.batch_size = j["batch_size"].get<std::int64_t>();
  if (j.contains("crop")) {
    check_arg(j["crop"].is_array() && j["crop"].size() == 2, "config: crop must be [H,W]");
    cfg.crop = {j["crop"][0].get<std::int64_t>(), j["crop"][1].get<std::int64_t>()};
  }
  if (j.contains("encoder")) {
    const auto& e = j["encoder"];
    detail::reject_unknown_keys(
        e, {"stem_channels", "stage_widths", "blocks_per_stage", "reduced_channels"},
        "encoder");
    if (e.contains("stem_channels"))
      cfg.encoder.stem_channels = e["stem_channels"].get<std::int64_t>();
    if (e.contains("stage_widths")) {
      check_arg(e["stage_widths"].is_array() && e["stage_widths"].size() == 5,
                "config: stage_widths must list 5 values");
      for (int i = 0; i < 5; ++i)
        cfg.encoder.stage_widths[static_cast<std::size_t>(i)] =
            e["stage_widths"][static_cast<std::size_t>(i)].get<std::int64_t>();
    }
    if (e.contains("blocks_per_stage")) {
      check_arg(e["blocks_per_stage"].is_array() && e["blocks_per_stage"].size() == 5,
                "config: blocks_per_stage must list 5 values");
      for (int i = 0; i < 5; ++i)
        cfg.encoder.blocks_per_stage[static_cast<std::size_t>(i)] =
            e["blocks_per_stage"][static_cast<std::size_t>(i)].get<int>();
    }
    if (e.contains("reduced_channels"))
      cfg.encoder.reduced_channels = e["reduced_channels"].get<std::int64_t>();
  }
  if (j.contains("variants")) {
    const auto& v = j["variants"];
    detail::reject_unknown_keys(
        v, {"no_edge", "no_mfm", "no_gim", "no_sim", "no_sup", "residual_fs2"},
        "variants");
    auto flag = [&](const char* name, bool& out) {
      if (v.contains(name)) out = v[name].get<bool>();
    };
    flag("no_edge", cfg.variants.no_edge);
    flag("no_mfm", cfg.variants.no_mfm);
    flag("no_gim", cfg.variants.no_gim);
    flag("no_sim", cfg.variants.no_sim);
    flag("no_sup", cfg.variants.no_sup);
    flag("residual_fs2", cfg.variants.residual_fs2);
  }
  if (j.contains("optimizer")) {
    const auto& o = j["optimizer"];
    detail::reject_unknown_keys(o, {"lr", "weight_decay", "beta1", "beta2", "eps"},
                                "optimizer");
    if (o.contains("lr")) cfg.optimizer.lr = o["lr"].get<double>();
    if (o.contains("weight_decay"))
      cfg.optimizer.weight_decay = o["weight_decay"].get<double>();
    if (o.contains("beta1")) cfg.optimizer.beta1 = o["beta1"].get<double>();
    if (o.contains("beta2")) cfg.optimizer.beta2 = o["beta2"].get<double>();
    if (o.contains("eps")) cfg.optimizer.eps = o["eps"].get<double>();
  }
  if (j.contains("boundary_weights")) {
    check_arg(j["boundary_weights"].is_array() && j["boundary_weights"].size() == 2,
              "config: boundary_weights must be [negative, positive]");
    cfg.boundary_weights = {j["boundary_weights"][0].get<double>(),
                            j["boundary_weights"][1].get<double>()};
  }
  if (j.contains("boundary_dilate_radius"))
    cfg.boundary_dilate_radius = j["boundary_dilate_radius"].get<int>();
  if (j.contains("ignore_index") && !j["ignore_index"].is_null())
    cfg.ignore_index = j["ignore_index"].get<std::int32_t>();
  if (j.contains("checkpoint")) cfg.checkpoint = j["checkpoint"].get<std::string>();
  if (j.contains("loss_log")) cfg.loss_log = j["loss_log"].get<std::string>();
  cfg.validate();
  return cfg;
}

}  // namespace egf
