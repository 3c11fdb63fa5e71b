// Bundled synthetic corpus: colored geometric shapes over a dark background,
// each class carrying a distinct RGB color and thermal signature. Gives the
// train/eval/infer pipeline a desk-scale dataset with known structure.

#pragma once

#include <filesystem>
#include <fstream>

#include "egf/data_io.hpp"
#include "egf/tensor.hpp"

namespace egf {

struct SynthConfig {
  std::int64_t samples = 4;
  std::int64_t height = 64;
  std::int64_t width = 64;
  std::int64_t num_classes = 9;  // background + 8 shape classes
  std::uint64_t seed = 0;
  std::int64_t shapes_per_image = 2;
};

namespace detail {

inline std::array<std::uint8_t, 3> synth_palette_entry(std::int64_t c) {
  static const std::array<std::uint8_t, 3> table[] = {
      {40, 40, 40},    // background
      {220, 32, 32},   // red
      {32, 200, 32},   // green
      {48, 64, 220},   // blue
      {230, 220, 32},  // yellow
      {220, 40, 220},  // magenta
      {40, 220, 220},  // cyan
      {240, 140, 24},  // orange
      {130, 44, 200},  // violet
  };
  return table[static_cast<std::size_t>(c % 9)];
}

}  // namespace detail

// Writes rgb/, thermal/, labels/, dataset.json and split files under out_dir.
// All samples land in train.txt and val.txt; test.txt carries alternating
// day/night tags so tagged sub-reports have data to group.
inline void generate_synthetic_dataset(const std::filesystem::path& out_dir,
                                       const SynthConfig& cfg) {
  check_arg(cfg.samples >= 1, "synth: need at least one sample");
  check_arg(cfg.num_classes >= 2 && cfg.num_classes <= 9,
            "synth: class count must be in [2,9]");
  check_arg(cfg.height % 32 == 0 && cfg.width % 32 == 0,
            "synth: size must be divisible by 32");

  namespace fs = std::filesystem;
  fs::create_directories(out_dir / "rgb");
  fs::create_directories(out_dir / "thermal");
  fs::create_directories(out_dir / "labels");

  Rng rng(cfg.seed);
  const std::int64_t H = cfg.height, W = cfg.width;

  std::vector<std::string> ids;
  for (std::int64_t i = 0; i < cfg.samples; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "s%05lld", static_cast<long long>(i));
    ids.emplace_back(name);
    Pcg32 s = rng.stream("synth", static_cast<std::uint64_t>(i));

    LabelMap labels(1, H, W, 0);
    Tensor rgb = Tensor::zeros(Shape4{1, 3, H, W});
    Tensor thermal = Tensor::zeros(Shape4{1, 1, H, W});

    // Background with mild texture.
    for (std::int64_t y = 0; y < H; ++y)
      for (std::int64_t x = 0; x < W; ++x) {
        const double n = (s.next_double() - 0.5) * 0.02;
        rgb.at(0, 0, y, x) = 0.16 + n;
        rgb.at(0, 1, y, x) = 0.16 + n;
        rgb.at(0, 2, y, x) = 0.16 + n;
        thermal.at(0, 0, y, x) = 0.08 + (s.next_double() - 0.5) * 0.01;
      }

    // Round-robin class assignment keeps small corpora class-diverse. Shape
    // placement is random (so position never predicts class) with rejection
    // against overlap (so no shape occludes another).
    std::vector<std::array<std::int64_t, 3>> placed;  // cy, cx, r
    for (std::int64_t k = 0; k < cfg.shapes_per_image; ++k) {
      const std::int64_t cls =
          1 + (i * cfg.shapes_per_image + k) % (cfg.num_classes - 1);
      const auto color = detail::synth_palette_entry(cls);
      const double heat =
          0.2 + 0.75 * static_cast<double>(cls) / static_cast<double>(cfg.num_classes - 1);
      const std::int64_t r_base = std::max<std::int64_t>(std::min(H, W) * 5 / 32, 4);
      const std::int64_t r_var = std::max<std::int64_t>(std::min(H, W) / 16, 2);
      const std::int64_t margin = r_base + r_var;
      std::int64_t cy = 0, cx = 0, r = 0;
      for (int attempt = 0; attempt < 64; ++attempt) {
        r = r_base + s.bounded(static_cast<std::uint32_t>(r_var));
        cy = margin + s.bounded(static_cast<std::uint32_t>(H - 2 * margin));
        cx = margin + s.bounded(static_cast<std::uint32_t>(W - 2 * margin));
        bool clear = true;
        for (const auto& p : placed) {
          const std::int64_t dy = cy - p[0], dx = cx - p[1];
          // 3/2 factor keeps even two square diagonals apart.
          const std::int64_t min_dist = (r + p[2]) * 3 / 2 + 2;
          if (dy * dy + dx * dx < min_dist * min_dist) clear = false;
        }
        if (clear) break;
      }
      placed.push_back({cy, cx, r});
      const bool disc = (s.next_u32() & 1) != 0;
      for (std::int64_t y = std::max<std::int64_t>(0, cy - r);
           y <= std::min<std::int64_t>(H - 1, cy + r); ++y)
        for (std::int64_t x = std::max<std::int64_t>(0, cx - r);
             x <= std::min<std::int64_t>(W - 1, cx + r); ++x) {
          const bool inside =
              disc ? (y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r : true;
          if (!inside) continue;
          labels.at(0, y, x) = static_cast<std::int32_t>(cls);
          const double jitter = (s.next_double() - 0.5) * 0.03;
          rgb.at(0, 0, y, x) = color[0] / 255.0 + jitter;
          rgb.at(0, 1, y, x) = color[1] / 255.0 + jitter;
          rgb.at(0, 2, y, x) = color[2] / 255.0 + jitter;
          thermal.at(0, 0, y, x) = heat + (s.next_double() - 0.5) * 0.02;
        }
    }

    write_png((out_dir / "rgb" / (ids.back() + ".png")).string(),
              tensor_to_image(rgb, 8));
    write_png((out_dir / "thermal" / (ids.back() + ".png")).string(),
              tensor_to_image(thermal, 16));
    Image lab;
    lab.width = W;
    lab.height = H;
    lab.channels = 1;
    lab.bit_depth = 8;
    lab.px.resize(static_cast<std::size_t>(H * W));
    for (std::int64_t p = 0; p < H * W; ++p)
      lab.px[static_cast<std::size_t>(p)] =
          static_cast<std::uint16_t>(labels.v[static_cast<std::size_t>(p)]);
    write_png((out_dir / "labels" / (ids.back() + ".png")).string(), lab);
  }

  nlohmann::json j;
  j["classes"] = nlohmann::json::array();
  j["palette"] = nlohmann::json::array();
  for (std::int64_t c = 0; c < cfg.num_classes; ++c) {
    j["classes"].push_back(c == 0 ? "background" : "shape" + std::to_string(c));
    const auto p = detail::synth_palette_entry(c);
    j["palette"].push_back({p[0], p[1], p[2]});
  }
  j["size"] = {H, W};
  std::ofstream(out_dir / "dataset.json") << j.dump(2) << "\n";

  std::ofstream train(out_dir / "train.txt");
  std::ofstream val(out_dir / "val.txt");
  std::ofstream test(out_dir / "test.txt");
  for (std::size_t i = 0; i < ids.size(); ++i) {
    train << ids[i] << "\n";
    val << ids[i] << "\n";
    test << ids[i] << (i % 2 == 0 ? " day" : " night") << "\n";
  }
}

}  // namespace egf
