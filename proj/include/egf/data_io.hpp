// Dataset IO: PNG read/write (8-bit RGB, 8/16-bit grayscale), the
// rgb/thermal/labels sample layout with split files, deterministic
// flip+crop augmentation, palette colorization, and raster resizing.

#pragma once

#include <png.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "egf/tensor.hpp"

namespace egf {

// ---------------------------------------------------------------------------
// PNG image IO
// ---------------------------------------------------------------------------

struct Image {
  std::int64_t width = 0;
  std::int64_t height = 0;
  std::int64_t channels = 0;          // 1 or 3
  int bit_depth = 8;                  // 8 or 16
  std::vector<std::uint16_t> px;      // interleaved, row-major

  std::uint16_t at(std::int64_t y, std::int64_t x, std::int64_t c) const {
    return px[static_cast<std::size_t>((y * width + x) * channels + c)];
  }
  std::uint16_t& at(std::int64_t y, std::int64_t x, std::int64_t c) {
    return px[static_cast<std::size_t>((y * width + x) * channels + c)];
  }
};

namespace detail {

struct PngReadGuard {
  png_structp png = nullptr;
  png_infop info = nullptr;
  FILE* fp = nullptr;
  ~PngReadGuard() {
    if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    if (fp) std::fclose(fp);
  }
};

struct PngWriteGuard {
  png_structp png = nullptr;
  png_infop info = nullptr;
  FILE* fp = nullptr;
  ~PngWriteGuard() {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    if (fp) std::fclose(fp);
  }
};

}  // namespace detail

inline Image read_png(const std::string& path) {
  detail::PngReadGuard g;
  g.fp = std::fopen(path.c_str(), "rb");
  check_arg(g.fp != nullptr, "cannot open " + path);
  g.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  check_arg(g.png != nullptr, "libpng init failed");
  g.info = png_create_info_struct(g.png);
  check_arg(g.info != nullptr, "libpng info init failed");

  if (setjmp(png_jmpbuf(g.png))) {
    throw std::runtime_error("failed to decode PNG " + path);
  }
  png_init_io(g.png, g.fp);
  png_read_info(g.png, g.info);

  const png_byte color_type = png_get_color_type(g.png, g.info);
  png_byte depth = png_get_bit_depth(g.png, g.info);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(g.png);
  if (color_type == PNG_COLOR_TYPE_GRAY && depth < 8)
    png_set_expand_gray_1_2_4_to_8(g.png);
  if (png_get_valid(g.png, g.info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(g.png);
  if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(g.png);
  png_set_interlace_handling(g.png);
  png_read_update_info(g.png, g.info);

  Image img;
  img.width = static_cast<std::int64_t>(png_get_image_width(g.png, g.info));
  img.height = static_cast<std::int64_t>(png_get_image_height(g.png, g.info));
  img.channels = png_get_channels(g.png, g.info);
  img.bit_depth = png_get_bit_depth(g.png, g.info);
  check_arg(img.channels == 1 || img.channels == 3,
            path + ": expected 1 or 3 channels, got " + std::to_string(img.channels));
  check_arg(img.bit_depth == 8 || img.bit_depth == 16,
            path + ": unsupported bit depth " + std::to_string(img.bit_depth));

  const std::size_t rowbytes = png_get_rowbytes(g.png, g.info);
  std::vector<png_byte> raster(rowbytes * static_cast<std::size_t>(img.height));
  std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
  for (std::int64_t y = 0; y < img.height; ++y)
    rows[static_cast<std::size_t>(y)] = raster.data() + rowbytes * static_cast<std::size_t>(y);
  png_read_image(g.png, rows.data());

  img.px.resize(static_cast<std::size_t>(img.width * img.height * img.channels));
  const std::int64_t row_values = img.width * img.channels;
  for (std::int64_t y = 0; y < img.height; ++y) {
    const png_byte* row = rows[static_cast<std::size_t>(y)];
    for (std::int64_t i = 0; i < row_values; ++i) {
      if (img.bit_depth == 8) {
        img.px[static_cast<std::size_t>(y * row_values + i)] = row[i];
      } else {  // PNG stores 16-bit samples big-endian
        img.px[static_cast<std::size_t>(y * row_values + i)] = static_cast<std::uint16_t>(
            (static_cast<std::uint16_t>(row[2 * i]) << 8) | row[2 * i + 1]);
      }
    }
  }
  return img;
}

inline void write_png(const std::string& path, const Image& img) {
  check_arg(img.channels == 1 || img.channels == 3,
            "write_png: expected 1 or 3 channels");
  check_arg(img.bit_depth == 8 || img.bit_depth == 16,
            "write_png: unsupported bit depth");
  const std::uint16_t max_value = img.bit_depth == 8 ? 255 : 65535;
  for (std::uint16_t v : img.px)
    check_arg(v <= max_value, "write_png: sample exceeds bit depth");

  detail::PngWriteGuard g;
  g.fp = std::fopen(path.c_str(), "wb");
  check_arg(g.fp != nullptr, "cannot open " + path + " for writing");
  g.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  check_arg(g.png != nullptr, "libpng init failed");
  g.info = png_create_info_struct(g.png);
  check_arg(g.info != nullptr, "libpng info init failed");
  if (setjmp(png_jmpbuf(g.png))) {
    throw std::runtime_error("failed to encode PNG " + path);
  }
  png_init_io(g.png, g.fp);
  png_set_compression_level(g.png, 6);
  png_set_IHDR(g.png, g.info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), img.bit_depth,
               img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(g.png, g.info);

  const std::int64_t row_values = img.width * img.channels;
  const std::size_t rowbytes =
      static_cast<std::size_t>(row_values) * (img.bit_depth == 8 ? 1 : 2);
  std::vector<png_byte> raster(rowbytes * static_cast<std::size_t>(img.height));
  for (std::int64_t y = 0; y < img.height; ++y) {
    png_byte* row = raster.data() + rowbytes * static_cast<std::size_t>(y);
    for (std::int64_t i = 0; i < row_values; ++i) {
      const std::uint16_t v = img.px[static_cast<std::size_t>(y * row_values + i)];
      if (img.bit_depth == 8) {
        row[i] = static_cast<png_byte>(v);
      } else {
        row[2 * i] = static_cast<png_byte>(v >> 8);
        row[2 * i + 1] = static_cast<png_byte>(v & 0xff);
      }
    }
  }
  std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
  for (std::int64_t y = 0; y < img.height; ++y)
    rows[static_cast<std::size_t>(y)] = raster.data() + rowbytes * static_cast<std::size_t>(y);
  png_write_image(g.png, rows.data());
  png_write_end(g.png, nullptr);
}

// ---------------------------------------------------------------------------
// Raster <-> tensor conversion
// ---------------------------------------------------------------------------

// Pixel values scale to [0,1] by the bit-depth maximum.
inline Tensor image_to_tensor(const Image& img) {
  const double scale = 1.0 / (img.bit_depth == 8 ? 255.0 : 65535.0);
  Tensor t = Tensor::zeros(Shape4{1, img.channels, img.height, img.width});
  for (std::int64_t c = 0; c < img.channels; ++c)
    for (std::int64_t y = 0; y < img.height; ++y)
      for (std::int64_t x = 0; x < img.width; ++x)
        t.at(0, c, y, x) = static_cast<double>(img.at(y, x, c)) * scale;
  return t;
}

inline Image tensor_to_image(const Tensor& t, int bit_depth = 8) {
  const Shape4& s = t.shape();
  check_arg(s.n == 1 && (s.c == 1 || s.c == 3), "tensor_to_image: need [1,{1,3},H,W]");
  Image img;
  img.width = s.w;
  img.height = s.h;
  img.channels = s.c;
  img.bit_depth = bit_depth;
  img.px.resize(static_cast<std::size_t>(s.c * s.h * s.w));
  const double scale = bit_depth == 8 ? 255.0 : 65535.0;
  for (std::int64_t c = 0; c < s.c; ++c)
    for (std::int64_t y = 0; y < s.h; ++y)
      for (std::int64_t x = 0; x < s.w; ++x) {
        double v = std::clamp(t.at(0, c, y, x), 0.0, 1.0) * scale;
        img.at(y, x, c) = static_cast<std::uint16_t>(std::lround(v));
      }
  return img;
}

// ---------------------------------------------------------------------------
// Dataset layout: root/{rgb,thermal,labels}/<id>.png + split files +
// dataset.json {classes, palette, size}
// ---------------------------------------------------------------------------

struct DatasetSpec {
  std::filesystem::path root;
  std::vector<std::string> class_names;
  std::vector<std::array<std::uint8_t, 3>> palette;
  std::int64_t height = 0;
  std::int64_t width = 0;

  std::int64_t num_classes() const {
    return static_cast<std::int64_t>(class_names.size());
  }

  static DatasetSpec load(const std::filesystem::path& root) {
    const auto json_path = root / "dataset.json";
    std::ifstream is(json_path);
    check_arg(is.good(), "cannot open " + json_path.string());
    nlohmann::json j;
    is >> j;
    DatasetSpec spec;
    spec.root = root;
    check_arg(j.contains("classes") && j["classes"].is_array(),
              "dataset.json: missing classes array");
    for (const auto& c : j["classes"]) spec.class_names.push_back(c.get<std::string>());
    check_arg(!spec.class_names.empty(), "dataset.json: empty class list");
    check_arg(j.contains("palette") && j["palette"].is_array(),
              "dataset.json: missing palette");
    for (const auto& p : j["palette"]) {
      check_arg(p.is_array() && p.size() == 3, "dataset.json: palette entry must be [r,g,b]");
      spec.palette.push_back({p[0].get<std::uint8_t>(), p[1].get<std::uint8_t>(),
                              p[2].get<std::uint8_t>()});
    }
    check_arg(spec.palette.size() >= spec.class_names.size(),
              "dataset.json: palette shorter than class list");
    check_arg(j.contains("size") && j["size"].is_array() && j["size"].size() == 2,
              "dataset.json: missing size [H,W]");
    spec.height = j["size"][0].get<std::int64_t>();
    spec.width = j["size"][1].get<std::int64_t>();
    check_arg(spec.height % 32 == 0 && spec.width % 32 == 0,
              "dataset.json: size must be divisible by 32");
    return spec;
  }
};

struct SplitEntry {
  std::string id;
  std::string tag;  // optional grouping tag (e.g. day/night); may be empty
};

inline std::vector<SplitEntry> read_split(const DatasetSpec& spec,
                                          const std::string& split) {
  const auto path = spec.root / (split + ".txt");
  std::ifstream is(path);
  check_arg(is.good(), "cannot open split file " + path.string());
  std::vector<SplitEntry> out;
  std::string line;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    SplitEntry e;
    if (!(ls >> e.id)) continue;  // blank line
    ls >> e.tag;
    out.push_back(std::move(e));
  }
  check_arg(!out.empty(), "split file " + path.string() + " lists no samples");
  return out;
}

struct Sample {
  Tensor rgb;       // [1,3,H,W] in [0,1]
  Tensor thermal;   // [1,1,H,W] in [0,1]
  LabelMap labels;  // [1,H,W]
  std::string id;
};

inline Sample load_sample(const DatasetSpec& spec, const std::string& id) {
  const auto rgb_path = spec.root / "rgb" / (id + ".png");
  const auto th_path = spec.root / "thermal" / (id + ".png");
  const auto lab_path = spec.root / "labels" / (id + ".png");
  for (const auto& p : {rgb_path, th_path, lab_path})
    check_arg(std::filesystem::exists(p), "missing file " + p.string());

  Image rgb = read_png(rgb_path.string());
  check_arg(rgb.channels == 3 && rgb.bit_depth == 8,
            rgb_path.string() + ": expected 8-bit 3-channel RGB");
  Image thermal = read_png(th_path.string());
  check_arg(thermal.channels == 1, th_path.string() + ": expected single channel");
  Image labels = read_png(lab_path.string());
  check_arg(labels.channels == 1 && labels.bit_depth == 8,
            lab_path.string() + ": expected 8-bit single-channel class indices");
  check_arg(rgb.width == thermal.width && rgb.height == thermal.height &&
                rgb.width == labels.width && rgb.height == labels.height,
            id + ": raster sizes disagree");

  Sample s;
  s.id = id;
  s.rgb = image_to_tensor(rgb);
  s.thermal = image_to_tensor(thermal);
  s.labels = LabelMap(1, labels.height, labels.width);
  for (std::int64_t y = 0; y < labels.height; ++y)
    for (std::int64_t x = 0; x < labels.width; ++x) {
      const std::uint16_t v = labels.at(y, x, 0);
      check_arg(v < spec.num_classes(),
                id + ": label " + std::to_string(v) + " >= C=" +
                    std::to_string(spec.num_classes()));
      s.labels.at(0, y, x) = static_cast<std::int32_t>(v);
    }
  return s;
}

// ---------------------------------------------------------------------------
// Augmentation: p=0.5 horizontal flip, then a uniform random crop, applied
// identically to all three rasters. Deterministic given the substream.
// ---------------------------------------------------------------------------

inline Sample hflip_sample(const Sample& in) {
  Sample out;
  out.id = in.id;
  out.rgb = Tensor::zeros(in.rgb.shape());
  out.thermal = Tensor::zeros(in.thermal.shape());
  out.labels = LabelMap(in.labels.n, in.labels.h, in.labels.w);
  const Shape4& rs = in.rgb.shape();
  for (std::int64_t c = 0; c < rs.c; ++c)
    for (std::int64_t y = 0; y < rs.h; ++y)
      for (std::int64_t x = 0; x < rs.w; ++x)
        out.rgb.at(0, c, y, x) = in.rgb.at(0, c, y, rs.w - 1 - x);
  for (std::int64_t y = 0; y < rs.h; ++y)
    for (std::int64_t x = 0; x < rs.w; ++x) {
      out.thermal.at(0, 0, y, x) = in.thermal.at(0, 0, y, rs.w - 1 - x);
      out.labels.at(0, y, x) = in.labels.at(0, y, rs.w - 1 - x);
    }
  return out;
}

inline Sample crop_sample(const Sample& in, std::int64_t oy, std::int64_t ox,
                          std::int64_t h, std::int64_t w) {
  const Shape4& rs = in.rgb.shape();
  check_arg(oy >= 0 && ox >= 0 && oy + h <= rs.h && ox + w <= rs.w,
            "crop_sample: window exceeds image");
  Sample out;
  out.id = in.id;
  out.rgb = Tensor::zeros(Shape4{1, 3, h, w});
  out.thermal = Tensor::zeros(Shape4{1, 1, h, w});
  out.labels = LabelMap(1, h, w);
  for (std::int64_t c = 0; c < 3; ++c)
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x)
        out.rgb.at(0, c, y, x) = in.rgb.at(0, c, oy + y, ox + x);
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) {
      out.thermal.at(0, 0, y, x) = in.thermal.at(0, 0, oy + y, ox + x);
      out.labels.at(0, y, x) = in.labels.at(0, oy + y, ox + x);
    }
  return out;
}

struct AugmentDecision {
  bool flip = false;
  std::int64_t oy = 0;
  std::int64_t ox = 0;
};

inline AugmentDecision draw_augment(std::int64_t img_h, std::int64_t img_w,
                                    std::int64_t crop_h, std::int64_t crop_w,
                                    Pcg32& rng) {
  check_arg(crop_h <= img_h && crop_w <= img_w, "augment: crop larger than image");
  AugmentDecision d;
  d.flip = (rng.next_u32() >> 31) != 0;
  d.oy = rng.bounded(static_cast<std::uint32_t>(img_h - crop_h + 1));
  d.ox = rng.bounded(static_cast<std::uint32_t>(img_w - crop_w + 1));
  return d;
}

inline Sample augment(const Sample& in, std::int64_t crop_h, std::int64_t crop_w,
                      Pcg32& rng) {
  const AugmentDecision d =
      draw_augment(in.rgb.shape().h, in.rgb.shape().w, crop_h, crop_w, rng);
  const Sample flipped = d.flip ? hflip_sample(in) : in;
  return crop_sample(flipped, d.oy, d.ox, crop_h, crop_w);
}

// ---------------------------------------------------------------------------
// Visualization and resizing
// ---------------------------------------------------------------------------

inline Image colorize(const LabelMap& labels,
                      const std::vector<std::array<std::uint8_t, 3>>& palette,
                      std::int64_t image_index = 0) {
  check_arg(image_index >= 0 && image_index < labels.n, "colorize: bad image index");
  Image img;
  img.width = labels.w;
  img.height = labels.h;
  img.channels = 3;
  img.bit_depth = 8;
  img.px.resize(static_cast<std::size_t>(3 * labels.h * labels.w));
  for (std::int64_t y = 0; y < labels.h; ++y)
    for (std::int64_t x = 0; x < labels.w; ++x) {
      const std::int32_t l = labels.at(image_index, y, x);
      check_arg(l >= 0 && static_cast<std::size_t>(l) < palette.size(),
                "colorize: palette shorter than label " + std::to_string(l));
      for (int c = 0; c < 3; ++c)
        img.at(y, x, c) = palette[static_cast<std::size_t>(l)][static_cast<std::size_t>(c)];
    }
  return img;
}

// Half-pixel-center bilinear resize to an arbitrary size (raster prep only;
// not differentiable, not recorded).
inline Tensor resize_bilinear(const Tensor& x, std::int64_t out_h, std::int64_t out_w) {
  const Shape4& s = x.shape();
  check_arg(out_h >= 1 && out_w >= 1, "resize_bilinear: bad target size");
  Tensor out = Tensor::zeros(Shape4{s.n, s.c, out_h, out_w});
  const double sy = static_cast<double>(s.h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(s.w) / static_cast<double>(out_w);
  for (std::int64_t n = 0; n < s.n; ++n)
    for (std::int64_t c = 0; c < s.c; ++c)
      for (std::int64_t oy = 0; oy < out_h; ++oy)
        for (std::int64_t ox = 0; ox < out_w; ++ox) {
          const double fy = (static_cast<double>(oy) + 0.5) * sy - 0.5;
          const double fx = (static_cast<double>(ox) + 0.5) * sx - 0.5;
          std::int64_t y0 = static_cast<std::int64_t>(std::floor(fy));
          std::int64_t x0 = static_cast<std::int64_t>(std::floor(fx));
          const double wy = fy - static_cast<double>(y0);
          const double wx = fx - static_cast<double>(x0);
          const std::int64_t y1 = std::clamp<std::int64_t>(y0 + 1, 0, s.h - 1);
          const std::int64_t x1 = std::clamp<std::int64_t>(x0 + 1, 0, s.w - 1);
          y0 = std::clamp<std::int64_t>(y0, 0, s.h - 1);
          x0 = std::clamp<std::int64_t>(x0, 0, s.w - 1);
          out.at(n, c, oy, ox) =
              (1.0 - wy) * ((1.0 - wx) * x.at(n, c, y0, x0) + wx * x.at(n, c, y0, x1)) +
              wy * ((1.0 - wx) * x.at(n, c, y1, x0) + wx * x.at(n, c, y1, x1));
        }
  return out;
}

}  // namespace egf
