#pragma once

// Procedural road scenes for drivable-area segmentation, netpbm (P5/P6) I/O,
// and two-class segmentation metrics.
//
// A scene is a sky band above a horizon row and a terrain band below it. The
// road is a perspective trapezoid rising from the bottom edge: at depth
// v in (0,1] (v = 1 at the bottom row, 0 at the horizon) its center and
// half-width are
//
//   cx(v) = W * (0.5 + curvature * (1 - v)^2)
//   hw(v) = W * (top_width + (bottom_width - top_width) * v) / 2
//
// evaluated at pixel centers; a pixel is road iff |x + 0.5 - cx| <= hw.
// Off-road distractor rectangles are painted only on non-road pixels, so the
// mask stays exact. Pixel values are quantized to k/255 so images survive a
// PPM roundtrip unchanged.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "bitseg/error.hpp"
#include "bitseg/rng.hpp"
#include "bitseg/tensor.hpp"

namespace bitseg {

struct SceneParams {
  std::size_t height = 64;
  std::size_t width = 64;
  double bottom_width_min = 0.3, bottom_width_max = 0.7;
  double horizon_min = 0.3, horizon_max = 0.5;
  double top_width = 0.16;
  double curvature_max = 0.3;  // |curvature|, keeps the far road on screen
  double noise_sigma = 0.04;
  std::size_t distractors_min = 0, distractors_max = 3;
  std::uint64_t seed = 1;

  void validate() const {
    auto frac = [](double v, const char* name) {
      if (!(v > 0.0 && v < 1.0))
        throw ConfigError(std::string("scene parameter ") + name + " must lie in (0,1)");
    };
    if (height == 0 || width == 0) throw ConfigError("scene size must be positive");
    frac(bottom_width_min, "bottom_width_min");
    frac(bottom_width_max, "bottom_width_max");
    frac(horizon_min, "horizon_min");
    frac(horizon_max, "horizon_max");
    frac(top_width, "top_width");
    if (bottom_width_min > bottom_width_max || horizon_min > horizon_max)
      throw ConfigError("scene parameter range has min > max");
    if (curvature_max < 0 || noise_sigma < 0) throw ConfigError("scene parameter is negative");
    if (distractors_min > distractors_max) throw ConfigError("distractor range has min > max");
  }
};

// Per-scene geometry drawn from the parameter ranges.
struct RoadGeometry {
  double horizon = 0.4;  // fraction of height from the top
  double bottom_width = 0.5;
  double top_width = 0.16;
  double curvature = 0.0;
};

struct Scene {
  FloatTensor image;                // (1,3,H,W), values k/255
  std::vector<std::uint8_t> mask;   // H*W, 1 = road
  RoadGeometry geometry;
};

// Road membership for a single pixel; shared by the painter and the mask.
inline bool is_road(const RoadGeometry& g, std::size_t h, std::size_t w, std::size_t y,
                    std::size_t x) {
  const double H = static_cast<double>(h), W = static_cast<double>(w);
  const double hz = g.horizon * H;
  const double py = static_cast<double>(y) + 0.5;
  if (py < hz) return false;
  const double v = (py - hz) / (H - hz);
  const double cx = W * (0.5 + g.curvature * (1 - v) * (1 - v));
  const double hw = W * (g.top_width + (g.bottom_width - g.top_width) * v) / 2;
  return std::abs(static_cast<double>(x) + 0.5 - cx) <= hw;
}

inline std::vector<std::uint8_t> road_mask(const RoadGeometry& g, std::size_t h, std::size_t w) {
  std::vector<std::uint8_t> m(h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) m[y * w + x] = is_road(g, h, w, y, x) ? 1 : 0;
  return m;
}

namespace detail {

inline float quantize01(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<float>(std::lround(c * 255.0)) / 255.0f;
}

struct Rgb {
  double r, g, b;
};

}  // namespace detail

inline Scene generate_scene(const SceneParams& p, std::uint64_t index) {
  p.validate();
  SplitMix64 rng = SplitMix64::stream(p.seed, index);
  const std::size_t H = p.height, W = p.width;

  Scene s;
  auto& g = s.geometry;
  g.horizon = rng.uniform(p.horizon_min, p.horizon_max);
  g.bottom_width = rng.uniform(p.bottom_width_min, p.bottom_width_max);
  g.top_width = std::min(p.top_width, g.bottom_width);
  g.curvature = rng.uniform(-p.curvature_max, p.curvature_max);
  s.mask = road_mask(g, H, W);

  const double shade = rng.uniform(-0.05, 0.05);
  const detail::Rgb road{0.40 + shade, 0.40 + shade, 0.45 + shade};
  const detail::Rgb terrain{rng.uniform(0.15, 0.30), rng.uniform(0.45, 0.65), rng.uniform(0.10, 0.25)};
  const detail::Rgb sky{rng.uniform(0.45, 0.65), rng.uniform(0.65, 0.80), rng.uniform(0.85, 1.0)};

  struct Rect {
    std::size_t y0, y1, x0, x1;
    detail::Rgb color;
  };
  std::vector<Rect> rects;
  const std::size_t nd =
      p.distractors_min + rng.below(p.distractors_max - p.distractors_min + 1);
  const std::size_t hz = static_cast<std::size_t>(g.horizon * static_cast<double>(H));
  for (std::size_t i = 0; i < nd; ++i) {
    const std::size_t rh = 2 + rng.below(std::max<std::size_t>(1, H / 6));
    const std::size_t rw = 2 + rng.below(std::max<std::size_t>(1, W / 6));
    const std::size_t y0 = hz + rng.below(std::max<std::size_t>(1, H - hz));
    const std::size_t x0 = rng.below(W);
    const detail::Rgb c{rng.uniform(0.3, 0.7), rng.uniform(0.2, 0.4), rng.uniform(0.1, 0.3)};
    rects.push_back({y0, std::min(H, y0 + rh), x0, std::min(W, x0 + rw), c});
  }

  s.image = FloatTensor({1, 3, H, W});
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      detail::Rgb c;
      if (s.mask[y * W + x]) {
        c = road;
      } else if (static_cast<double>(y) + 0.5 < g.horizon * static_cast<double>(H)) {
        const double t = static_cast<double>(y) / static_cast<double>(H);
        c = {sky.r + 0.1 * t, sky.g + 0.1 * t, sky.b};
      } else {
        c = terrain;
        for (const auto& r : rects)
          if (y >= r.y0 && y < r.y1 && x >= r.x0 && x < r.x1) c = r.color;
      }
      s.image.at(0, 0, y, x) = detail::quantize01(c.r + p.noise_sigma * rng.normal());
      s.image.at(0, 1, y, x) = detail::quantize01(c.g + p.noise_sigma * rng.normal());
      s.image.at(0, 2, y, x) = detail::quantize01(c.b + p.noise_sigma * rng.normal());
    }
  return s;
}

inline double road_fraction(std::span<const std::uint8_t> mask) {
  if (mask.empty()) return 0.0;
  std::size_t k = 0;
  for (auto v : mask) k += v;
  return static_cast<double>(k) / static_cast<double>(mask.size());
}

// ---------------------------------------------------------------- netpbm I/O

struct PnmImage {
  int kind = 5;  // 5 = P5 gray, 6 = P6 rgb
  std::size_t width = 0, height = 0;
  std::vector<std::uint8_t> pixels;  // row-major, interleaved RGB for P6

  std::size_t channels() const noexcept { return kind == 6 ? 3 : 1; }
};

inline std::string encode_pnm(const PnmImage& img) {
  if (img.kind != 5 && img.kind != 6) throw ArgumentError("encode_pnm: kind must be 5 or 6");
  if (img.pixels.size() != img.width * img.height * img.channels())
    throw DimensionError("encode_pnm: pixel count does not match " + std::to_string(img.width) +
                         "x" + std::to_string(img.height));
  std::string out = "P" + std::to_string(img.kind) + "\n" + std::to_string(img.width) + " " +
                    std::to_string(img.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size());
  return out;
}

inline PnmImage decode_pnm(std::string_view data) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    for (;;) {
      while (pos < data.size() && std::isspace(static_cast<unsigned char>(data[pos]))) ++pos;
      if (pos < data.size() && data[pos] == '#') {
        while (pos < data.size() && data[pos] != '\n') ++pos;
        continue;
      }
      return;
    }
  };
  auto read_uint = [&](const char* what) {
    skip_space();
    const std::size_t start = pos;
    std::size_t v = 0;
    while (pos < data.size() && data[pos] >= '0' && data[pos] <= '9') {
      v = v * 10 + static_cast<std::size_t>(data[pos] - '0');
      if (v > (1u << 30)) throw FormatError(std::string("pnm: ") + what + " too large", start);
      ++pos;
    }
    if (pos == start) throw FormatError(std::string("pnm: expected ") + what, start);
    return v;
  };

  if (data.size() < 2 || data[0] != 'P' || (data[1] != '5' && data[1] != '6'))
    throw FormatError("pnm: bad magic, expected P5 or P6", 0);
  PnmImage img;
  img.kind = data[1] - '0';
  pos = 2;
  img.width = read_uint("width");
  img.height = read_uint("height");
  const std::size_t maxval = read_uint("maxval");
  if (maxval != 255) throw FormatError("pnm: maxval must be 255, got " + std::to_string(maxval), pos);
  if (pos >= data.size() || !std::isspace(static_cast<unsigned char>(data[pos])))
    throw FormatError("pnm: missing whitespace after header", pos);
  ++pos;
  const std::size_t expected = img.width * img.height * img.channels();
  const std::size_t actual = data.size() - pos;
  if (actual < expected)
    throw FormatError("pnm: truncated payload, expected " + std::to_string(expected) +
                          " bytes, got " + std::to_string(actual),
                      data.size());
  img.pixels.assign(data.begin() + static_cast<std::ptrdiff_t>(pos),
                    data.begin() + static_cast<std::ptrdiff_t>(pos + expected));
  return img;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed for " + path.string());
}

inline PnmImage read_pnm(const std::filesystem::path& path) { return decode_pnm(read_file(path)); }
inline void write_pnm(const std::filesystem::path& path, const PnmImage& img) {
  write_file(path, encode_pnm(img));
}

// Sample n of a (N,3,H,W) tensor in [0,1] as a P6 image.
inline PnmImage to_ppm(const FloatTensor& img, std::size_t n = 0) {
  if (img.c() != 3) throw DimensionError("to_ppm: need 3 channels, got " + shape_str(img.shape()));
  PnmImage out{6, img.w(), img.h(), std::vector<std::uint8_t>(img.h() * img.w() * 3)};
  for (std::size_t y = 0; y < img.h(); ++y)
    for (std::size_t x = 0; x < img.w(); ++x)
      for (std::size_t c = 0; c < 3; ++c)
        out.pixels[(y * img.w() + x) * 3 + c] = static_cast<std::uint8_t>(
            std::lround(std::clamp(static_cast<double>(img.at(n, c, y, x)), 0.0, 1.0) * 255.0));
  return out;
}

inline FloatTensor from_ppm(const PnmImage& img) {
  if (img.kind != 6) throw FormatError("expected a P6 color image");
  FloatTensor t({1, 3, img.height, img.width});
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        t.at(0, c, y, x) = static_cast<float>(img.pixels[(y * img.width + x) * 3 + c]) / 255.0f;
  return t;
}

// {0,1} mask <-> P5 with values 0/255.
inline PnmImage mask_to_pgm(std::span<const std::uint8_t> mask, std::size_t h, std::size_t w) {
  if (mask.size() != h * w) throw DimensionError("mask_to_pgm: mask size mismatch");
  PnmImage out{5, w, h, std::vector<std::uint8_t>(h * w)};
  for (std::size_t i = 0; i < mask.size(); ++i) out.pixels[i] = mask[i] ? 255 : 0;
  return out;
}

inline std::vector<std::uint8_t> mask_from_pgm(const PnmImage& img) {
  if (img.kind != 5) throw FormatError("expected a P5 mask image");
  std::vector<std::uint8_t> m(img.pixels.size());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = img.pixels[i] >= 128 ? 1 : 0;
  return m;
}

// ------------------------------------------------------------------- datasets

struct Dataset {
  FloatTensor images;               // (N,3,H,W)
  std::vector<std::uint8_t> masks;  // N*H*W

  std::size_t size() const noexcept { return images.n(); }
  std::size_t pixels() const noexcept { return images.h() * images.w(); }
};

inline Dataset make_dataset(const SceneParams& p, std::size_t count, std::uint64_t first_index = 0) {
  Dataset d;
  d.images = FloatTensor({count, 3, p.height, p.width});
  d.masks.resize(count * p.height * p.width);
  for (std::size_t i = 0; i < count; ++i) {
    const Scene s = generate_scene(p, first_index + i);
    std::copy(s.image.vec().begin(), s.image.vec().end(), d.images.sample(i).begin());
    std::copy(s.mask.begin(), s.mask.end(),
              d.masks.begin() + static_cast<std::ptrdiff_t>(i * p.height * p.width));
  }
  return d;
}

// Samples [begin, end) as a new dataset.
inline Dataset slice(const Dataset& d, std::size_t begin, std::size_t end) {
  end = std::min(end, d.size());
  begin = std::min(begin, end);
  Dataset out;
  out.images = FloatTensor({end - begin, 3, d.images.h(), d.images.w()});
  const std::size_t px = d.pixels();
  for (std::size_t i = begin; i < end; ++i)
    std::copy(d.images.sample(i).begin(), d.images.sample(i).end(),
              out.images.sample(i - begin).begin());
  out.masks.assign(d.masks.begin() + static_cast<std::ptrdiff_t>(begin * px),
                   d.masks.begin() + static_cast<std::ptrdiff_t>(end * px));
  return out;
}

struct ManifestEntry {
  std::string image;
  std::string mask;
};

inline std::string scene_file_name(const char* prefix, std::size_t i, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%05zu.%s", prefix, i, ext);
  return buf;
}

// Writes img_%05d.ppm / mask_%05d.pgm pairs and manifest.txt ("image mask"
// per line) into out_dir.
inline std::vector<ManifestEntry> generate_dataset(const SceneParams& p, std::size_t count,
                                                   const std::filesystem::path& out_dir) {
  p.validate();
  std::filesystem::create_directories(out_dir);
  std::vector<ManifestEntry> manifest;
  std::string text;
  for (std::size_t i = 0; i < count; ++i) {
    const Scene s = generate_scene(p, i);
    ManifestEntry e{scene_file_name("img", i, "ppm"), scene_file_name("mask", i, "pgm")};
    write_pnm(out_dir / e.image, to_ppm(s.image));
    write_pnm(out_dir / e.mask, mask_to_pgm(s.mask, p.height, p.width));
    text += e.image + " " + e.mask + "\n";
    manifest.push_back(std::move(e));
  }
  write_file(out_dir / "manifest.txt", text);
  return manifest;
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  const std::string text = read_file(dir / "manifest.txt");
  std::istringstream lines(text);
  std::vector<ManifestEntry> entries;
  std::string line;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    ManifestEntry e;
    if (!(ls >> e.image >> e.mask))
      throw FormatError("manifest: malformed line '" + line + "'");
    entries.push_back(std::move(e));
  }
  Dataset d;
  if (entries.empty()) return d;
  std::size_t h = 0, w = 0;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto img = read_pnm(dir / entries[i].image);
    const auto msk = read_pnm(dir / entries[i].mask);
    if (i == 0) {
      h = img.height;
      w = img.width;
      d.images = FloatTensor({entries.size(), 3, h, w});
      d.masks.resize(entries.size() * h * w);
    }
    if (img.height != h || img.width != w || msk.height != h || msk.width != w)
      throw FormatError("dataset: image sizes differ in " + entries[i].image);
    const auto t = from_ppm(img);
    std::copy(t.vec().begin(), t.vec().end(), d.images.sample(i).begin());
    const auto m = mask_from_pgm(msk);
    std::copy(m.begin(), m.end(), d.masks.begin() + static_cast<std::ptrdiff_t>(i * h * w));
  }
  return d;
}

// ------------------------------------------------------------------- metrics

struct SegMetrics {
  double iou_road = 1, iou_bg = 1, mean_iou = 1;
  double pixel_acc = 1, precision = 1, recall = 1, f1 = 1;
};

struct Confusion {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;  // road = positive

  void add(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt) {
    if (pred.size() != gt.size())
      throw DimensionError("seg_metrics: prediction has " + std::to_string(pred.size()) +
                           " pixels, ground truth " + std::to_string(gt.size()));
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const bool p = pred[i] != 0, g = gt[i] != 0;
      tp += p && g;
      fp += p && !g;
      fn += !p && g;
      tn += !p && !g;
    }
  }

  SegMetrics metrics() const {
    auto ratio = [](double num, double den, double empty) { return den > 0 ? num / den : empty; };
    const double TP = static_cast<double>(tp), FP = static_cast<double>(fp);
    const double FN = static_cast<double>(fn), TN = static_cast<double>(tn);
    SegMetrics m;
    m.iou_road = ratio(TP, TP + FP + FN, 1.0);
    m.iou_bg = ratio(TN, TN + FN + FP, 1.0);
    m.mean_iou = (m.iou_road + m.iou_bg) / 2;
    m.pixel_acc = ratio(TP + TN, TP + TN + FP + FN, 1.0);
    // No predicted (resp. actual) road: precision (recall) is 1 only if
    // nothing was missed either.
    m.precision = ratio(TP, TP + FP, FN == 0 ? 1.0 : 0.0);
    m.recall = ratio(TP, TP + FN, FP == 0 ? 1.0 : 0.0);
    m.f1 = m.precision + m.recall > 0
               ? 2 * m.precision * m.recall / (m.precision + m.recall)
               : 0.0;
    return m;
  }
};

inline SegMetrics seg_metrics(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt) {
  Confusion c;
  c.add(pred, gt);
  return c.metrics();
}

inline std::string metrics_csv_header() { return "name,iou_road,iou_bg,miou,acc,precision,recall,f1"; }

inline std::string metrics_csv_row(const std::string& name, const SegMetrics& m) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f", name.c_str(), m.iou_road,
                m.iou_bg, m.mean_iou, m.pixel_acc, m.precision, m.recall, m.f1);
  return buf;
}

}  // namespace bitseg
