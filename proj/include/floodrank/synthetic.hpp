#pragma once

// Synthetic flood scenes with known water depth. Each scene is a street-like
// background (sky, buildings, distractor objects) covered from the bottom by a
// textured water band whose top edge sits at depth_cm / 170 of the image height,
// tilted by at most 5 degrees. The depth is known by construction, which makes
// the generator the ground-truth oracle for desk-scale experiments.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "floodrank/dataset.hpp"
#include "floodrank/errors.hpp"
#include "floodrank/image.hpp"
#include "floodrank/level_scale.hpp"

namespace floodrank::synthetic {

// Relative frequency of level0..level10; decays above level 5 so the highest
// levels are rare.
inline constexpr std::array<double, 11> kDefaultLevelWeights = {
    0.08, 0.06, 0.10, 0.13, 0.15, 0.14, 0.11, 0.09, 0.07, 0.04, 0.03};

struct GeneratorConfig {
  int count = 100;
  int image_size = 32;
  std::uint64_t seed = 0;
  std::string id_prefix = "syn";
  std::array<double, 11> level_weights = kDefaultLevelWeights;
  double max_tilt_deg = 5.0;
  int distractors = 6;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Per-image seed from (generator seed, id); independent of generation order.
inline std::uint64_t image_seed(std::uint64_t seed, const std::string& id) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : id) h = (h ^ c) * 0x100000001b3ULL;
  return splitmix64(seed ^ splitmix64(h));
}

using Rgb = std::array<float, 3>;

struct Shape {
  enum Kind { rect, ellipse } kind = rect;
  float x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // unit coordinates, y grows downwards
  Rgb color{};
  float stripe = 0.f;  // amplitude of window/stripe pattern
};

// Everything needed to render one scene; a pure function of (image seed, depth).
struct SceneParams {
  std::uint64_t seed = 0;
  double depth_cm = 0.0;
  double tilt_rad = 0.0;
  Rgb sky_top{}, sky_bottom{};
  Rgb ground{};
  float horizon = 0.5f;  // unit y of the ground line
  std::vector<Shape> shapes;
  Rgb water{};
  float ripple_amp = 0.f, ripple_freq = 0.f, ripple_phase = 0.f;
  float noise = 0.f;
  float gain = 1.f, bias = 0.f;
};

namespace detail {

inline float hash_noise(std::uint64_t seed, int x, int y, int layer) {
  const auto h = splitmix64(seed ^ (std::uint64_t(std::uint32_t(x)) << 32) ^
                            (std::uint64_t(std::uint32_t(y)) << 8) ^ std::uint64_t(layer));
  return static_cast<float>((h >> 11) * (1.0 / 9007199254740992.0)) * 2.f - 1.f;
}

inline Rgb hsv(float h, float s, float v) {
  h = std::fmod(h, 1.f) * 6.f;
  const int i = static_cast<int>(h);
  const float f = h - i, p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (i % 6) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

// Water colours: muddy browns, greys and dark green-blues.
inline Rgb water_color(std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(0.f, 1.f);
  const float kind = u(rng);
  if (kind < 0.45f) return hsv(0.07f + 0.06f * u(rng), 0.35f + 0.3f * u(rng), 0.30f + 0.35f * u(rng));
  if (kind < 0.7f) return hsv(u(rng), 0.05f + 0.1f * u(rng), 0.30f + 0.4f * u(rng));
  return hsv(0.45f + 0.15f * u(rng), 0.3f + 0.3f * u(rng), 0.25f + 0.35f * u(rng));
}

inline Rgb any_color(std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(0.f, 1.f);
  // Occasionally pick a water-like colour so colour alone does not identify water.
  if (u(rng) < 0.3f) return water_color(rng);
  return hsv(u(rng), 0.1f + 0.7f * u(rng), 0.2f + 0.75f * u(rng));
}

}  // namespace detail

inline SceneParams make_scene(std::uint64_t seed, double depth_cm, const GeneratorConfig& cfg = {}) {
  DepthCm{depth_cm};
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.f, 1.f);
  SceneParams s;
  s.seed = seed;
  s.depth_cm = depth_cm;
  s.tilt_rad = (2.0 * u(rng) - 1.0) * cfg.max_tilt_deg * std::numbers::pi / 180.0;
  s.sky_top = detail::hsv(0.55f + 0.1f * u(rng), 0.1f + 0.5f * u(rng), 0.55f + 0.4f * u(rng));
  s.sky_bottom = detail::hsv(0.5f + 0.2f * u(rng), 0.05f + 0.3f * u(rng), 0.6f + 0.35f * u(rng));
  s.ground = detail::hsv(u(rng), 0.05f + 0.2f * u(rng), 0.25f + 0.4f * u(rng));
  s.horizon = 0.3f + 0.4f * u(rng);

  const int buildings = 1 + static_cast<int>(u(rng) * 4);
  for (int i = 0; i < buildings; ++i) {
    Shape b;
    b.kind = Shape::rect;
    b.x0 = u(rng) * 0.9f;
    b.x1 = std::min(1.f, b.x0 + 0.15f + 0.4f * u(rng));
    b.y0 = 0.05f + u(rng) * (s.horizon - 0.05f);
    b.y1 = 1.f;
    b.color = detail::any_color(rng);
    b.stripe = 0.15f * u(rng);
    s.shapes.push_back(b);
  }
  for (int i = 0; i < cfg.distractors; ++i) {
    Shape d;
    d.kind = u(rng) < 0.5f ? Shape::rect : Shape::ellipse;
    const float w = 0.05f + 0.2f * u(rng), h = 0.05f + 0.35f * u(rng);
    d.x0 = u(rng) * (1 - w);
    d.x1 = d.x0 + w;
    d.y0 = u(rng) * (1 - h);
    d.y1 = d.y0 + h;
    d.color = detail::any_color(rng);
    d.stripe = 0.1f * u(rng);
    s.shapes.push_back(d);
  }
  s.water = detail::water_color(rng);
  s.ripple_amp = 0.03f + 0.07f * u(rng);
  s.ripple_freq = 1.5f + 2.5f * u(rng);
  s.ripple_phase = 6.2831853f * u(rng);
  s.noise = 0.01f + 0.03f * u(rng);
  s.gain = 0.8f + 0.4f * u(rng);
  s.bias = -0.05f + 0.1f * u(rng);
  return s;
}

// Vertical offset (pixels) of the water edge at horizontal position x (pixels).
// The tilt fades out near empty/full frames so depth 0 shows no water and depth
// 170 covers the whole frame.
inline double edge_offset(const SceneParams& s, double x, int width) {
  const double f = s.depth_cm / kMaxDepthCm;
  const double fade = std::min(1.0, 10.0 * std::min(f, 1.0 - f));
  return std::tan(s.tilt_rad) * (x - width / 2.0) * fade;
}

// Water edge row (pixels from the top) at horizontal position x.
inline double edge_row(const SceneParams& s, double x, int height, int width) {
  const double f = s.depth_cm / kMaxDepthCm;
  return height * (1.0 - f) + edge_offset(s, x, width);
}

enum class Layer { background, water };

inline Rgb layer_pixel(const SceneParams& s, Layer layer, int x, int y, int size) {
  const float ux = (x + 0.5f) / size, uy = (y + 0.5f) / size;
  Rgb c{};
  if (layer == Layer::background) {
    if (uy < s.horizon) {
      const float t = uy / s.horizon;
      for (int k = 0; k < 3; ++k) c[k] = s.sky_top[k] * (1 - t) + s.sky_bottom[k] * t;
    } else {
      c = s.ground;
    }
    for (const auto& sh : s.shapes) {
      bool inside = false;
      if (sh.kind == Shape::rect) {
        inside = ux >= sh.x0 && ux < sh.x1 && uy >= sh.y0 && uy < sh.y1;
      } else {
        const float cx = (sh.x0 + sh.x1) / 2, cy = (sh.y0 + sh.y1) / 2;
        const float rx = (sh.x1 - sh.x0) / 2, ry = (sh.y1 - sh.y0) / 2;
        const float dx = (ux - cx) / rx, dy = (uy - cy) / ry;
        inside = dx * dx + dy * dy <= 1.f;
      }
      if (inside) {
        const float pattern = ((x / 2 + y / 2) % 2 == 0) ? sh.stripe : -sh.stripe;
        for (int k = 0; k < 3; ++k) c[k] = sh.color[k] + pattern;
      }
    }
  } else {
    const float ripple = s.ripple_amp * std::sin(6.2831853f * s.ripple_freq * uy * 4.f +
                                                 s.ripple_phase + 2.f * ux);
    for (int k = 0; k < 3; ++k) c[k] = s.water[k] + ripple;
  }
  const int id = layer == Layer::background ? 0 : 1;
  for (int k = 0; k < 3; ++k) {
    const float n = s.noise * detail::hash_noise(s.seed, x, y, id * 3 + k);
    c[k] = std::clamp(s.gain * (c[k] + n) + s.bias, 0.f, 1.f);
  }
  return c;
}

// Water coverage of pixel (x, y): vertical overlap of the pixel with the region
// below the edge, sampled at the pixel's centre column.
inline float water_coverage(const SceneParams& s, int x, int y, int size) {
  if (s.depth_cm <= 0.0) return 0.f;
  if (s.depth_cm >= kMaxDepthCm) return 1.f;
  const double e = edge_row(s, x + 0.5, size, size);
  return static_cast<float>(std::clamp(y + 1.0 - e, 0.0, 1.0));
}

inline Image render_scene(const SceneParams& s, int size) {
  if (size < 4) throw DomainError("image size must be at least 4");
  Image img(size, size, 3);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const auto bg = layer_pixel(s, Layer::background, x, y, size);
      const float a = water_coverage(s, x, y, size);
      const auto wa = a > 0.f ? layer_pixel(s, Layer::water, x, y, size) : bg;
      for (int k = 0; k < 3; ++k) img.at(y, x, k) = a * wa[k] + (1 - a) * bg[k];
    }
  return img;
}

// Rendering-inverse check: recovers the water depth from rendered pixels by
// solving for per-pixel water coverage against the scene's own layers. Coverage
// is non-decreasing down a column, so a pixel whose water and background
// colours are too similar takes the value its neighbours force on it; columns
// where that is ambiguous are skipped. The median column estimate is returned.
inline double read_back_depth(const Image& img, const SceneParams& s) {
  const int size = img.width;
  std::vector<double> estimates;
  std::vector<double> a(size);
  for (int x = 0; x < size; ++x) {
    for (int y = 0; y < size; ++y) {
      const auto bg = layer_pixel(s, Layer::background, x, y, size);
      const auto wa = layer_pixel(s, Layer::water, x, y, size);
      double num = 0, den = 0;
      for (int k = 0; k < 3; ++k) {
        num += (img.at(y, x, k) - bg[k]) * (wa[k] - bg[k]);
        den += (wa[k] - bg[k]) * (wa[k] - bg[k]);
      }
      a[y] = den < 0.01 ? std::nan("") : std::clamp(num / den, 0.0, 1.0);
    }
    bool usable = true;
    double covered = 0.0;
    for (int y = 0; y < size && usable; ++y) {
      double v = a[y];
      if (std::isnan(v)) {
        int up = y - 1, down = y + 1;
        while (up >= 0 && std::isnan(a[up])) --up;
        while (down < size && std::isnan(a[down])) ++down;
        // Anything above a pixel that is not full is empty; anything below a
        // pixel that is not empty is full.
        if (up >= 0 && a[up] > 0.5) v = 1.0;
        else if (down < size && a[down] < 0.5) v = 0.0;
        else usable = false;
      }
      covered += v;
    }
    if (!usable) continue;
  const double e = size - covered;
    double f;
    if (covered <= 0.0) f = 0.0;
    else if (covered >= size) f = 1.0;
    else f = 1.0 - (e - edge_offset(s, x + 0.5, size)) / size;
    estimates.push_back(std::clamp(f, 0.0, 1.0) * kMaxDepthCm);
  }
  if (estimates.empty()) return std::nan("");
  std::nth_element(estimates.begin(), estimates.begin() + estimates.size() / 2, estimates.end());
  return estimates[estimates.size() / 2];
}

inline int sample_level(std::mt19937_64& rng, const std::array<double, 11>& weights) {
  std::discrete_distribution<int> d(weights.begin(), weights.end());
  return d(rng);
}

inline std::string make_id(const GeneratorConfig& cfg, int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06d", index);
  return cfg.id_prefix + "-" + buf;
}

// One sample's record and scene, without touching the filesystem.
struct SyntheticSample {
  SampleRecord record;
  SceneParams scene;
};

inline SyntheticSample make_sample(const GeneratorConfig& cfg, int index) {
  SyntheticSample out;
  out.record.id = make_id(cfg, index);
  const auto seed = image_seed(cfg.seed, out.record.id);
  std::mt19937_64 rng(splitmix64(seed + 1));
  const int level = sample_level(rng, cfg.level_weights);
  out.record.level = level;
  out.record.depth_cm = kLevelAnchorsCm[level];
  out.record.source_flooded = level > 0;
  out.record.image_uri = "images/" + out.record.id + ".png";
  out.scene = make_scene(seed, *out.record.depth_cm, cfg);
  return out;
}

// Renders cfg.count scenes to <out_dir>/images/*.png and writes
// <out_dir>/manifest.jsonl. Returns the manifest.
inline DatasetManifest generate_synthetic(const GeneratorConfig& cfg,
                                          const std::filesystem::path& out_dir) {
  if (cfg.count < 1) throw DomainError("count must be at least 1");
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "images", ec);
  if (ec) throw IoError("cannot create " + (out_dir / "images").string() + ": " + ec.message());

  DatasetManifest m;
  m.name = cfg.id_prefix;
  m.base_dir = out_dir;
  m.records.reserve(cfg.count);
  for (int i = 0; i < cfg.count; ++i) {
    auto sample = make_sample(cfg, i);
    write_png(out_dir / sample.record.image_uri, render_scene(sample.scene, cfg.image_size));
    m.records.push_back(std::move(sample.record));
  }
  save_manifest(out_dir / "manifest.jsonl", m);
  return m;
}

}  // namespace floodrank::synthetic
