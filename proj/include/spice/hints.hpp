#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "spice/error.hpp"
#include "spice/image.hpp"
#include "spice/imageops.hpp"

namespace spice {

enum class HintKind { color_patch, reference_paste };

inline std::string to_string(HintKind k) { return k == HintKind::color_patch ? "color_patch" : "reference_paste"; }

inline HintKind parse_hint_kind(const std::string& s) {
  if (s == "color_patch") return HintKind::color_patch;
  if (s == "reference_paste") return HintKind::reference_paste;
  fail(ErrorCode::bad_request, "unknown hint kind '" + s + "'");
}

// A full-canvas hint raster. Pixels with alpha > 0 (or every pixel of an RGB raster) form the support.
struct HintLayer {
  HintKind kind = HintKind::color_patch;
  ImageBuffer raster;
  double opacity = 0.8;

  bool on_support(int x, int y) const { return raster.channels() != 4 || raster.at(x, y, 3) > 0; }
};

// Applies the layers in order: on a layer's support, out = opacity * layer + (1 - opacity) * current.
inline ImageBuffer composite_hints(const ImageBuffer& base, const std::vector<HintLayer>& layers) {
  ImageBuffer out = base;
  if (layers.empty()) return out;
  require(base.channels() >= 3, "hint compositing needs an RGB or RGBA base image");
  for (const auto& layer : layers) {
    require(layer.raster.same_dims(base), "hint layer dimensions differ from the base image");
    require(layer.raster.channels() >= 3, "hint layers must be RGB or RGBA");
    require(layer.opacity >= 0.0 && layer.opacity <= 1.0, "hint opacity must be in [0,1]");
    const double op = layer.opacity;
    if (op == 0.0) continue;
    for (int y = 0; y < base.height(); ++y)
      for (int x = 0; x < base.width(); ++x) {
        if (!layer.on_support(x, y)) continue;
        for (int c = 0; c < 3; ++c) {
          out.at(x, y, c) = op == 1.0 ? layer.raster.at(x, y, c)
                                      : quantize(op * layer.raster.unit(x, y, c) + (1.0 - op) * out.unit(x, y, c));
        }
      }
  }
  return out;
}

struct CannyParams {
  double sigma = 1.4;
  double low = 0.1;   // fraction of the maximum gradient magnitude
  double high = 0.2;
};

namespace detail {

using wide = __int128;

// tan(22.5 deg) ~= 41421 / 100000, used for exact integer direction binning.
constexpr std::int64_t kTanNum = 41421;
constexpr std::int64_t kTanDen = 100000;

struct Gradient {
  std::vector<std::int64_t> gx, gy;
  std::vector<wide> mag2;
};

inline std::vector<std::int64_t> integer_gaussian_taps(double sigma) {
  const int r = gaussian_radius(sigma);
  std::vector<std::int64_t> taps(2 * r + 1);
  for (int i = -r; i <= r; ++i)
    taps[i + r] = std::llround(std::exp(-(static_cast<double>(i) * i) / (2.0 * sigma * sigma)) * 256.0);
  return taps;
}

// Integer luma -> integer Gaussian -> integer Sobel, all clamp-to-edge. Exact, so the result is
// equivariant under 90-degree rotations and invariant to constant luma offsets.
inline Gradient gradient(const ImageBuffer& img, double sigma) {
  const int w = img.width(), h = img.height();
  const auto idx = [w](int x, int y) { return static_cast<std::size_t>(y) * w + x; };
  std::vector<std::int64_t> luma(static_cast<std::size_t>(w) * h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) luma[idx(x, y)] = luma_milli(img, x, y);

  const auto taps = integer_gaussian_taps(sigma);
  const int r = static_cast<int>(taps.size() / 2);
  std::vector<std::int64_t> tmp(luma.size()), smooth(luma.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      std::int64_t acc = 0;
      for (int i = -r; i <= r; ++i) acc += taps[i + r] * luma[idx(std::clamp(x + i, 0, w - 1), y)];
      tmp[idx(x, y)] = acc;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      std::int64_t acc = 0;
      for (int i = -r; i <= r; ++i) acc += taps[i + r] * tmp[idx(x, std::clamp(y + i, 0, h - 1))];
      smooth[idx(x, y)] = acc;
    }

  Gradient g;
  g.gx.resize(luma.size());
  g.gy.resize(luma.size());
  g.mag2.resize(luma.size());
  const auto s = [&](int x, int y) { return smooth[idx(std::clamp(x, 0, w - 1), std::clamp(y, 0, h - 1))]; };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::int64_t gx = (s(x + 1, y - 1) + 2 * s(x + 1, y) + s(x + 1, y + 1)) -
                              (s(x - 1, y - 1) + 2 * s(x - 1, y) + s(x - 1, y + 1));
      const std::int64_t gy = (s(x - 1, y + 1) + 2 * s(x, y + 1) + s(x + 1, y + 1)) -
                              (s(x - 1, y - 1) + 2 * s(x, y - 1) + s(x + 1, y - 1));
      g.gx[idx(x, y)] = gx;
      g.gy[idx(x, y)] = gy;
      g.mag2[idx(x, y)] = static_cast<wide>(gx) * gx + static_cast<wide>(gy) * gy;
    }
  return g;
}

inline int sign(std::int64_t v) { return (v > 0) - (v < 0); }

// Unit step along the quantised gradient direction (towards increasing luma).
inline std::pair<int, int> gradient_step(std::int64_t gx, std::int64_t gy) {
  const wide ax = gx < 0 ? -static_cast<wide>(gx) : gx;
  const wide ay = gy < 0 ? -static_cast<wide>(gy) : gy;
  if (kTanDen * ay <= kTanNum * ax) return {sign(gx), 0};
  if (kTanDen * ax <= kTanNum * ay) return {0, sign(gy)};
  return {sign(gx), sign(gy)};
}

}  // namespace detail

// Classic Canny: Gaussian smoothing, Sobel, 4-direction non-maximum suppression and
// hysteresis with thresholds relative to the crop's maximum gradient magnitude.
// NMS keeps a pixel when it is >= its neighbour against the gradient and > its neighbour along
// the gradient, which thins exact two-pixel plateaus to the brighter side.
inline EdgeMap canny_edges(const ImageBuffer& crop, const CannyParams& params = {}) {
  require(params.sigma > 0.0, "canny sigma must be positive");
  require(params.low > 0.0 && params.low < params.high, "canny thresholds must satisfy 0 < low < high");
  const int w = crop.width(), h = crop.height();
  const auto idx = [w](int x, int y) { return static_cast<std::size_t>(y) * w + x; };
  const auto g = detail::gradient(crop, params.sigma);

  EdgeMap edges(w, h);
  detail::wide max2 = 0;
  for (auto m : g.mag2) max2 = std::max(max2, m);
  if (max2 == 0) return edges;

  const auto mag_at = [&](int x, int y) -> detail::wide {
    if (x < 0 || y < 0 || x >= w || y >= h) return 0;
    return g.mag2[idx(x, y)];
  };

  std::vector<std::uint8_t> thin(g.mag2.size(), 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const auto m = g.mag2[idx(x, y)];
      if (m == 0) continue;
      const auto [dx, dy] = detail::gradient_step(g.gx[idx(x, y)], g.gy[idx(x, y)]);
      if (m >= mag_at(x - dx, y - dy) && m > mag_at(x + dx, y + dy)) thin[idx(x, y)] = 1;
    }

  const double maxd = static_cast<double>(max2);
  const double high2 = params.high * params.high * maxd;
  const double low2 = params.low * params.low * maxd;
  std::vector<std::pair<int, int>> stack;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (thin[idx(x, y)] && static_cast<double>(g.mag2[idx(x, y)]) >= high2) {
        edges.set(x, y);
        stack.push_back({x, y});
      }
  while (!stack.empty()) {
    auto [cx, cy] = stack.back();
    stack.pop_back();
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const int nx = cx + dx, ny = cy + dy;
        if (nx < 0 || ny < 0 || nx >= w || ny >= h || edges.test(nx, ny)) continue;
        const auto n = idx(nx, ny);
        if (thin[n] && static_cast<double>(g.mag2[n]) >= low2) {
          edges.set(nx, ny);
          stack.push_back({nx, ny});
        }
      }
  }
  return edges;
}

}  // namespace spice
