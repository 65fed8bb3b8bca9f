#pragma once

#include <algorithm>
#include <cstdint>
#include <utility>
#include <vector>

#include "spice/error.hpp"
#include "spice/image.hpp"
#include "spice/imageops.hpp"

namespace spice {

struct ContextDot {
  double centroid_x = 0.0;  // pixel-centre coordinates
  double centroid_y = 0.0;
  int area = 0;
  BoundingBox box;
};

struct ContextAnalysis {
  BinaryMask edit_mask;  // M without dots
  BinaryMask dot_mask;   // pixels of the classified dots
  std::vector<ContextDot> dots;
  int edit_components = 0;
  BoundingBox context_bbox;   // tight over every foreground pixel of M_context
  BoundingBox extended_bbox;  // aspect-matched to the working resolution
  bool clamped = false;
  bool dots_included = true;  // false under the disable_context_dots ablation

  // The mask that gets softened and inpainted.
  BinaryMask inpaint_mask() const {
    if (!dots_included) return edit_mask;
    BinaryMask m = edit_mask;
    for (std::size_t i = 0; i < m.size(); ++i) m.values[i] = (edit_mask.values[i] | dot_mask.values[i]) ? 1 : 0;
    return m;
  }
};

// Foreground = value >= 128 (luma for colour images).
inline ContextMask mask_from_image(const ImageBuffer& img) {
  ContextMask m(img.width(), img.height());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      const int v = img.channels() == 1 ? img.at(x, y, 0) : (luma_milli(img, x, y) + 500) / 1000;
      m.set(x, y, v >= 128);
    }
  return m;
}

inline BoundingBox tight_bbox(const BinaryMask& mask) {
  int x0 = mask.width, y0 = mask.height, x1 = -1, y1 = -1;
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x)
      if (mask.test(x, y)) {
        x0 = std::min(x0, x);
        y0 = std::min(y0, y);
        x1 = std::max(x1, x);
        y1 = std::max(y1, y);
      }
  require(x1 >= 0, "mask is empty: no edit region");
  return {x0, y0, x1 + 1, y1 + 1};
}

struct Component {
  std::vector<std::pair<int, int>> pixels;
  BoundingBox box;
};

// 8-connected components in raster order of their first pixel.
inline std::vector<Component> connected_components(const BinaryMask& mask) {
  std::vector<Component> out;
  std::vector<std::uint8_t> seen(mask.size(), 0);
  std::vector<std::pair<int, int>> stack;
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      const auto idx = static_cast<std::size_t>(y) * mask.width + x;
      if (!mask.values[idx] || seen[idx]) continue;
      Component comp;
      comp.box = {x, y, x + 1, y + 1};
      seen[idx] = 1;
      stack.push_back({x, y});
      while (!stack.empty()) {
        auto [cx, cy] = stack.back();
        stack.pop_back();
        comp.pixels.push_back({cx, cy});
        comp.box = BoundingBox::unite(comp.box, {cx, cy, cx + 1, cy + 1});
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int nx = cx + dx, ny = cy + dy;
            if (nx < 0 || ny < 0 || nx >= mask.width || ny >= mask.height) continue;
            const auto n = static_cast<std::size_t>(ny) * mask.width + nx;
            if (mask.values[n] && !seen[n]) {
              seen[n] = 1;
              stack.push_back({nx, ny});
            }
          }
      }
      out.push_back(std::move(comp));
    }
  }
  return out;
}

// Components with area <= dot_area_max are context dots; everything else is the edit region.
inline ContextAnalysis classify_context_dots(const ContextMask& mask, int dot_area_max) {
  require(!mask.empty(), "mask is empty: no edit region");
  ContextAnalysis a;
  a.edit_mask = BinaryMask(mask.width, mask.height);
  a.dot_mask = BinaryMask(mask.width, mask.height);
  for (auto& comp : connected_components(mask)) {
    const int area = static_cast<int>(comp.pixels.size());
    if (area <= dot_area_max) {
      ContextDot dot;
      dot.area = area;
      dot.box = comp.box;
      for (auto [x, y] : comp.pixels) {
        dot.centroid_x += x + 0.5;
        dot.centroid_y += y + 0.5;
        a.dot_mask.set(x, y);
      }
      dot.centroid_x /= area;
      dot.centroid_y /= area;
      a.dots.push_back(dot);
    } else {
      ++a.edit_components;
      for (auto [x, y] : comp.pixels) a.edit_mask.set(x, y);
    }
  }
  require(a.edit_components > 0, "no edit region: the mask contains only context dots");
  a.context_bbox = tight_bbox(mask);
  return a;
}

struct ExtendedBox {
  BoundingBox box;
  bool clamped = false;
};

namespace detail {

// Centres an interval of `length` on [lo, hi) (odd padding to the high side), then shifts it
// into [0, dim). Returns false when it cannot fit.
inline bool place_interval(int lo, int hi, int length, int dim, int& out_lo, int& out_hi) {
  if (length >= dim) {
    out_lo = 0;
    out_hi = dim;
    return length == dim;
  }
  const int pad = length - (hi - lo);
  out_lo = lo - pad / 2;
  out_hi = out_lo + length;
  if (out_lo < 0) {
    out_hi -= out_lo;
    out_lo = 0;
  }
  if (out_hi > dim) {
    out_lo -= out_hi - dim;
    out_hi = dim;
  }
  return true;
}

}  // namespace detail

// Grows `bbox` along one axis until its aspect matches target.width / target.height.
// Extending height: h' = ceil(w / a), and the width then takes up any whole pixel of slack,
// w' = max(w, floor(h' * a)), so |w'/h' - a| < 1/min(w', h') on both branches.
inline ExtendedBox extend_bbox(const BoundingBox& bbox, const Resolution& target, int image_width, int image_height) {
  require(bbox.inside(image_width, image_height), "bounding box outside image");
  require(target.width >= 1 && target.height >= 1, "target resolution must be positive");
  const std::int64_t w = bbox.width(), h = bbox.height();
  const std::int64_t tw = target.width, th = target.height;
  std::int64_t nw, nh;
  if (w * th < tw * h) {
    nh = h;
    nw = (h * tw + th - 1) / th;
  } else {
    nh = (w * th + tw - 1) / tw;
    nw = std::max(w, (nh * tw) / th);
  }
  ExtendedBox out;
  bool fit_x = detail::place_interval(bbox.x0, bbox.x1, static_cast<int>(std::min<std::int64_t>(nw, image_width + 1LL)),
                                      image_width, out.box.x0, out.box.x1);
  bool fit_y = detail::place_interval(bbox.y0, bbox.y1, static_cast<int>(std::min<std::int64_t>(nh, image_height + 1LL)),
                                      image_height, out.box.y0, out.box.y1);
  out.clamped = !(fit_x && fit_y);
  return out;
}

// Scales `box` about its centre by `factor`, keeps `must_contain` inside, and re-extends the
// result to the target aspect.
inline ExtendedBox scale_context(const BoundingBox& box, const BoundingBox& must_contain, double factor,
                                 const Resolution& target, int image_width, int image_height) {
  require(factor > 0.0 && std::isfinite(factor), "context scale must be positive");
  const int sw = std::max(1, static_cast<int>(std::ceil(box.width() * factor)));
  const int sh = std::max(1, static_cast<int>(std::ceil(box.height() * factor)));
  BoundingBox scaled;
  detail::place_interval(box.x0, box.x1, std::min(sw, image_width), image_width, scaled.x0, scaled.x1);
  detail::place_interval(box.y0, box.y1, std::min(sh, image_height), image_height, scaled.y0, scaled.y1);
  return extend_bbox(BoundingBox::unite(scaled, must_contain), target, image_width, image_height);
}

inline void extend_analysis(ContextAnalysis& a, const Resolution& target) {
  auto ext = extend_bbox(a.context_bbox, target, a.edit_mask.width, a.edit_mask.height);
  a.extended_bbox = ext.box;
  a.clamped = ext.clamped;
}

// Drops the dots entirely: they no longer shape the bbox nor the inpainted region.
inline void exclude_dots(ContextAnalysis& a) {
  a.dots_included = false;
  a.context_bbox = tight_bbox(a.edit_mask);
}

struct SoftMasks {
  SoftMask working;  // model-space, at the working resolution
  SoftMask source;   // compositing-side, at extended bbox resolution
  double sigma_working = 0.0;
  double sigma_source = 0.0;
};

inline SoftMasks make_soft_mask(const ContextAnalysis& a, const Resolution& working, double blur_fraction,
                                bool disable_blur = false) {
  require(a.extended_bbox.valid(), "extended bounding box not computed");
  require(blur_fraction > 0.0, "blur_fraction must be positive");
  const BinaryMask source_bits = crop(a.inpaint_mask(), a.extended_bbox);
  const BinaryMask working_bits = resize_nearest(source_bits, working.width, working.height);
  SoftMasks out;
  if (disable_blur) {
    out.working = SoftMask::from_binary(working_bits);
    out.source = SoftMask::from_binary(source_bits);
    return out;
  }
  out.sigma_working = blur_fraction * std::min(working.width, working.height);
  out.sigma_source = blur_fraction * std::min(source_bits.width, source_bits.height);
  out.working = gaussian_blur(working_bits, out.sigma_working);
  out.source = gaussian_blur(source_bits, out.sigma_source);
  return out;
}

}  // namespace spice
