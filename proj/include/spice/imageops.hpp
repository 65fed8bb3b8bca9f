#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <type_traits>
#include <vector>

#include "spice/error.hpp"
#include "spice/image.hpp"

namespace spice {

enum class ResampleFilter { nearest, bilinear, area_average };

namespace detail {

// Source index for destination sample `x` under nearest-neighbour, sampling at pixel centres.
inline int nearest_index(int x, int src, int dst) {
  const auto i = (static_cast<std::int64_t>(2 * x + 1) * src) / (2 * static_cast<std::int64_t>(dst));
  return static_cast<int>(std::min<std::int64_t>(i, src - 1));
}

struct LinearTap {
  int i0;
  int i1;
  double frac;
};

inline std::vector<LinearTap> bilinear_taps(int src, int dst) {
  std::vector<LinearTap> taps(dst);
  for (int x = 0; x < dst; ++x) {
    // centre-aligned: s = (x + 0.5) * src / dst - 0.5
    double s = static_cast<double>(static_cast<std::int64_t>(2 * x + 1) * src - dst) / (2.0 * dst);
    s = std::clamp(s, 0.0, static_cast<double>(src - 1));
    const int i0 = static_cast<int>(std::floor(s));
    const int i1 = std::min(i0 + 1, src - 1);
    taps[x] = {i0, i1, s - i0};
  }
  return taps;
}

struct AreaTap {
  int index;
  std::int64_t weight;
};

// Exact box overlaps in integer units: destination pixel x spans [x*src, (x+1)*src),
// source pixel i spans [i*dst, (i+1)*dst). Weights of one destination pixel sum to `src`.
inline std::vector<std::vector<AreaTap>> area_taps(int src, int dst) {
  std::vector<std::vector<AreaTap>> taps(dst);
  for (int x = 0; x < dst; ++x) {
    const std::int64_t lo = static_cast<std::int64_t>(x) * src;
    const std::int64_t hi = lo + src;
    for (auto i = lo / dst; i < src && i * dst < hi; ++i) {
      const std::int64_t a = std::max(lo, i * dst);
      const std::int64_t b = std::min(hi, (i + 1) * dst);
      if (b > a) taps[x].push_back({static_cast<int>(i), b - a});
    }
  }
  return taps;
}

}  // namespace detail

// Nearest-neighbour resize for single-channel rasters (masks).
template <typename P>
  requires requires(const P& p) { p.values; p.width; p.height; }
P resize_nearest(const P& src, int width, int height) {
  require(width >= 1 && height >= 1, "resize target must be at least 1x1");
  P out(width, height);
  for (int y = 0; y < height; ++y) {
    const int sy = detail::nearest_index(y, src.height, height);
    for (int x = 0; x < width; ++x) out.at(x, y) = src.at(detail::nearest_index(x, src.width, width), sy);
  }
  return out;
}

inline ImageBuffer resize(const ImageBuffer& src, int width, int height, ResampleFilter filter) {
  require(width >= 1 && height >= 1, "resize target must be at least 1x1");
  if (width == src.width() && height == src.height()) return src;
  const int ch = src.channels();
  ImageBuffer out(width, height, ch);

  switch (filter) {
    case ResampleFilter::nearest: {
      for (int y = 0; y < height; ++y) {
        const int sy = detail::nearest_index(y, src.height(), height);
        for (int x = 0; x < width; ++x) {
          const int sx = detail::nearest_index(x, src.width(), width);
          for (int c = 0; c < ch; ++c) out.at(x, y, c) = src.at(sx, sy, c);
        }
      }
      break;
    }
    case ResampleFilter::bilinear: {
      const auto tx = detail::bilinear_taps(src.width(), width);
      const auto ty = detail::bilinear_taps(src.height(), height);
      for (int y = 0; y < height; ++y) {
        const auto& v = ty[y];
        for (int x = 0; x < width; ++x) {
          const auto& h = tx[x];
          for (int c = 0; c < ch; ++c) {
            const double top = (1.0 - h.frac) * src.unit(h.i0, v.i0, c) + h.frac * src.unit(h.i1, v.i0, c);
            const double bottom = (1.0 - h.frac) * src.unit(h.i0, v.i1, c) + h.frac * src.unit(h.i1, v.i1, c);
            out.at(x, y, c) = quantize((1.0 - v.frac) * top + v.frac * bottom);
          }
        }
      }
      break;
    }
    case ResampleFilter::area_average: {
      const auto tx = detail::area_taps(src.width(), width);
      const auto ty = detail::area_taps(src.height(), height);
      const std::int64_t denom = static_cast<std::int64_t>(src.width()) * src.height();
      for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
          for (int c = 0; c < ch; ++c) {
            std::int64_t sum = 0;
            for (const auto& a : ty[y])
              for (const auto& b : tx[x]) sum += a.weight * b.weight * src.at(b.index, a.index, c);
            // round half away from zero on the exact rational sum / denom
            out.at(x, y, c) = static_cast<std::uint8_t>((2 * sum + denom) / (2 * denom));
          }
        }
      }
      break;
    }
  }
  return out;
}

// Area average when neither dimension grows, bilinear otherwise.
inline ResampleFilter pick_filter(int src_w, int src_h, int dst_w, int dst_h) {
  return (dst_w <= src_w && dst_h <= src_h) ? ResampleFilter::area_average : ResampleFilter::bilinear;
}

inline int gaussian_radius(double sigma) { return static_cast<int>(std::ceil(3.0 * sigma)); }

inline std::vector<double> gaussian_weights(double sigma) {
  const int r = gaussian_radius(sigma);
  std::vector<double> w(2 * r + 1);
  for (int i = -r; i <= r; ++i) w[i + r] = std::exp(-(static_cast<double>(i) * i) / (2.0 * sigma * sigma));
  return w;
}

// Separable Gaussian blur, clamp-to-edge borders. Each pass divides the weighted sum by the
// weight total accumulated in the same order, so constant regions stay exactly constant.
template <typename P>
  requires requires(const P& p) { p.values; p.width; p.height; }
SoftMask gaussian_blur(const P& mask, double sigma) {
  require(sigma > 0.0 && std::isfinite(sigma), "gaussian blur sigma must be positive");
  const int w = mask.width;
  const int h = mask.height;
  const auto weights = gaussian_weights(sigma);
  const int r = gaussian_radius(sigma);
  double total = 0.0;
  for (double v : weights) total += v;

  std::vector<double> tmp(static_cast<std::size_t>(w) * h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i) {
        const int sx = std::clamp(x + i, 0, w - 1);
        acc += weights[i + r] * static_cast<double>(mask.at(sx, y));
      }
      tmp[static_cast<std::size_t>(y) * w + x] = acc / total;
    }
  }

  SoftMask out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i) {
        const int sy = std::clamp(y + i, 0, h - 1);
        acc += weights[i + r] * tmp[static_cast<std::size_t>(sy) * w + x];
      }
      out.at(x, y) = std::clamp(acc / total, 0.0, 1.0);
    }
  }
  return out;
}

// out = soft * edited + (1 - soft) * original, per channel.
inline ImageBuffer blend(const ImageBuffer& original, const ImageBuffer& edited, const SoftMask& soft) {
  require(original.same_dims(edited) && original.channels() == edited.channels(),
          "blend: original and edited images differ in shape");
  require(original.same_dims(soft), "blend: soft mask dimensions differ from image");
  ImageBuffer out = original;
  const int ch = original.channels();
  for (int y = 0; y < original.height(); ++y) {
    for (int x = 0; x < original.width(); ++x) {
      const double s = soft.at(x, y);
      if (s == 0.0) continue;
      for (int c = 0; c < ch; ++c) {
        if (s == 1.0) {
          out.at(x, y, c) = edited.at(x, y, c);
        } else {
          out.at(x, y, c) = quantize(s * edited.unit(x, y, c) + (1.0 - s) * original.unit(x, y, c));
        }
      }
    }
  }
  return out;
}

struct Hue {
  double value = 0.0;  // [0,1)
  bool degenerate = false;
};

// Hexcone hue of an RGB triple in [0,1]; gray inputs return 0 flagged degenerate.
inline Hue rgb_to_hsv_hue(double r, double g, double b) {
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double d = mx - mn;
  if (d <= 0.0) return {0.0, true};
  double h;
  if (mx == r) {
    h = (g - b) / d;
    if (h < 0.0) h += 6.0;
  } else if (mx == g) {
    h = (b - r) / d + 2.0;
  } else {
    h = (r - g) / d + 4.0;
  }
  h /= 6.0;
  if (h >= 1.0) h -= 1.0;
  return {h, false};
}

// Luma 0.299R + 0.587G + 0.114B scaled by 1000 (exact integer form).
inline std::int32_t luma_milli(const ImageBuffer& img, int x, int y) {
  if (img.channels() < 3) return 1000 * img.at(x, y, 0);
  return 299 * img.at(x, y, 0) + 587 * img.at(x, y, 1) + 114 * img.at(x, y, 2);
}

inline ImageBuffer to_rgb(const ImageBuffer& img) {
  if (img.channels() == 3) return img;
  ImageBuffer out(img.width(), img.height(), 3);
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = img.at(x, y, img.channels() == 1 ? 0 : c);
  return out;
}

inline BinaryMask threshold_mask(const ImageBuffer& gray, std::uint8_t level = 128) {
  BinaryMask m(gray.width(), gray.height());
  for (int y = 0; y < gray.height(); ++y)
    for (int x = 0; x < gray.width(); ++x) m.set(x, y, gray.at(x, y, 0) >= level);
  return m;
}

template <typename P>
  requires requires(const P& p) { p.values; p.width; p.height; }
ImageBuffer mask_to_gray(const P& mask) {
  ImageBuffer out(mask.width, mask.height, 1);
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x) {
      if constexpr (std::is_floating_point_v<std::decay_t<decltype(mask.at(0, 0))>>)
        out.at(x, y, 0) = quantize(mask.at(x, y));
      else
        out.at(x, y, 0) = mask.at(x, y) ? 255 : 0;
    }
  return out;
}

inline SoftMask gray_to_soft(const ImageBuffer& gray) {
  SoftMask m(gray.width(), gray.height());
  for (int y = 0; y < gray.height(); ++y)
    for (int x = 0; x < gray.width(); ++x) m.at(x, y) = gray.unit(x, y, 0);
  return m;
}

}  // namespace spice
