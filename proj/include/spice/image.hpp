#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "spice/error.hpp"

namespace spice {

// 8-bit <-> [0,1] conversion. Ties round half away from zero.
inline double to_unit(std::uint8_t v) { return static_cast<double>(v) / 255.0; }

inline std::uint8_t quantize(double unit) {
  if (!(unit > 0.0)) return 0;  // also maps NaN to 0
  if (unit >= 1.0) return 255;
  return static_cast<std::uint8_t>(std::round(unit * 255.0));
}

// Row-major single-channel raster.
template <typename T>
struct Plane {
  int width = 0;
  int height = 0;
  std::vector<T> values;

  Plane() = default;
  Plane(int w, int h, T fill = T{}) : width(w), height(h) {
    require(w >= 1 && h >= 1, "raster dimensions must be at least 1x1, got " + std::to_string(w) + "x" +
                                  std::to_string(h));
    values.assign(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill);
  }

  std::size_t size() const { return values.size(); }
  T& at(int x, int y) { return values[static_cast<std::size_t>(y) * width + x]; }
  const T& at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
  bool same_dims(int w, int h) const { return width == w && height == h; }

  friend bool operator==(const Plane&, const Plane&) = default;
};

// Binary raster, 1 = foreground / editable.
struct BinaryMask : Plane<std::uint8_t> {
  using Plane::Plane;
  BinaryMask() = default;
  explicit BinaryMask(Plane<std::uint8_t> p) : Plane(std::move(p)) {}

  bool test(int x, int y) const { return at(x, y) != 0; }
  void set(int x, int y, bool on = true) { at(x, y) = on ? 1 : 0; }
  std::size_t count() const {
    std::size_t n = 0;
    for (auto v : values) n += v != 0;
    return n;
  }
  bool empty() const { return count() == 0; }
};

// Edit mask plus user-drawn context dots, stored in the same channel.
struct ContextMask : BinaryMask {
  using BinaryMask::BinaryMask;
  ContextMask() = default;
  explicit ContextMask(BinaryMask m) : BinaryMask(std::move(m)) {}
};

// Canny output, 1 = edge.
struct EdgeMap : BinaryMask {
  using BinaryMask::BinaryMask;
  EdgeMap() = default;
  explicit EdgeMap(BinaryMask m) : BinaryMask(std::move(m)) {}
};

// Continuous mask with values in [0,1].
struct SoftMask : Plane<double> {
  using Plane::Plane;
  SoftMask() = default;
  explicit SoftMask(Plane<double> p) : Plane(std::move(p)) {}

  static SoftMask from_binary(const BinaryMask& m) {
    SoftMask out(m.width, m.height);
    for (std::size_t i = 0; i < m.size(); ++i) out.values[i] = m.values[i] ? 1.0 : 0.0;
    return out;
  }
};

class ImageBuffer {
 public:
  ImageBuffer() = default;
  ImageBuffer(int width, int height, int channels, std::uint8_t fill = 0) : width_(width), height_(height), channels_(channels) {
    require(width >= 1 && height >= 1, "image dimensions must be at least 1x1, got " + std::to_string(width) + "x" +
                                           std::to_string(height));
    require(channels == 1 || channels == 3 || channels == 4,
            "image must have 1, 3 or 4 channels, got " + std::to_string(channels));
    data_.assign(static_cast<std::size_t>(width) * height * channels, fill);
  }
  ImageBuffer(int width, int height, int channels, std::vector<std::uint8_t> data) : ImageBuffer(width, height, channels) {
    require(data.size() == data_.size(), "image data length does not match width*height*channels");
    data_ = std::move(data);
  }

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return channels_; }
  bool valid() const { return width_ >= 1 && height_ >= 1 && !data_.empty(); }
  bool same_dims(const ImageBuffer& o) const { return width_ == o.width_ && height_ == o.height_; }
  template <typename T>
  bool same_dims(const Plane<T>& p) const {
    return width_ == p.width && height_ == p.height;
  }

  std::span<std::uint8_t> bytes() { return data_; }
  std::span<const std::uint8_t> bytes() const { return data_; }

  std::uint8_t& at(int x, int y, int c) { return data_[index(x, y, c)]; }
  std::uint8_t at(int x, int y, int c) const { return data_[index(x, y, c)]; }
  double unit(int x, int y, int c) const { return to_unit(at(x, y, c)); }

  std::size_t index(int x, int y, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }

  friend bool operator==(const ImageBuffer&, const ImageBuffer&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  int channels_ = 0;
  std::vector<std::uint8_t> data_;
};

// Half-open pixel rectangle [x0,x1) x [y0,y1).
struct BoundingBox {
  int x0 = 0;
  int y0 = 0;
  int x1 = 0;
  int y1 = 0;

  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  bool valid() const { return 0 <= x0 && x0 < x1 && 0 <= y0 && y0 < y1; }
  bool contains(const BoundingBox& o) const { return x0 <= o.x0 && y0 <= o.y0 && o.x1 <= x1 && o.y1 <= y1; }
  bool contains(int x, int y) const { return x0 <= x && x < x1 && y0 <= y && y < y1; }
  bool inside(int w, int h) const { return valid() && x1 <= w && y1 <= h; }

  static BoundingBox unite(const BoundingBox& a, const BoundingBox& b) {
    return {std::min(a.x0, b.x0), std::min(a.y0, b.y0), std::max(a.x1, b.x1), std::max(a.y1, b.y1)};
  }

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

struct Resolution {
  int width = 1216;
  int height = 832;

  // Working canvases must be diffusion friendly.
  void validate() const {
    require(width >= 64 && height >= 64, "resolution must be at least 64x64");
    require(width % 8 == 0 && height % 8 == 0, "resolution dimensions must be multiples of 8");
  }

  static Resolution parse(const std::string& text) {
    auto pos = text.find_first_of("xX");
    require(pos != std::string::npos, "resolution must look like WxH, got '" + text + "'");
    Resolution r;
    try {
      std::size_t used = 0;
      r.width = std::stoi(text.substr(0, pos), &used);
      require(used == pos, "bad resolution width in '" + text + "'");
      auto rest = text.substr(pos + 1);
      r.height = std::stoi(rest, &used);
      require(used == rest.size(), "bad resolution height in '" + text + "'");
    } catch (const std::logic_error&) {
      fail(ErrorCode::bad_request, "resolution must look like WxH, got '" + text + "'");
    }
    return r;
  }

  std::string str() const { return std::to_string(width) + "x" + std::to_string(height); }

  friend bool operator==(const Resolution&, const Resolution&) = default;
};

template <typename P>
  requires requires(const P& p) { p.values; p.width; p.height; }
P crop(const P& src, const BoundingBox& box) {
  require(box.inside(src.width, src.height), "crop box outside raster");
  P out(box.width(), box.height());
  for (int y = 0; y < box.height(); ++y)
    for (int x = 0; x < box.width(); ++x) out.at(x, y) = src.at(box.x0 + x, box.y0 + y);
  return out;
}

inline ImageBuffer crop(const ImageBuffer& src, const BoundingBox& box) {
  require(box.inside(src.width(), src.height()), "crop box outside image");
  ImageBuffer out(box.width(), box.height(), src.channels());
  const auto row = static_cast<std::size_t>(box.width()) * src.channels();
  for (int y = 0; y < box.height(); ++y) {
    const auto* from = src.bytes().data() + src.index(box.x0, box.y0 + y, 0);
    std::copy(from, from + row, out.bytes().data() + out.index(0, y, 0));
  }
  return out;
}

// Writes `patch` into `dst` with its top-left corner at (x0, y0).
inline void paste(ImageBuffer& dst, const ImageBuffer& patch, int x0, int y0) {
  require(patch.channels() == dst.channels(), "paste channel mismatch");
  require(x0 >= 0 && y0 >= 0 && x0 + patch.width() <= dst.width() && y0 + patch.height() <= dst.height(),
          "paste region outside destination");
  const auto row = static_cast<std::size_t>(patch.width()) * patch.channels();
  for (int y = 0; y < patch.height(); ++y) {
    const auto* from = patch.bytes().data() + patch.index(0, y, 0);
    std::copy(from, from + row, dst.bytes().data() + dst.index(x0, y0 + y, 0));
  }
}

}  // namespace spice
