#pragma once

#include <png.h>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "spice/error.hpp"
#include "spice/image.hpp"

namespace spice {

// PNG codec for 8-bit gray, RGB and RGBA. Palette images decode to RGB(A), gray+alpha to RGBA.
inline ImageBuffer decode_png(std::span<const std::uint8_t> bytes) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    std::string msg = image.message;
    png_image_free(&image);
    fail(ErrorCode::bad_request, "malformed PNG: " + msg);
  }
  if (image.format & PNG_FORMAT_FLAG_LINEAR) {
    png_image_free(&image);
    fail(ErrorCode::bad_request, "unsupported PNG bit depth: only 8-bit images are accepted");
  }
  const bool has_alpha = image.format & PNG_FORMAT_FLAG_ALPHA;
  const bool has_color = image.format & PNG_FORMAT_FLAG_COLOR;
  int channels;
  if (!has_color && !has_alpha) {
    image.format = PNG_FORMAT_GRAY;
    channels = 1;
  } else if (has_alpha) {
    image.format = PNG_FORMAT_RGBA;
    channels = 4;
  } else {
    image.format = PNG_FORMAT_RGB;
    channels = 3;
  }
  if (image.width < 1 || image.height < 1 || image.width > (1u << 15) || image.height > (1u << 15)) {
    png_image_free(&image);
    fail(ErrorCode::bad_request, "PNG dimensions out of range");
  }
  ImageBuffer out(static_cast<int>(image.width), static_cast<int>(image.height), channels);
  if (!png_image_finish_read(&image, nullptr, out.bytes().data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    fail(ErrorCode::bad_request, "malformed PNG: " + msg);
  }
  return out;
}

inline std::vector<std::uint8_t> encode_png(const ImageBuffer& img) {
  require(img.valid(), "cannot encode an empty image");
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width());
  image.height = static_cast<png_uint_32>(img.height());
  image.format = img.channels() == 1 ? PNG_FORMAT_GRAY : img.channels() == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_RGBA;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, img.bytes().data(), 0, nullptr))
    fail(ErrorCode::internal, std::string("PNG encode failed: ") + image.message);
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, img.bytes().data(), 0, nullptr))
    fail(ErrorCode::internal, std::string("PNG encode failed: ") + image.message);
  out.resize(size);
  return out;
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::string read_text(const std::filesystem::path& path) {
  auto bytes = read_file(path);
  return {bytes.begin(), bytes.end()};
}

// Writes to a sibling temp file and renames it into place.
inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::io, "cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorCode::io, "short write to " + path.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorCode::io, "cannot move " + tmp.string() + " into place: " + ec.message());
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

inline ImageBuffer load_png(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) fail(ErrorCode::not_found, "missing file " + path.string());
  auto bytes = read_file(path);
  try {
    return decode_png(bytes);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

inline void save_png(const std::filesystem::path& path, const ImageBuffer& img) { write_file(path, encode_png(img)); }

}  // namespace spice
