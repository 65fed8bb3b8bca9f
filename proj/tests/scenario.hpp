#pragma once

// Random edit-step inputs and the pixel-level checks shared by orchestrator tests.

#include <random>
#include <vector>

#include "spice/config.hpp"
#include "spice/hints.hpp"
#include "spice/orchestrator.hpp"
#include "testkit.hpp"

namespace testkit {

struct StepInputs {
  spice::ImageBuffer image;
  spice::ContextMask mask;
  std::vector<spice::HintLayer> hints;
  spice::EditConfig config;
};

inline spice::HintLayer random_hint(std::mt19937_64& rng, int w, int h, double opacity) {
  spice::HintLayer l;
  l.raster = spice::ImageBuffer(w, h, 4);
  const int x0 = static_cast<int>(rng() % w), y0 = static_cast<int>(rng() % h);
  const int x1 = std::min(w, x0 + 1 + static_cast<int>(rng() % (w / 2 + 1)));
  const int y1 = std::min(h, y0 + 1 + static_cast<int>(rng() % (h / 2 + 1)));
  const std::uint8_t r = rng() % 256, g = rng() % 256, b = rng() % 256;
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) {
      l.raster.at(x, y, 0) = r;
      l.raster.at(x, y, 1) = g;
      l.raster.at(x, y, 2) = b;
      l.raster.at(x, y, 3) = 255;
    }
  l.opacity = opacity;
  return l;
}

// Small images and working resolutions keep thousands of steps cheap.
inline StepInputs random_step(std::mt19937_64& rng) {
  StepInputs in;
  const int w = 48 + static_cast<int>(rng() % 120), h = 48 + static_cast<int>(rng() % 120);
  in.image = random_image(rng, w, h);
  in.mask = random_context_mask(rng, w, h);
  const int layers = static_cast<int>(rng() % 3);
  for (int i = 0; i < layers; ++i) in.hints.push_back(random_hint(rng, w, h, (rng() % 101) / 100.0));
  auto& c = in.config;
  c.prompt = "random";
  c.denoising_strength = (rng() % 101) / 100.0;
  c.canny_steps = static_cast<int>(rng() % 8);
  c.base_steps = 1 + static_cast<int>(rng() % 30);
  c.seed = rng();
  c.target_resolution = {8 * (8 + static_cast<int>(rng() % 9)), 8 * (8 + static_cast<int>(rng() % 9))};
  c.blur_fraction = 0.01 + (rng() % 5) / 100.0;
  c.ablation.disable_context_dots = rng() % 4 == 0;
  c.ablation.disable_blur = rng() % 4 == 0;
  c.ablation.disable_hints = rng() % 4 == 0;
  if (rng() % 4 == 0) {
    c.ablation.disable_canny_stage = true;
    c.base_steps += c.canny_steps;
    c.canny_steps = 0;
  }
  return in;
}

// Whether the source-space soft mask of an outcome is exactly zero at image pixel (x, y).
inline bool soft_zero(const spice::EditOutcome& o, int x, int y) {
  const auto& b = o.analysis.extended_bbox;
  if (!b.contains(x, y)) return true;
  return o.soft.source.at(x - b.x0, y - b.y0) == 0.0;
}

// Number of bytes that differ between `before` and `after` where the soft mask is zero.
inline long outside_mask_changes(const spice::ImageBuffer& before, const spice::ImageBuffer& after,
                                 const spice::EditOutcome& o) {
  long changed = 0;
  for (int y = 0; y < before.height(); ++y)
    for (int x = 0; x < before.width(); ++x) {
      if (!soft_zero(o, x, y)) continue;
      for (int c = 0; c < before.channels(); ++c) changed += before.at(x, y, c) != after.at(x, y, c);
    }
  return changed;
}

// A w x h canvas whose mask touches all four corners, so the extended bbox is the whole image.
// The corner blocks are large enough not to count as dots.
inline spice::ContextMask corner_anchored_mask(int w, int h, int cx, int cy, double radius) {
  spice::ContextMask m(w, h);
  fill_rect(m, 0, 0, 10, 10);
  fill_rect(m, w - 10, 0, w, 10);
  fill_rect(m, 0, h - 10, 10, h);
  fill_rect(m, w - 10, h - 10, w, h);
  fill_disk(m, cx, cy, radius);
  return m;
}

// Runs the two-stage scalar recurrence for every pixel of an identity-geometry step (image size
// equal to the working resolution, extended bbox = full image) and returns the worst deviation.
inline int two_stage_max_deviation(const spice::ImageBuffer& image, const spice::EditConfig& cfg,
                                   const spice::EditOutcome& o, long* checked = nullptr) {
  const double w1 = cfg.denoising_strength * cfg.canny_steps / cfg.total_steps();
  const double w2 = cfg.denoising_strength * cfg.base_steps / cfg.total_steps();
  int worst = 0;
  long n = 0;
  for (int y = 0; y < image.height(); ++y)
    for (int x = 0; x < image.width(); ++x) {
      const double soft = o.soft.source.at(x, y);
      if (soft == 0.0) continue;
      const double m = oracle::to_byte(o.soft.working.at(x, y)) / 255.0;
      const bool edge = o.edges && o.edges->test(x, y);
      for (int c = 0; c < image.channels(); ++c) {
        const int s0 = o.hinted.at(x, y, c);
        const int edited = oracle::mock_two_stage(s0, m, edge, w1, w2, oracle::noise(cfg.seed, 0, x, y, c),
                                                  oracle::noise(cfg.seed, 1, x, y, c));
        const int expected = oracle::composite(image.at(x, y, c), edited, soft);
        worst = std::max(worst, std::abs(expected - o.result.at(x, y, c)));
        ++n;
      }
    }
  if (checked) *checked = n;
  return worst;
}

}  // namespace testkit
