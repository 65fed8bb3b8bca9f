#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "spice/backend.hpp"
#include "spice/config.hpp"
#include "spice/error.hpp"
#include "spice/hints.hpp"
#include "spice/image.hpp"
#include "spice/imageops.hpp"
#include "spice/mask.hpp"
#include "spice/session.hpp"

namespace spice {

struct StepSchedule {
  int canny_steps = 0;
  int base_steps = 0;
  int total = 0;
};

inline StepSchedule validate_schedule(int canny_steps, int base_steps) {
  require(canny_steps >= 0 && base_steps >= 0, "step counts must be non-negative");
  require(canny_steps + base_steps >= 1, "schedule needs at least one denoising step");
  return {canny_steps, base_steps, canny_steps + base_steps};
}

struct StepOptions {
  double context_scale = 1.0;
  const Cancellation* cancel = nullptr;
};

// Everything one edit step produced, including the intermediates for inspection.
struct EditOutcome {
  ImageBuffer result;  // I_{T+1}
  ImageBuffer hinted;  // I_hinted at source resolution
  ContextAnalysis analysis;
  SoftMasks soft;
  ImageBuffer working_crop;
  std::optional<EdgeMap> edges;
  ImageBuffer working_result;
  StepSchedule schedule;
  Provenance provenance;
};

// One SPICE edit: context analysis, bbox extension, hinting, crop/resize, Canny, two-stage
// denoising, downsampling and soft compositing into the active image. Pixels whose source-space
// soft mask is exactly 0 are left byte-identical.
inline EditOutcome run_edit(const ImageBuffer& active, const ContextMask& mask, const std::vector<HintLayer>& hints,
                            const EditConfig& config, Denoiser& backend, const StepOptions& options = {}) {
  const auto started = std::chrono::steady_clock::now();
  config.validate();
  require(active.valid(), "active image is empty");
  require(active.same_dims(mask), "mask dimensions differ from the image");
  for (const auto& h : hints) require(h.raster.same_dims(active), "hint layer dimensions differ from the image");

  EditOutcome out;
  out.schedule = validate_schedule(config.canny_steps, config.base_steps);
  const Resolution working = config.target_resolution;

  out.analysis = classify_context_dots(mask, config.dot_area_max);
  if (config.ablation.disable_context_dots) exclude_dots(out.analysis);
  extend_analysis(out.analysis, working);
  if (options.context_scale != 1.0) {
    auto scaled = scale_context(out.analysis.extended_bbox, out.analysis.context_bbox, options.context_scale, working,
                                active.width(), active.height());
    out.analysis.extended_bbox = scaled.box;
    out.analysis.clamped = scaled.clamped;
  }
  const BoundingBox box = out.analysis.extended_bbox;

  out.hinted = config.ablation.disable_hints ? active : composite_hints(active, hints);

  const ImageBuffer source_crop = crop(out.hinted, box);
  out.working_crop = resize(source_crop, working.width, working.height,
                            pick_filter(box.width(), box.height(), working.width, working.height));
  out.soft = make_soft_mask(out.analysis, working, config.blur_fraction, config.ablation.disable_blur);

  // Backends receive the model-space mask at 8-bit precision, like every other raster they get.
  SoftMask request_mask = out.soft.working;
  for (auto& v : request_mask.values) v = to_unit(quantize(v));

  const bool canny_stage = out.schedule.canny_steps > 0 && !config.ablation.disable_canny_stage;
  if (canny_stage) out.edges = canny_edges(out.working_crop);

  std::optional<ContinuationState> continuation;
  std::optional<DenoiseResponse> last;
  const auto run_stage = [&](Stage stage, int steps) {
    check_cancel(options.cancel);
    DenoiseRequest req;
    req.crop = out.working_crop;
    req.prompt = config.prompt;
    req.soft_mask = request_mask;
    if (stage == Stage::canny) req.edge_map = out.edges;
    req.denoising_strength = config.denoising_strength;
    req.stage_steps = steps;
    req.total_steps = out.schedule.total;
    req.stage = stage;
    req.seed = config.seed;
    req.continuation = continuation;
    auto res = backend.denoise(req, options.cancel);
    validate_response(req, res);
    out.provenance.continuation_digests.push_back(to_hex(res.continuation.digest));
    out.provenance.backend_id = res.backend_id;
    continuation = res.continuation;
    last = std::move(res);
  };
  if (canny_stage) run_stage(Stage::canny, out.schedule.canny_steps);
  if (out.schedule.base_steps > 0) run_stage(Stage::base, out.schedule.base_steps);
  check_cancel(options.cancel);

  out.working_result = last->result;
  const ImageBuffer back = resize(out.working_result, box.width(), box.height(), ResampleFilter::area_average);
  const ImageBuffer composited = blend(crop(active, box), back, out.soft.source);
  out.result = active;
  paste(out.result, composited, box.x0, box.y0);

  out.provenance.duration_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
  return out;
}

// run_edit packaged as a session step whose original is `active`.
inline EditStep run_edit_step(const ImageRef& active, const ContextMask& mask, const std::vector<HintLayer>& hints,
                              const EditConfig& config, Denoiser& backend, const StepOptions& options = {}) {
  require(active != nullptr, "no active image");
  auto outcome = run_edit(*active, mask, hints, config, backend, options);
  EditStep step;
  step.original = active;
  step.mask = std::make_shared<const ContextMask>(mask);
  step.hinted = std::make_shared<const ImageBuffer>(std::move(outcome.hinted));
  step.config = config;
  step.result = std::make_shared<const ImageBuffer>(std::move(outcome.result));
  step.provenance = std::move(outcome.provenance);
  return step;
}

// ---------------------------------------------------------------------------------------------
// Hyperparameter sweeps

enum class SweepAxis { denoising_strength, canny_steps, context_scale };

inline std::string to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::denoising_strength: return "denoising_strength";
    case SweepAxis::canny_steps: return "canny_steps";
    case SweepAxis::context_scale: return "context_scale";
  }
  return "?";
}

inline SweepAxis parse_sweep_axis(const std::string& s) {
  if (s == "denoising_strength" || s == "strength") return SweepAxis::denoising_strength;
  if (s == "canny_steps" || s == "canny-steps") return SweepAxis::canny_steps;
  if (s == "context_scale" || s == "context-scale") return SweepAxis::context_scale;
  fail(ErrorCode::bad_request, "unknown sweep axis '" + s + "'");
}

struct SweepCell {
  double value = 0.0;
  std::optional<EditOutcome> outcome;
  std::string error;  // set when the cell failed
  ErrorCode error_code = ErrorCode::internal;

  bool ok() const { return outcome.has_value(); }
};

struct SweepResult {
  SweepAxis axis = SweepAxis::denoising_strength;
  std::vector<SweepCell> cells;
  ImageBuffer contact_sheet;
  BoundingBox sheet_region;

  std::size_t succeeded() const {
    return static_cast<std::size_t>(std::count_if(cells.begin(), cells.end(), [](const auto& c) { return c.ok(); }));
  }
};

constexpr int kContactCellHeight = 192;
constexpr int kContactGap = 4;

// Horizontal strip: each successful cell shows `region` of its result; failures are placeholders.
inline ImageBuffer make_contact_sheet(const std::vector<SweepCell>& cells, const BoundingBox& region) {
  const int ch = kContactCellHeight;
  const int cw = std::max(1, static_cast<int>(std::lround(static_cast<double>(region.width()) * ch / region.height())));
  const int n = static_cast<int>(cells.size());
  ImageBuffer sheet(n * cw + (n + 1) * kContactGap, ch + 2 * kContactGap, 3, 32);
  for (int i = 0; i < n; ++i) {
    ImageBuffer tile(cw, ch, 3);
    if (cells[i].ok()) {
      const auto src = to_rgb(crop(cells[i].outcome->result, region));
      tile = resize(src, cw, ch, pick_filter(src.width(), src.height(), cw, ch));
    } else {
      for (int y = 0; y < ch; ++y)
        for (int x = 0; x < cw; ++x) tile.at(x, y, 0) = 96;
    }
    paste(sheet, tile, kContactGap + i * (cw + kContactGap), kContactGap);
  }
  return sheet;
}

// One edit per value along `axis`, all from the same seed. Failed cells do not abort the sweep.
inline SweepResult run_sweep(const ImageBuffer& active, const ContextMask& mask, const std::vector<HintLayer>& hints,
                             const EditConfig& config, Denoiser& backend, SweepAxis axis,
                             const std::vector<double>& values, int jobs = 1, const Cancellation* cancel = nullptr) {
  require(values.size() >= 2, "a sweep needs at least two values");
  SweepResult result;
  result.axis = axis;
  result.cells.resize(values.size());

  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t i = next++; i < values.size(); i = next++) {
      auto& cell = result.cells[i];
      cell.value = values[i];
      try {
        EditConfig cfg = config;
        StepOptions opt;
        opt.cancel = cancel;
        switch (axis) {
          case SweepAxis::denoising_strength: cfg.denoising_strength = values[i]; break;
          case SweepAxis::canny_steps: {
            const int total = config.total_steps();
            require(values[i] == std::floor(values[i]), "canny_steps values must be integers");
            cfg.canny_steps = static_cast<int>(values[i]);
            cfg.base_steps = total - cfg.canny_steps;
            require(cfg.canny_steps >= 0 && cfg.base_steps >= 0,
                    "canny_steps " + std::to_string(cfg.canny_steps) + " outside 0.." + std::to_string(total));
            break;
          }
          case SweepAxis::context_scale: opt.context_scale = values[i]; break;
        }
        cell.outcome = run_edit(active, mask, hints, cfg, backend, opt);
      } catch (const Error& e) {
        cell.error = e.what();
        cell.error_code = e.code();
      } catch (const std::exception& e) {
        cell.error = e.what();
      }
    }
  };
  const int threads = std::clamp(jobs, 1, static_cast<int>(values.size()));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  }

  bool any = false;
  for (const auto& c : result.cells) {
    if (!c.ok()) continue;
    result.sheet_region =
        any ? BoundingBox::unite(result.sheet_region, c.outcome->analysis.extended_bbox) : c.outcome->analysis.extended_bbox;
    any = true;
  }
  if (!any) result.sheet_region = {0, 0, active.width(), active.height()};
  result.contact_sheet = make_contact_sheet(result.cells, result.sheet_region);
  return result;
}

inline nlohmann::json sweep_sidecar(const SweepResult& r, const std::vector<std::string>& cell_files = {}) {
  nlohmann::json cells = nlohmann::json::array();
  for (std::size_t i = 0; i < r.cells.size(); ++i) {
    const auto& c = r.cells[i];
    nlohmann::json j{{"index", i}, {"value", c.value}, {"status", c.ok() ? "ok" : "error"}};
    if (c.ok()) {
      const auto& b = c.outcome->analysis.extended_bbox;
      j["extended_bbox"] = {b.x0, b.y0, b.x1, b.y1};
      j["continuation_digests"] = c.outcome->provenance.continuation_digests;
      if (i < cell_files.size()) j["file"] = cell_files[i];
    } else {
      j["error"] = c.error;
      j["error_code"] = std::string(to_string(c.error_code));
    }
    cells.push_back(std::move(j));
  }
  const auto& s = r.sheet_region;
  return {{"axis", to_string(r.axis)},
          {"values", [&] {
             std::vector<double> v;
             for (const auto& c : r.cells) v.push_back(c.value);
             return v;
           }()},
          {"succeeded", r.succeeded()},
          {"sheet_region", {s.x0, s.y0, s.x1, s.y1}},
          {"cells", cells}};
}

}  // namespace spice
