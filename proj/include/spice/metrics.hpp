#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "spice/backend.hpp"
#include "spice/error.hpp"
#include "spice/image.hpp"
#include "spice/imageops.hpp"
#include "spice/mask.hpp"
#include "spice/png.hpp"

namespace spice {

struct ObjectProperties {
  double width = 0.0;
  double height = 0.0;
  double center_x = 0.0;
  double center_y = 0.0;
  double rotation = 0.0;  // degrees in (-180, 180], +x right, +y up
  bool rotation_degenerate = false;
  double hue = 0.0;  // [0, 1)
  bool hue_degenerate = false;
  double aspect_ratio = 0.0;
};

// Target values; unset fields are not scored.
struct PropertySpec {
  std::optional<double> width, height, center_x, center_y, rotation, hue, aspect_ratio;
};

struct PropertyErrors {
  std::optional<double> pct_width, pct_height, pct_x, pct_y, pct_rotation, pct_color, pct_aspect;
};

// Wraps degrees into (-180, 180].
inline double wrap_degrees(double d) {
  double r = std::fmod(d, 360.0);
  if (r <= -180.0) r += 360.0;
  if (r > 180.0) r -= 360.0;
  return r;
}

// Wraps a hue difference into (-0.5, 0.5].
inline double wrap_hue(double d) {
  double r = std::fmod(d, 1.0);
  if (r <= -0.5) r += 1.0;
  if (r > 0.5) r -= 1.0;
  return r;
}

inline ObjectProperties measure_object(const BinaryMask& seg, const ImageBuffer& image) {
  require(image.same_dims(seg), "segmentation mask and image dimensions differ");
  require(image.channels() >= 3, "measurement needs an RGB image");
  if (seg.empty()) fail(ErrorCode::bad_request, "segmentation mask is empty");
  const BoundingBox b = tight_bbox(seg);

  double sx = 0.0, sy = 0.0, sr = 0.0, sg = 0.0, sb = 0.0;
  std::size_t n = 0;
  for (int y = b.y0; y < b.y1; ++y)
    for (int x = b.x0; x < b.x1; ++x) {
      if (!seg.test(x, y)) continue;
      sx += x + 0.5;
      sy += y + 0.5;
      sr += image.at(x, y, 0);
      sg += image.at(x, y, 1);
      sb += image.at(x, y, 2);
      ++n;
    }

  ObjectProperties p;
  p.width = b.width();
  p.height = b.height();
  p.center_x = (b.x0 + b.x1) / 2.0;
  p.center_y = (b.y0 + b.y1) / 2.0;
  p.aspect_ratio = p.width / p.height;

  const double dx = p.center_x - sx / n;
  const double dy = -(p.center_y - sy / n);  // image rows grow downwards
  if (std::hypot(dx, dy) < 1e-9) {
    p.rotation_degenerate = true;
  } else {
    p.rotation = wrap_degrees(std::atan2(dy, dx) * 180.0 / std::numbers::pi);
  }

  const auto hue = rgb_to_hsv_hue(sr / n / 255.0, sg / n / 255.0, sb / n / 255.0);
  p.hue = hue.value;
  p.hue_degenerate = hue.degenerate;
  return p;
}

inline PropertyErrors percentage_errors(const ObjectProperties& m, const PropertySpec& s) {
  const auto relative = [](const char* name, double measured, const std::optional<double>& spec) -> std::optional<double> {
    if (!spec) return std::nullopt;
    if (*spec == 0.0) fail(ErrorCode::bad_request, std::string("specified ") + name + " is zero");
    return (measured - *spec) / *spec * 100.0;
  };
  PropertyErrors e;
  e.pct_width = relative("width", m.width, s.width);
  e.pct_height = relative("height", m.height, s.height);
  e.pct_x = relative("center_x", m.center_x, s.center_x);
  e.pct_y = relative("center_y", m.center_y, s.center_y);
  e.pct_aspect = relative("aspect_ratio", m.aspect_ratio, s.aspect_ratio);
  if (s.rotation) e.pct_rotation = wrap_degrees(m.rotation - *s.rotation) / 360.0 * 100.0;
  if (s.hue) e.pct_color = wrap_hue(m.hue - *s.hue) / 1.0 * 100.0;
  return e;
}

namespace detail {

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) fail(ErrorCode::contract, "embedding dimensions differ");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

inline std::vector<double> minus(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) fail(ErrorCode::contract, "embedding dimensions differ");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  return d;
}

inline double norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace detail

// Raised when a caption or image direction vanishes.
class UndefinedDirection : public Error {
 public:
  explicit UndefinedDirection(const std::string& what) : Error(ErrorCode::bad_request, what) {}
};

inline double direction_similarity(const EmbeddingVector& src_text, const EmbeddingVector& tgt_text,
                                   const EmbeddingVector& src_image, const EmbeddingVector& edit_image) {
  const auto text_dir = detail::minus(tgt_text.values, src_text.values);
  const auto image_dir = detail::minus(edit_image.values, src_image.values);
  if (detail::norm(text_dir) < 1e-9) throw UndefinedDirection("caption direction is zero");
  if (detail::norm(image_dir) < 1e-9) throw UndefinedDirection("image direction is zero");
  return detail::cosine(text_dir, image_dir);
}

inline double clip_dir(const ImageBuffer& src, const ImageBuffer& edit, const std::string& src_caption,
                       const std::string& tgt_caption, Embedder& embedder) {
  return direction_similarity(embedder.embed_text(src_caption), embedder.embed_text(tgt_caption),
                              embedder.embed_image(src), embedder.embed_image(edit));
}

inline double clip_out(const ImageBuffer& edit, const std::string& tgt_caption, Embedder& embedder) {
  return detail::cosine(embedder.embed_image(edit).values, embedder.embed_text(tgt_caption).values);
}

struct Aggregate {
  std::size_t n = 0;
  double mean = 0.0;
  double sd = 0.0;  // sample standard deviation; 0 when n == 1
  bool single = false;
};

inline Aggregate aggregate(const std::vector<double>& xs) {
  Aggregate a;
  a.n = xs.size();
  if (xs.empty()) return a;
  double s = 0.0;
  for (double x : xs) s += x;
  a.mean = s / a.n;
  if (a.n == 1) {
    a.single = true;
    return a;
  }
  double ss = 0.0;
  for (double x : xs) ss += (x - a.mean) * (x - a.mean);
  a.sd = std::sqrt(ss / (a.n - 1));
  return a;
}

struct CaseResult {
  std::string name;
  std::optional<double> clip_dir;
  std::optional<double> clip_out;
  bool direction_undefined = false;
  std::string error;
};

struct EvaluationReport {
  std::vector<CaseResult> cases;
  Aggregate clip_dir;
  Aggregate clip_out;
  std::size_t undefined = 0;
  std::size_t errored = 0;
};

inline std::string trim_caption(std::string s) {
  while (!s.empty() && (s.back() == '\n' || s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) s.pop_back();
  return s;
}

// Scores every case subdirectory of `dir`, ordered by name. A malformed case is recorded and
// skipped; embedder transport failures abort the run.
inline EvaluationReport evaluate_cases(const std::filesystem::path& dir, Embedder& embedder) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) fail(ErrorCode::not_found, "case directory not found: " + dir.string());
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory()) names.push_back(e.path().filename().string());
  if (names.empty()) fail(ErrorCode::not_found, "no cases in " + dir.string());
  std::sort(names.begin(), names.end());

  EvaluationReport report;
  std::vector<double> dirs, outs;
  for (const auto& name : names) {
    CaseResult r;
    r.name = name;
    const auto cdir = dir / name;
    ImageBuffer src, edit;
    std::string src_cap, tgt_cap;
    try {
      src = load_png(cdir / "source.png");
      edit = load_png(cdir / "edited.png");
      src_cap = trim_caption(read_text(cdir / "source_caption.txt"));
      tgt_cap = trim_caption(read_text(cdir / "target_caption.txt"));
      require(!src_cap.empty() && !tgt_cap.empty(), "empty caption");
    } catch (const Error& e) {
      r.error = e.what();
      ++report.errored;
      report.cases.push_back(std::move(r));
      continue;
    }
    const auto et_src = embedder.embed_text(src_cap);
    const auto et_tgt = embedder.embed_text(tgt_cap);
    const auto ei_src = embedder.embed_image(src);
    const auto ei_edit = embedder.embed_image(edit);
    try {
      r.clip_dir = direction_similarity(et_src, et_tgt, ei_src, ei_edit);
      dirs.push_back(*r.clip_dir);
    } catch (const UndefinedDirection& e) {
      r.direction_undefined = true;
      r.error = e.what();
      ++report.undefined;
    }
    r.clip_out = detail::cosine(ei_edit.values, et_tgt.values);
    outs.push_back(*r.clip_out);
    report.cases.push_back(std::move(r));
  }
  report.clip_dir = aggregate(dirs);
  report.clip_out = aggregate(outs);
  return report;
}

// ---------------------------------------------------------------------------------------------
// JSON / CSV

inline nlohmann::json to_json_value(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

inline void to_json(nlohmann::json& j, const ObjectProperties& p) {
  j = {{"width", p.width},
       {"height", p.height},
       {"center_x", p.center_x},
       {"center_y", p.center_y},
       {"rotation", p.rotation},
       {"rotation_degenerate", p.rotation_degenerate},
       {"hue", p.hue},
       {"hue_degenerate", p.hue_degenerate},
       {"aspect_ratio", p.aspect_ratio}};
}

inline void from_json(const nlohmann::json& j, PropertySpec& s) {
  const auto get = [&](const char* key) -> std::optional<double> {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<double>();
  };
  s.width = get("width");
  s.height = get("height");
  s.center_x = get("center_x");
  s.center_y = get("center_y");
  s.rotation = get("rotation");
  s.hue = get("hue");
  s.aspect_ratio = get("aspect_ratio");
}

inline void to_json(nlohmann::json& j, const PropertyErrors& e) {
  j = {{"pct_width", to_json_value(e.pct_width)}, {"pct_height", to_json_value(e.pct_height)},
       {"pct_x", to_json_value(e.pct_x)},         {"pct_y", to_json_value(e.pct_y)},
       {"pct_rotation", to_json_value(e.pct_rotation)}, {"pct_color", to_json_value(e.pct_color)},
       {"pct_aspect", to_json_value(e.pct_aspect)}};
}

inline void to_json(nlohmann::json& j, const Aggregate& a) {
  j = {{"n", a.n}, {"mean", a.mean}, {"sd", a.sd}, {"single_sample", a.single}};
}

inline nlohmann::json report_json(const EvaluationReport& r) {
  nlohmann::json cases = nlohmann::json::array();
  for (const auto& c : r.cases) {
    nlohmann::json j{{"name", c.name},
                     {"clip_dir", to_json_value(c.clip_dir)},
                     {"clip_out", to_json_value(c.clip_out)},
                     {"direction_undefined", c.direction_undefined}};
    if (!c.error.empty()) j["error"] = c.error;
    cases.push_back(std::move(j));
  }
  return {{"cases", cases},
          {"clip_dir", r.clip_dir},
          {"clip_out", r.clip_out},
          {"undefined", r.undefined},
          {"errored", r.errored}};
}

inline std::string report_csv(const EvaluationReport& r) {
  const auto num = [](const std::optional<double>& v) {
    if (!v) return std::string();
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", *v);
    return std::string(buf);
  };
  std::string out = "name,clip_dir,clip_out,status\n";
  for (const auto& c : r.cases) {
    const char* status = c.direction_undefined ? "undefined" : c.error.empty() ? "ok" : "error";
    out += c.name + "," + num(c.clip_dir) + "," + num(c.clip_out) + "," + status + "\n";
  }
  return out;
}

}  // namespace spice
