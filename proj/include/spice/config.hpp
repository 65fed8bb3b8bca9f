#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "spice/error.hpp"
#include "spice/image.hpp"

namespace spice {

using json = nlohmann::json;

struct Ablation {
  bool disable_context_dots = false;
  bool disable_blur = false;
  bool disable_hints = false;
  bool disable_canny_stage = false;

  bool any() const { return disable_context_dots || disable_blur || disable_hints || disable_canny_stage; }

  // Sets a flag by its wire name; returns false for unknown names.
  bool set(std::string_view name, bool value = true) {
    if (name == "disable_context_dots") disable_context_dots = value;
    else if (name == "disable_blur") disable_blur = value;
    else if (name == "disable_hints") disable_hints = value;
    else if (name == "disable_canny_stage") disable_canny_stage = value;
    else return false;
    return true;
  }

  friend bool operator==(const Ablation&, const Ablation&) = default;
};

// Hyperparameters of one edit step. Defaults reproduce the reference configuration:
// strength 0.9, 5 Canny + 25 base steps, seed 0, patch opacity 0.8.
struct EditConfig {
  std::string prompt;
  double denoising_strength = 0.9;
  int canny_steps = 5;
  int base_steps = 25;
  std::uint64_t seed = 0;
  Resolution target_resolution{1216, 832};
  double patch_opacity = 0.8;
  double blur_fraction = 0.02;  // soft-mask sigma as a fraction of min working dimension
  int dot_area_max = 81;        // px^2 at source resolution
  Ablation ablation;

  int total_steps() const { return canny_steps + base_steps; }

  void validate() const {
    require(std::isfinite(denoising_strength) && denoising_strength >= 0.0 && denoising_strength <= 1.0,
            "denoising_strength must be in [0,1], got " + std::to_string(denoising_strength));
    require(std::isfinite(patch_opacity) && patch_opacity >= 0.0 && patch_opacity <= 1.0,
            "patch_opacity must be in [0,1], got " + std::to_string(patch_opacity));
    require(canny_steps >= 0 && base_steps >= 0, "step counts must be non-negative");
    require(canny_steps + base_steps >= 1, "canny_steps + base_steps must be at least 1");
    require(std::isfinite(blur_fraction) && blur_fraction > 0.0, "blur_fraction must be positive");
    require(dot_area_max >= 0, "dot_area_max must be non-negative");
    target_resolution.validate();
    require(!(ablation.disable_canny_stage && canny_steps > 0),
            "inconsistent ablation: disable_canny_stage requires canny_steps = 0");
  }

  friend bool operator==(const EditConfig&, const EditConfig&) = default;
};

inline void to_json(json& j, const Ablation& a) {
  j = json{{"disable_context_dots", a.disable_context_dots},
           {"disable_blur", a.disable_blur},
           {"disable_hints", a.disable_hints},
           {"disable_canny_stage", a.disable_canny_stage}};
}

inline void from_json(const json& j, Ablation& a) {
  for (const auto& [key, value] : j.items()) {
    require(value.is_boolean(), "ablation flag '" + key + "' must be boolean");
    require(a.set(key, value.get<bool>()), "unknown ablation flag '" + key + "'");
  }
}

inline void to_json(json& j, const EditConfig& c) {
  j = json{{"prompt", c.prompt},
           {"denoising_strength", c.denoising_strength},
           {"canny_steps", c.canny_steps},
           {"base_steps", c.base_steps},
           {"seed", c.seed},
           {"target_resolution", {{"width", c.target_resolution.width}, {"height", c.target_resolution.height}}},
           {"patch_opacity", c.patch_opacity},
           {"blur_fraction", c.blur_fraction},
           {"dot_area_max", c.dot_area_max},
           {"ablation", c.ablation}};
}

// Missing fields keep their defaults.
inline void from_json(const json& j, EditConfig& c) {
  require(j.is_object(), "config must be a JSON object");
  try {
    if (j.contains("prompt")) c.prompt = j.at("prompt").get<std::string>();
    if (j.contains("denoising_strength")) c.denoising_strength = j.at("denoising_strength").get<double>();
    if (j.contains("canny_steps")) c.canny_steps = j.at("canny_steps").get<int>();
    if (j.contains("base_steps")) c.base_steps = j.at("base_steps").get<int>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("target_resolution")) {
      const auto& r = j.at("target_resolution");
      if (r.is_string()) {
        c.target_resolution = Resolution::parse(r.get<std::string>());
      } else {
        c.target_resolution.width = r.at("width").get<int>();
        c.target_resolution.height = r.at("height").get<int>();
      }
    }
    if (j.contains("patch_opacity")) c.patch_opacity = j.at("patch_opacity").get<double>();
    if (j.contains("blur_fraction")) c.blur_fraction = j.at("blur_fraction").get<double>();
    if (j.contains("dot_area_max")) c.dot_area_max = j.at("dot_area_max").get<int>();
    if (j.contains("ablation")) c.ablation = j.at("ablation").get<Ablation>();
  } catch (const json::exception& e) {
    fail(ErrorCode::bad_request, std::string("malformed config: ") + e.what());
  }
}

// Qualitative hyperparameter recommendations per editing task, with the concrete values the
// Low/Moderate/High levels map to.
struct Preset {
  std::string name;
  std::string context;
  std::string denoising_level;
  std::string canny_level;
};

inline double denoising_for_level(std::string_view level) {
  if (level == "Low") return 0.4;
  if (level == "Moderate") return 0.6;
  if (level == "High") return 0.9;
  fail(ErrorCode::bad_request, "unknown denoising level '" + std::string(level) + "'");
}

// Canny steps out of a 30-step schedule.
inline int canny_steps_for_level(std::string_view level) {
  if (level == "Low") return 3;
  if (level == "Moderate") return 8;
  if (level == "High") return 15;
  fail(ErrorCode::bad_request, "unknown canny level '" + std::string(level) + "'");
}

inline const std::vector<Preset>& builtin_presets() {
  static const std::vector<Preset> presets = {
      {"Ears", "Head", "Low", "High"},
      {"Bridge", "Violin", "Moderate", "Moderate"},
      {"Potato", "Arm", "High", "Moderate"},
      {"Fish", "Dress", "Moderate", "Low"},
  };
  return presets;
}

inline const Preset& find_preset(std::string_view name) {
  for (const auto& p : builtin_presets())
    if (p.name == name) return p;
  fail(ErrorCode::bad_request, "unknown preset '" + std::string(name) + "'");
}

// Keeps the total step count and moves the split.
inline void apply_preset(EditConfig& config, const Preset& preset) {
  const int total = config.total_steps();
  config.denoising_strength = denoising_for_level(preset.denoising_level);
  config.canny_steps = std::min(total, canny_steps_for_level(preset.canny_level));
  config.base_steps = total - config.canny_steps;
}

inline json presets_document() {
  json rows = json::array();
  for (const auto& p : builtin_presets()) {
    rows.push_back({{"object", p.name},
                    {"context", p.context},
                    {"denoising", p.denoising_level},
                    {"canny", p.canny_level},
                    {"denoising_strength", denoising_for_level(p.denoising_level)},
                    {"canny_steps", canny_steps_for_level(p.canny_level)},
                    {"total_steps", 30}});
  }
  return json{{"levels",
               {{"denoising", {{"Low", 0.4}, {"Moderate", 0.6}, {"High", 0.9}}},
                {"canny_steps_of_30", {{"Low", 3}, {"Moderate", 8}, {"High", 15}}}}},
              {"presets", rows}};
}

}  // namespace spice
