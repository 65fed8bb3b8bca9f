#pragma once

#include <filesystem>
#include <memory>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "spice/config.hpp"
#include "spice/error.hpp"
#include "spice/hash.hpp"
#include "spice/image.hpp"
#include "spice/imageops.hpp"
#include "spice/png.hpp"

namespace spice {

using ImageRef = std::shared_ptr<const ImageBuffer>;

struct Provenance {
  std::string backend_id;
  double duration_ms = 0.0;
  std::vector<std::string> continuation_digests;  // hex, one per executed stage

  friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct EditStep {
  int index = 0;
  ImageRef original;  // I_T
  std::shared_ptr<const ContextMask> mask;
  ImageRef hinted;
  EditConfig config;
  ImageRef result;  // I_{T+1}
  Provenance provenance;
};

inline bool same_image(const ImageRef& a, const ImageRef& b) { return a == b || (a && b && *a == *b); }

class EditSession {
 public:
  EditSession() = default;

  static EditSession create(ImageBuffer base, std::string id = {}) {
    require(base.valid(), "session base image must be at least 1x1");
    EditSession s;
    s.id_ = id.empty() ? random_id() : std::move(id);
    s.base_ = std::make_shared<const ImageBuffer>(std::move(base));
    return s;
  }

  const std::string& id() const { return id_; }
  const ImageRef& base_image() const { return base_; }
  const std::vector<EditStep>& steps() const { return steps_; }
  int cursor() const { return cursor_; }
  int step_count() const { return static_cast<int>(steps_.size()); }

  const ImageRef& active_image() const { return cursor_ < 0 ? base_ : steps_[cursor_].result; }

  // Truncate-and-append: steps after the cursor are discarded, the new step becomes active.
  void commit(EditStep step) {
    require(step.original && step.result, "step is missing its original or result image");
    if (!same_image(step.original, active_image()))
      fail(ErrorCode::conflict, "step input does not match the session's active image");
    require(step.result->same_dims(*step.original), "step result dimensions differ from its input");
    steps_.resize(static_cast<std::size_t>(cursor_ + 1));
    step.index = cursor_ + 1;
    step.original = active_image();
    steps_.push_back(std::move(step));
    ++cursor_;
  }

  void revert(int to_step) {
    if (to_step < -1 || to_step >= step_count())
      fail(ErrorCode::not_found, "cannot revert to step " + std::to_string(to_step) + " of " +
                                     std::to_string(step_count()));
    cursor_ = to_step;
  }

  // Used by project loading; restores a session verbatim.
  static EditSession restore(std::string id, ImageRef base, std::vector<EditStep> steps, int cursor) {
    EditSession s;
    s.id_ = std::move(id);
    s.base_ = std::move(base);
    s.steps_ = std::move(steps);
    require(cursor >= -1 && cursor < static_cast<int>(s.steps_.size()), "cursor out of range");
    s.cursor_ = cursor;
    return s;
  }

  static std::string random_id() {
    std::random_device rd;
    std::uint64_t v = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
    const std::uint8_t bytes[8] = {static_cast<std::uint8_t>(v >> 56), static_cast<std::uint8_t>(v >> 48),
                                   static_cast<std::uint8_t>(v >> 40), static_cast<std::uint8_t>(v >> 32),
                                   static_cast<std::uint8_t>(v >> 24), static_cast<std::uint8_t>(v >> 16),
                                   static_cast<std::uint8_t>(v >> 8),  static_cast<std::uint8_t>(v)};
    return to_hex(bytes);
  }

 private:
  std::string id_;
  ImageRef base_;
  std::vector<EditStep> steps_;
  int cursor_ = -1;
};

inline EditSession new_session(ImageBuffer base_image) { return EditSession::create(std::move(base_image)); }

inline EditSession commit_step(EditSession session, EditStep step) {
  session.commit(std::move(step));
  return session;
}

inline EditSession revert(EditSession session, int to_step) {
  session.revert(to_step);
  return session;
}

// ---------------------------------------------------------------------------------------------
// Project directory: manifest.json + base.png + steps/<index>-<hash>/{mask,hint,result}.png

constexpr int kSchemaVersion = 1;

namespace detail {

inline std::string step_dir_name(const EditStep& s) {
  Sha256 h;
  h.update(image_digest(*s.result)).update(image_digest(*s.hinted)).update(std::span<const std::uint8_t>(s.mask->values));
  auto d = h.finish();
  char idx[16];
  std::snprintf(idx, sizeof idx, "%04d", s.index);
  return std::string(idx) + "-" + to_hex(std::span<const std::uint8_t>(d.data(), 6));
}

}  // namespace detail

inline void to_json(nlohmann::json& j, const Provenance& p) {
  j = nlohmann::json{{"backend_id", p.backend_id}, {"duration_ms", p.duration_ms},
                     {"continuation_digests", p.continuation_digests}};
}

inline void from_json(const nlohmann::json& j, Provenance& p) {
  p.backend_id = j.at("backend_id").get<std::string>();
  p.duration_ms = j.at("duration_ms").get<double>();
  p.continuation_digests = j.at("continuation_digests").get<std::vector<std::string>>();
}

inline void save_project(const EditSession& session, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir / "steps", ec);
  if (ec) fail(ErrorCode::io, "cannot create project directory " + dir.string() + ": " + ec.message());

  if (!fs::exists(dir / "base.png")) save_png(dir / "base.png", *session.base_image());

  nlohmann::json steps = nlohmann::json::array();
  std::set<std::string> live;
  for (const auto& s : session.steps()) {
    const auto name = detail::step_dir_name(s);
    live.insert(name);
    const auto sdir = dir / "steps" / name;
    if (!fs::exists(sdir / "result.png")) {
      fs::create_directories(sdir, ec);
      if (ec) fail(ErrorCode::io, "cannot create " + sdir.string() + ": " + ec.message());
      save_png(sdir / "mask.png", mask_to_gray(*s.mask));
      save_png(sdir / "hint.png", *s.hinted);
      save_png(sdir / "result.png", *s.result);
    }
    const std::string rel = "steps/" + name + "/";
    steps.push_back({{"index", s.index},
                     {"config", s.config},
                     {"files", {{"mask", rel + "mask.png"}, {"hint", rel + "hint.png"}, {"result", rel + "result.png"}}},
                     {"provenance", s.provenance}});
  }
  nlohmann::json manifest{{"schema_version", kSchemaVersion},
                          {"id", session.id()},
                          {"cursor", session.cursor()},
                          {"base_image", "base.png"},
                          {"steps", steps}};
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");

  // Discarded branches are only removed once the new manifest is in place.
  for (const auto& entry : fs::directory_iterator(dir / "steps", ec))
    if (entry.is_directory() && !live.count(entry.path().filename().string())) fs::remove_all(entry.path(), ec);
}

inline EditSession load_project(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  const auto manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path)) fail(ErrorCode::not_found, "project manifest missing: " + manifest_path.string());
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(read_text(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::bad_request, "malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  try {
    const int version = m.at("schema_version").get<int>();
    if (version != kSchemaVersion)
      fail(ErrorCode::bad_request, "unsupported project schema_version " + std::to_string(version) + " (expected " +
                                       std::to_string(kSchemaVersion) + ")");
    auto base = std::make_shared<const ImageBuffer>(load_png(dir / m.at("base_image").get<std::string>()));
    std::vector<EditStep> steps;
    ImageRef previous = base;
    for (const auto& js : m.at("steps")) {
      EditStep s;
      s.index = js.at("index").get<int>();
      require(s.index == static_cast<int>(steps.size()), "manifest step indices are not consecutive");
      s.config = js.at("config").get<EditConfig>();
      s.provenance = js.at("provenance").get<Provenance>();
      const auto& files = js.at("files");
      s.mask = std::make_shared<const ContextMask>(threshold_mask(load_png(dir / files.at("mask").get<std::string>())));
      s.hinted = std::make_shared<const ImageBuffer>(load_png(dir / files.at("hint").get<std::string>()));
      s.result = std::make_shared<const ImageBuffer>(load_png(dir / files.at("result").get<std::string>()));
      s.original = previous;
      previous = s.result;
      steps.push_back(std::move(s));
    }
    return EditSession::restore(m.at("id").get<std::string>(), base, std::move(steps), m.value("cursor", -1));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::bad_request, "malformed manifest " + manifest_path.string() + ": " + e.what());
  }
}

}  // namespace spice
