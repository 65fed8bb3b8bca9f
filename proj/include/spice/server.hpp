#pragma once

#include <atomic>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "spice/backend.hpp"
#include "spice/config.hpp"
#include "spice/error.hpp"
#include "spice/hints.hpp"
#include "spice/http_backend.hpp"
#include "spice/mask.hpp"
#include "spice/metrics.hpp"
#include "spice/orchestrator.hpp"
#include "spice/png.hpp"
#include "spice/session.hpp"

namespace spice {

struct ServerOptions {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::filesystem::path project_root = "spice-projects";
  std::shared_ptr<Denoiser> backend;
  std::shared_ptr<Embedder> embedder;  // optional; enables POST /v1/metrics/clip
  int jobs = 2;                        // sweep parallelism
  int thumbnail_size = 256;
};

// HTTP API over edit sessions. Sessions are loaded from and persisted to `project_root/<id>`.
class SpiceServer {
 public:
  explicit SpiceServer(ServerOptions options) : opt_(std::move(options)) {
    require(opt_.backend != nullptr, "server needs a denoising backend");
    load_sessions();
    routes();
    http_.set_socket_options(exclusive_address);
  }

  // SO_REUSEADDR without SO_REUSEPORT, so a second server on the same port fails to bind.
  static void exclusive_address(socket_t sock) {
    int yes = 1;
    ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const char*>(&yes), sizeof yes);
  }

  ~SpiceServer() { stop(); }

  SpiceServer(const SpiceServer&) = delete;
  SpiceServer& operator=(const SpiceServer&) = delete;

  // Binds the listen socket; returns false when the address is unavailable. Port 0 picks a free port.
  bool bind() {
    if (opt_.port == 0) {
      port_ = http_.bind_to_any_port(opt_.host);
      return port_ > 0;
    }
    port_ = opt_.port;
    return http_.bind_to_port(opt_.host, opt_.port);
  }

  int port() const { return port_; }

  // Blocks until stop().
  void listen() { http_.listen_after_bind(); }

  void start_background() {
    listener_ = std::thread([this] { listen(); });
    http_.wait_until_ready();
  }

  // Cancels in-flight steps, waits for async jobs and stops the listener.
  void stop() {
    {
      std::lock_guard lock(mu_);
      for (auto& [id, slot] : slots_) slot->cancel.cancel();
    }
    http_.stop();
    if (listener_.joinable()) listener_.join();
    std::vector<std::thread> workers;
    {
      std::lock_guard lock(mu_);
      workers.swap(workers_);
    }
    for (auto& t : workers)
      if (t.joinable()) t.join();
  }

  std::size_t session_count() const {
    std::lock_guard lock(mu_);
    return slots_.size();
  }

 private:
  struct Slot {
    std::mutex mu;  // guards `session`
    EditSession session;
    std::atomic<bool> busy{false};
    Cancellation cancel;
    std::vector<SweepResult> sweeps;
  };

  struct Job {
    std::string status = "running";  // running | done | error
    nlohmann::json body;
  };

  // Holds a session's busy flag for the duration of one mutating operation.
  class BusyGuard {
   public:
    explicit BusyGuard(Slot& s) : slot_(&s) {
      bool expected = false;
      if (!s.busy.compare_exchange_strong(expected, true))
        fail(ErrorCode::conflict, "session " + s.session.id() + " already has a step in flight");
      s.cancel.reset();
    }
    BusyGuard(BusyGuard&& o) noexcept : slot_(std::exchange(o.slot_, nullptr)) {}
    ~BusyGuard() {
      if (slot_) slot_->busy.store(false);
    }

   private:
    Slot* slot_;
  };

  struct StepInput {
    ContextMask mask;
    std::vector<HintLayer> hints;
    EditConfig config;
    nlohmann::json raw;
  };

  std::shared_ptr<Slot> slot(const std::string& id) const {
    std::lock_guard lock(mu_);
    auto it = slots_.find(id);
    if (it == slots_.end()) fail(ErrorCode::not_found, "no session '" + id + "'");
    return it->second;
  }

  void load_sessions() {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(opt_.project_root, ec);
    if (ec) fail(ErrorCode::io, "cannot create project root " + opt_.project_root.string() + ": " + ec.message());
    for (const auto& e : fs::directory_iterator(opt_.project_root)) {
      if (!fs::exists(e.path() / "manifest.json")) continue;
      auto s = std::make_shared<Slot>();
      s->session = load_project(e.path());
      slots_[s->session.id()] = s;
    }
  }

  static std::string session_url(const std::string& id) { return "/v1/sessions/" + id; }

  nlohmann::json step_summary(const EditSession& s, const EditStep& st) const {
    const auto base = session_url(s.id()) + "/steps/" + std::to_string(st.index);
    return {{"index", st.index},
            {"config", st.config},
            {"provenance", st.provenance},
            {"result_url", base + "/result.png"},
            {"thumbnail_url", base + "/thumbnail.png"}};
  }

  nlohmann::json session_summary(const EditSession& s) const {
    nlohmann::json steps = nlohmann::json::array();
    for (const auto& st : s.steps()) steps.push_back(step_summary(s, st));
    return {{"session_id", s.id()},
            {"width", s.base_image()->width()},
            {"height", s.base_image()->height()},
            {"cursor", s.cursor()},
            {"step_count", s.step_count()},
            {"base_url", session_url(s.id()) + "/base.png"},
            {"active_url", session_url(s.id()) + "/active.png"},
            {"steps", steps}};
  }

  static void send_json(httplib::Response& res, const nlohmann::json& body, int status = 200) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void send_png(httplib::Response& res, const ImageBuffer& img) {
    const auto bytes = encode_png(img);
    res.set_content(std::string(bytes.begin(), bytes.end()), "image/png");
  }

  static ImageBuffer decode_upload(const std::string& data, const std::string& what) {
    try {
      return decode_png(std::span(reinterpret_cast<const std::uint8_t*>(data.data()), data.size()));
    } catch (const Error& e) {
      fail(ErrorCode::bad_request, what + ": " + e.what());
    }
  }

  // Wraps a handler so every spice::Error (and anything else) becomes a JSON error body.
  template <typename F>
  static httplib::Server::Handler guarded(F f) {
    return [f](const httplib::Request& req, httplib::Response& res) {
      try {
        f(req, res);
      } catch (const Error& e) {
        send_error(res, e);
      } catch (const nlohmann::json::exception& e) {
        send_error(res, Error(ErrorCode::bad_request, std::string("invalid JSON: ") + e.what()));
      } catch (const std::exception& e) {
        send_error(res, Error(ErrorCode::internal, e.what()));
      }
    };
  }

  StepInput parse_step_input(const httplib::Request& req, const ImageBuffer& active) const {
    require(req.is_multipart_form_data(), "expected multipart/form-data with mask, hint and config parts");
    require(req.has_file("mask"), "missing 'mask' part");
    StepInput in;
    if (req.has_file("config")) in.raw = nlohmann::json::parse(req.get_file_value("config").content);
    if (in.raw.is_null()) in.raw = nlohmann::json::object();
    require(in.raw.is_object(), "config must be a JSON object");
    in.config = in.raw.get<EditConfig>();
    in.config.validate();

    const auto mask_img = decode_upload(req.get_file_value("mask").content, "mask");
    require(mask_img.same_dims(active), "mask dimensions differ from the active image");
    in.mask = mask_from_image(mask_img);

    const auto files = req.get_file_values("hint");
    const auto meta = in.raw.value("hints", nlohmann::json::array());
    require(meta.is_array(), "config.hints must be an array");
    for (std::size_t i = 0; i < files.size(); ++i) {
      HintLayer layer;
      layer.raster = decode_upload(files[i].content, "hint " + std::to_string(i));
      layer.opacity = in.config.patch_opacity;
      if (i < meta.size()) {
        if (meta[i].contains("kind")) layer.kind = parse_hint_kind(meta[i].at("kind").get<std::string>());
        if (meta[i].contains("opacity")) layer.opacity = meta[i].at("opacity").get<double>();
      }
      in.hints.push_back(std::move(layer));
    }
    return in;
  }

  // Runs one step against the active image and commits it. The session is only replaced once the
  // project directory holds the new state.
  nlohmann::json execute_step(Slot& s, const StepInput& in) {
    ImageRef active;
    {
      std::lock_guard lock(s.mu);
      active = s.session.active_image();
    }
    StepOptions options;
    options.cancel = &s.cancel;
    options.context_scale = in.raw.value("context_scale", 1.0);
    auto step = run_edit_step(active, in.mask, in.hints, in.config, *opt_.backend, options);
    check_cancel(&s.cancel);

    std::lock_guard lock(s.mu);
    EditSession next = s.session;
    next.commit(std::move(step));
    save_project(next, opt_.project_root / next.id());
    s.session = std::move(next);
    return step_summary(s.session, s.session.steps().back());
  }

  std::string start_job(std::function<nlohmann::json()> work) {
    const auto id = EditSession::random_id();
    auto job = std::make_shared<Job>();
    std::lock_guard lock(mu_);
    jobs_[id] = job;
    workers_.emplace_back([job, work = std::move(work), this] {
      nlohmann::json body;
      std::string status;
      try {
        body = work();
        status = "done";
      } catch (const Error& e) {
        body = wire::error_body(e.code(), e.what(), e.retryable());
        status = "error";
      } catch (const std::exception& e) {
        body = wire::error_body(ErrorCode::internal, e.what(), false);
        status = "error";
      }
      std::lock_guard l(mu_);
      job->body = std::move(body);
      job->status = status;
    });
    return id;
  }

  void routes() {
    http_.set_payload_max_length(256u << 20);

    http_.Get("/v1/health", guarded([this](const httplib::Request&, httplib::Response& res) {
      send_json(res, {{"status", "ok"}, {"backend", opt_.backend->id()}, {"sessions", session_count()}});
    }));

    http_.Get("/v1/presets", guarded([](const httplib::Request&, httplib::Response& res) {
      send_json(res, presets_document());
    }));

    http_.Post("/v1/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
      std::string data;
      if (req.is_multipart_form_data()) {
        require(req.has_file("image"), "missing 'image' part");
        data = req.get_file_value("image").content;
      } else {
        data = req.body;
      }
      auto base = decode_upload(data, "image");
      auto s = std::make_shared<Slot>();
      s->session = EditSession::create(std::move(base));
      save_project(s->session, opt_.project_root / s->session.id());
      {
        std::lock_guard lock(mu_);
        slots_[s->session.id()] = s;
      }
      send_json(res, {{"session_id", s->session.id()}}, 201);
    }));

    http_.Get("/v1/sessions", guarded([this](const httplib::Request&, httplib::Response& res) {
      std::vector<std::string> ids;
      {
        std::lock_guard lock(mu_);
        for (const auto& [id, s] : slots_) ids.push_back(id);
      }
      send_json(res, {{"sessions", ids}});
    }));

    http_.Get("/v1/sessions/:id", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto s = slot(req.path_params.at("id"));
      std::lock_guard lock(s->mu);
      auto body = session_summary(s->session);
      body["busy"] = s->busy.load();
      send_json(res, body);
    }));

    const auto image_route = [this](auto pick) {
      return guarded([this, pick](const httplib::Request& req, httplib::Response& res) {
        auto s = slot(req.path_params.at("id"));
        ImageRef img;
        {
          std::lock_guard lock(s->mu);
          img = pick(s->session);
        }
        send_png(res, *img);
      });
    };
    http_.Get("/v1/sessions/:id/base.png", image_route([](const EditSession& s) { return s.base_image(); }));
    http_.Get("/v1/sessions/:id/active.png", image_route([](const EditSession& s) { return s.active_image(); }));

    const auto step_image = [this](const httplib::Request& req, httplib::Response& res, const std::string& which) {
      auto s = slot(req.path_params.at("id"));
      int t = 0;
      try {
        t = std::stoi(req.path_params.at("t"));
      } catch (const std::exception&) {
        fail(ErrorCode::bad_request, "step index must be an integer");
      }
      ImageRef img;
      std::shared_ptr<const ContextMask> mask;
      {
        std::lock_guard lock(s->mu);
        if (t < 0 || t >= s->session.step_count()) fail(ErrorCode::not_found, "no step " + std::to_string(t));
        const auto& st = s->session.steps()[t];
        img = which == "hint" ? st.hinted : st.result;
        mask = st.mask;
      }
      if (which == "mask") {
        send_png(res, mask_to_gray(*mask));
      } else if (which == "thumbnail") {
        const int n = opt_.thumbnail_size;
        const double k = std::min(1.0, static_cast<double>(n) / std::max(img->width(), img->height()));
        const int w = std::max(1, static_cast<int>(std::lround(img->width() * k)));
        const int h = std::max(1, static_cast<int>(std::lround(img->height() * k)));
        send_png(res, resize(*img, w, h, pick_filter(img->width(), img->height(), w, h)));
      } else {
        send_png(res, *img);
      }
    };
    for (const std::string which : {"result", "thumbnail", "mask", "hint"})
      http_.Get("/v1/sessions/:id/steps/:t/" + which + ".png",
                guarded([step_image, which](const httplib::Request& req, httplib::Response& res) {
                  step_image(req, res, which);
                }));

    http_.Post("/v1/sessions/:id/steps", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto s = slot(req.path_params.at("id"));
      auto guard = std::make_shared<BusyGuard>(*s);
      ImageRef active;
      {
        std::lock_guard lock(s->mu);
        active = s->session.active_image();
      }
      auto in = std::make_shared<StepInput>(parse_step_input(req, *active));
      if (in->raw.value("async", false)) {
        const auto job = start_job([this, s, in, guard]() mutable {
          const auto held = std::move(guard);  // released before the job reports completion
          return execute_step(*s, *in);
        });
        send_json(res, {{"job_id", job}, {"status_url", "/v1/jobs/" + job}}, 202);
        return;
      }
      send_json(res, execute_step(*s, *in));
    }));

    http_.Get("/v1/jobs/:job", guarded([this](const httplib::Request& req, httplib::Response& res) {
      std::lock_guard lock(mu_);
      auto it = jobs_.find(req.path_params.at("job"));
      if (it == jobs_.end()) fail(ErrorCode::not_found, "no job '" + req.path_params.at("job") + "'");
      nlohmann::json body{{"job_id", it->first}, {"status", it->second->status}};
      if (it->second->status == "done") body["step"] = it->second->body;
      if (it->second->status == "error") body.update(it->second->body);
      send_json(res, body);
    }));

    http_.Post("/v1/sessions/:id/cancel", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto s = slot(req.path_params.at("id"));
      const bool busy = s->busy.load();
      if (busy) s->cancel.cancel();
      send_json(res, {{"cancelled", busy}});
    }));

    http_.Post("/v1/sessions/:id/revert", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto s = slot(req.path_params.at("id"));
      const auto body = nlohmann::json::parse(req.body);
      require(body.contains("to_step") && body.at("to_step").is_number_integer(), "to_step must be an integer");
      BusyGuard guard(*s);
      std::lock_guard lock(s->mu);
      EditSession next = s->session;
      next.revert(body.at("to_step").get<int>());
      save_project(next, opt_.project_root / next.id());
      s->session = std::move(next);
      send_json(res, session_summary(s->session));
    }));

    http_.Post("/v1/sessions/:id/sweeps", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto s = slot(req.path_params.at("id"));
      BusyGuard guard(*s);
      ImageRef active;
      {
        std::lock_guard lock(s->mu);
        active = s->session.active_image();
      }
      const auto in = parse_step_input(req, *active);
      require(in.raw.contains("axis") && in.raw.contains("values"), "sweep config needs 'axis' and 'values'");
      const auto axis = parse_sweep_axis(in.raw.at("axis").get<std::string>());
      const auto values = in.raw.at("values").get<std::vector<double>>();
      auto result = run_sweep(*active, in.mask, in.hints, in.config, *opt_.backend, axis, values, opt_.jobs, &s->cancel);
      std::lock_guard lock(s->mu);
      const auto k = s->sweeps.size();
      auto body = sweep_sidecar(result);
      body["contact_sheet_url"] = session_url(s->session.id()) + "/sweeps/" + std::to_string(k) + "/contact.png";
      s->sweeps.push_back(std::move(result));
      send_json(res, body);
    }));

    http_.Get("/v1/sessions/:id/sweeps/:k/contact.png", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto s = slot(req.path_params.at("id"));
      std::lock_guard lock(s->mu);
      std::size_t k = 0;
      try {
        k = std::stoul(req.path_params.at("k"));
      } catch (const std::exception&) {
        fail(ErrorCode::bad_request, "sweep index must be an integer");
      }
      if (k >= s->sweeps.size()) fail(ErrorCode::not_found, "no sweep " + req.path_params.at("k"));
      send_png(res, s->sweeps[k].contact_sheet);
    }));

    http_.Post("/v1/metrics/clip", guarded([this](const httplib::Request& req, httplib::Response& res) {
      if (!opt_.embedder) fail(ErrorCode::backend_unavailable, "no embedder configured");
      require(req.is_multipart_form_data(), "expected multipart/form-data");
      for (const char* part : {"source", "edited", "source_caption", "target_caption"})
        require(req.has_file(part), std::string("missing '") + part + "' part");
      const auto src = decode_upload(req.get_file_value("source").content, "source");
      const auto edit = decode_upload(req.get_file_value("edited").content, "edited");
      const auto src_cap = trim_caption(req.get_file_value("source_caption").content);
      const auto tgt_cap = trim_caption(req.get_file_value("target_caption").content);
      nlohmann::json body{{"clip_out", clip_out(edit, tgt_cap, *opt_.embedder)}};
      try {
        body["clip_dir"] = clip_dir(src, edit, src_cap, tgt_cap, *opt_.embedder);
      } catch (const UndefinedDirection& e) {
        body["clip_dir"] = nullptr;
        body["clip_dir_error"] = e.what();
      }
      send_json(res, body);
    }));

    http_.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (res.body.empty()) {
        const auto code = res.status == 404 ? ErrorCode::not_found : ErrorCode::bad_request;
        res.set_content(wire::error_body(code, "no such route", false).dump(), "application/json");
      }
    });
  }

  ServerOptions opt_;
  httplib::Server http_;
  int port_ = 0;
  std::thread listener_;
  mutable std::mutex mu_;  // guards slots_, jobs_, workers_
  std::map<std::string, std::shared_ptr<Slot>> slots_;
  std::map<std::string, std::shared_ptr<Job>> jobs_;
  std::vector<std::thread> workers_;
};

}  // namespace spice
