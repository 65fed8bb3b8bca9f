// spice: command-line front end for edit steps, sweeps, measurement, metrics and the HTTP server.
//
// Exit codes: 0 success, 1 internal error, 2 usage or invalid argument, 3 I/O or unusable input,
// 4 backend or embedder failure.

#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
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
#include "spice/server.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace spice;

namespace {

enum Exit { kOk = 0, kInternal = 1, kUsage = 2, kIo = 3, kBackend = 4 };

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::bad_request: return kUsage;
    case ErrorCode::not_found:
    case ErrorCode::io: return kIo;
    case ErrorCode::backend_unavailable:
    case ErrorCode::contract: return kBackend;
    default: return kInternal;
  }
}

std::string env_or(const char* name, std::string fallback) {
  const char* v = std::getenv(name);
  return v && *v ? std::string(v) : fallback;
}

struct EditFlags {
  std::string image, mask, prompt, preset, resolution = "1216x832", backend;
  std::vector<std::string> hints, ablate;
  double strength = 0.9, opacity = 0.8, context_scale = 1.0;
  int canny_steps = 5, base_steps = 25;
  std::uint64_t seed = 0;
  CLI::Option* canny_opt = nullptr;
  CLI::Option* base_opt = nullptr;
  CLI::Option* strength_opt = nullptr;

  void add_to(CLI::App& app) {
    app.add_option("--image", image, "Active image (PNG)")->required();
    app.add_option("--mask", mask, "Mask with optional context dots (PNG, white = edit)")->required();
    app.add_option("--hint", hints, "Hint layer [color_patch:|reference_paste:]PATH, repeatable, applied in order");
    app.add_option("--prompt", prompt, "Description prompt");
    strength_opt = app.add_option("--strength", strength, "Denoising strength in [0,1]");
    canny_opt = app.add_option("--canny-steps", canny_steps, "Steps run by the edge-conditioned stage");
    base_opt = app.add_option("--base-steps", base_steps, "Steps run by the base stage");
    app.add_option("--seed", seed, "Noise seed");
    app.add_option("--resolution", resolution, "Working resolution WxH");
    app.add_option("--opacity", opacity, "Hint patch opacity in [0,1]");
    app.add_option("--context-scale", context_scale, "Scale the extended bbox about its centre");
    app.add_option("--ablate", ablate,
                   "Disable a component: disable_context_dots|disable_blur|disable_hints|disable_canny_stage");
    app.add_option("--preset", preset, "Task preset (Ears, Bridge, Potato, Fish)");
    app.add_option("--backend", backend, "mock or http://host:port (default $SPICE_BACKEND_URL or mock)");
  }

  EditConfig config() const {
    EditConfig c;
    c.prompt = prompt;
    c.denoising_strength = strength;
    c.canny_steps = canny_steps;
    c.base_steps = base_steps;
    c.seed = seed;
    c.target_resolution = Resolution::parse(resolution);
    c.patch_opacity = opacity;
    for (const auto& a : ablate)
      require(c.ablation.set(a), "unknown ablation flag '" + a + "'");
    if (!preset.empty()) {
      const auto& p = find_preset(preset);
      EditConfig with = c;
      apply_preset(with, p);
      if (!*strength_opt) c.denoising_strength = with.denoising_strength;
      if (!*canny_opt && !*base_opt) {
        c.canny_steps = with.canny_steps;
        c.base_steps = with.base_steps;
      }
      if (c.prompt.empty()) c.prompt = p.context;
    }
    // Without an explicit Canny step count, disabling the stage hands its steps to the base model.
    if (c.ablation.disable_canny_stage && !*canny_opt) {
      c.base_steps += c.canny_steps;
      c.canny_steps = 0;
    }
    c.validate();
    return c;
  }

  std::vector<HintLayer> layers(const ImageBuffer& active) const {
    std::vector<HintLayer> out;
    for (const auto& h : hints) {
      HintLayer layer;
      std::string path = h;
      for (const std::string kind : {"color_patch", "reference_paste"})
        if (h.rfind(kind + ":", 0) == 0) {
          layer.kind = parse_hint_kind(kind);
          path = h.substr(kind.size() + 1);
        }
      layer.raster = load_png(path);
      require(layer.raster.same_dims(active), "hint " + path + " dimensions differ from the image");
      layer.opacity = opacity;
      out.push_back(std::move(layer));
    }
    return out;
  }

  std::string backend_spec() const { return backend.empty() ? env_or("SPICE_BACKEND_URL", "mock") : backend; }
};

json box_json(const BoundingBox& b) { return json::array({b.x0, b.y0, b.x1, b.y1}); }

// Step metadata; excludes wall-clock timings so that reruns are byte-identical.
json step_metadata(const EditOutcome& o, const EditConfig& cfg, const EditFlags& f) {
  return {{"config", cfg},
          {"inputs", {{"image", f.image}, {"mask", f.mask}, {"hints", f.hints}}},
          {"context_bbox", box_json(o.analysis.context_bbox)},
          {"extended_bbox", box_json(o.analysis.extended_bbox)},
          {"clamped", o.analysis.clamped},
          {"context_dots", o.analysis.dots.size()},
          {"dots_included", o.analysis.dots_included},
          {"sigma_working", o.soft.sigma_working},
          {"sigma_source", o.soft.sigma_source},
          {"schedule", {{"canny_steps", o.schedule.canny_steps}, {"base_steps", o.schedule.base_steps}}},
          {"backend_id", o.provenance.backend_id},
          {"continuation_digests", o.provenance.continuation_digests},
          {"result_sha256", to_hex(image_digest(o.result))}};
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(p.parent_path(), ec);
    if (ec) fail(ErrorCode::io, "cannot create " + p.parent_path().string() + ": " + ec.message());
  }
}

int cmd_edit(const EditFlags& f, const std::string& out, std::string metadata) {
  const auto cfg = f.config();
  const auto image = load_png(f.image);
  const auto mask_img = load_png(f.mask);
  require(mask_img.same_dims(image), "mask dimensions differ from the image");
  const auto mask = mask_from_image(mask_img);
  const auto hints = f.layers(image);
  auto backend = make_denoiser(f.backend_spec());
  StepOptions options;
  options.context_scale = f.context_scale;
  const auto outcome = run_edit(image, mask, hints, cfg, *backend, options);
  ensure_parent(out);
  save_png(out, outcome.result);
  if (metadata.empty()) metadata = fs::path(out).replace_extension(".json").string();
  write_text(metadata, step_metadata(outcome, cfg, f).dump(2) + "\n");
  std::cout << out << "\n";
  return kOk;
}

std::vector<double> parse_values(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      require(used == item.size(), "");
    } catch (const std::exception&) {
      fail(ErrorCode::bad_request, "invalid sweep value '" + item + "'");
    }
  }
  return out;
}

int cmd_sweep(const EditFlags& f, const std::string& axis_name, const std::string& values_csv, int jobs,
              const std::string& out_dir) {
  const auto axis = parse_sweep_axis(axis_name);
  const auto values = parse_values(values_csv);
  require(values.size() >= 2, "a sweep needs at least two values");
  require(jobs >= 1, "--jobs must be at least 1");
  const auto cfg = f.config();
  const auto image = load_png(f.image);
  const auto mask_img = load_png(f.mask);
  require(mask_img.same_dims(image), "mask dimensions differ from the image");
  const auto mask = mask_from_image(mask_img);
  const auto hints = f.layers(image);
  auto backend = make_denoiser(f.backend_spec());
  const auto result = run_sweep(image, mask, hints, cfg, *backend, axis, values, jobs);

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) fail(ErrorCode::io, "cannot create " + out_dir + ": " + ec.message());
  std::vector<std::string> files(result.cells.size());
  for (std::size_t i = 0; i < result.cells.size(); ++i) {
    if (!result.cells[i].ok()) {
      std::cerr << "cell " << i << " (" << values[i] << ") failed: " << result.cells[i].error << "\n";
      continue;
    }
    char name[32];
    std::snprintf(name, sizeof name, "cell_%02zu.png", i);
    files[i] = name;
    save_png(fs::path(out_dir) / name, result.cells[i].outcome->result);
  }
  save_png(fs::path(out_dir) / "contact_sheet.png", result.contact_sheet);
  auto sidecar = sweep_sidecar(result, files);
  sidecar["config"] = cfg;
  sidecar["contact_sheet"] = "contact_sheet.png";
  write_text(fs::path(out_dir) / "sweep.json", sidecar.dump(2) + "\n");
  std::cout << result.succeeded() << "/" << result.cells.size() << " cells succeeded\n";
  if (result.succeeded() > 0) return kOk;
  return exit_code(result.cells.front().error_code);
}

int cmd_measure(const std::string& seg_path, const std::string& image_path, const std::string& spec_path,
                const std::string& out) {
  const auto seg_img = load_png(seg_path);
  const auto image = load_png(image_path);
  const BinaryMask seg = mask_from_image(seg_img);
  require(image.same_dims(seg), "segmentation mask and image dimensions differ");
  if (seg.empty()) {
    std::cerr << "spice: segmentation mask " << seg_path << " is empty\n";
    return kIo;
  }
  PropertySpec spec;
  try {
    spec = json::parse(read_text(spec_path)).get<PropertySpec>();
  } catch (const json::exception& e) {
    fail(ErrorCode::bad_request, "malformed spec " + spec_path + ": " + e.what());
  }
  const auto measured = measure_object(seg, image);
  const auto errors = percentage_errors(measured, spec);
  const json report{{"measured", measured}, {"errors", errors}};
  if (out.empty() || out == "-") {
    std::cout << report.dump(2) << "\n";
  } else {
    ensure_parent(out);
    write_text(out, report.dump(2) + "\n");
  }
  return kOk;
}

int cmd_clip(const std::string& cases, const std::string& embedder_spec, const std::string& out,
             const std::string& csv) {
  auto embedder = make_embedder(embedder_spec.empty() ? env_or("SPICE_EMBEDDER_URL", "mock") : embedder_spec);
  const auto report = evaluate_cases(cases, *embedder);
  const auto j = report_json(report);
  if (!out.empty()) {
    ensure_parent(out);
    write_text(out, j.dump(2) + "\n");
  }
  if (!csv.empty()) {
    ensure_parent(csv);
    write_text(csv, report_csv(report));
  }
  std::printf("clip_dir %.6f +- %.6f (n=%zu, undefined=%zu)\nclip_out %.6f +- %.6f (n=%zu)\nerrored %zu\n",
              report.clip_dir.mean, report.clip_dir.sd, report.clip_dir.n, report.undefined, report.clip_out.mean,
              report.clip_out.sd, report.clip_out.n, report.errored);
  return kOk;
}

// Blocks SIGINT/SIGTERM in every thread; a dedicated thread waits for them and runs `on_signal`.
std::thread signal_waiter(std::function<void()> on_signal, std::atomic<bool>& done) {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  sigaddset(&set, SIGUSR1);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  return std::thread([set, on_signal = std::move(on_signal), &done] {
    int sig = 0;
    sigwait(&set, &sig);
    if (!done.load()) on_signal();
  });
}

void wake_signal_waiter(std::thread& t) {
  pthread_kill(t.native_handle(), SIGUSR1);
  t.join();
}

int cmd_serve(const std::string& host, int port, const std::string& backend_url, const std::string& embedder_url,
              const std::string& project_root, int jobs) {
  ServerOptions opt;
  opt.host = host;
  opt.port = port;
  opt.project_root = project_root;
  opt.backend = make_denoiser(backend_url.empty() ? env_or("SPICE_BACKEND_URL", "mock") : backend_url);
  const auto emb = embedder_url.empty() ? env_or("SPICE_EMBEDDER_URL", "") : embedder_url;
  if (!emb.empty()) opt.embedder = make_embedder(emb);
  opt.jobs = jobs;

  std::atomic<bool> done{false};
  SpiceServer server(opt);
  auto waiter = signal_waiter([&] { server.stop(); }, done);
  if (!server.bind()) {
    done = true;
    wake_signal_waiter(waiter);
    std::cerr << "spice: cannot listen on " << host << ":" << port << "\n";
    return kIo;
  }
  std::cerr << "spice: listening on http://" << host << ":" << server.port() << " (backend " << opt.backend->id()
            << ", " << server.session_count() << " sessions)\n";
  server.listen();
  server.stop();
  done = true;
  if (waiter.joinable()) wake_signal_waiter(waiter);
  std::cerr << "spice: stopped\n";
  return kOk;
}

int cmd_mock_backend(const std::string& host, int port) {
  httplib::Server http;
  http.set_socket_options(spice::SpiceServer::exclusive_address);
  mount_denoise_service(http, std::make_shared<MockDenoiser>());
  mount_embed_service(http, std::make_shared<MockEmbedder>());
  http.Get("/v1/health", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"status":"ok","backend":"mock"})", "application/json");
  });
  http.set_payload_max_length(256u << 20);
  std::atomic<bool> done{false};
  auto waiter = signal_waiter([&] { http.stop(); }, done);
  const bool bound = port == 0 ? (port = http.bind_to_any_port(host)) > 0 : http.bind_to_port(host, port);
  if (!bound) {
    done = true;
    wake_signal_waiter(waiter);
    std::cerr << "spice: cannot listen on " << host << ":" << port << "\n";
    return kIo;
  }
  std::cout << "http://" << host << ":" << port << std::endl;
  http.listen_after_bind();
  done = true;
  if (waiter.joinable()) wake_signal_waiter(waiter);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sketch-guided region editing: edit steps, sweeps, measurement, metrics and serving"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "spice 0.1.0");

  EditFlags edit_flags;
  std::string edit_out = "result.png", edit_meta;
  auto* edit = app.add_subcommand("edit", "Run one edit step and write the result PNG plus metadata JSON");
  edit_flags.add_to(*edit);
  edit->add_option("--out", edit_out, "Result PNG");
  edit->add_option("--metadata", edit_meta, "Metadata JSON (default: --out with .json)");

  EditFlags sweep_flags;
  std::string axis, values, sweep_out = "sweep";
  int sweep_jobs = 1;
  auto* sweep = app.add_subcommand("sweep", "Run one edit per value of a hyperparameter and build a contact sheet");
  sweep_flags.add_to(*sweep);
  sweep->add_option("--axis", axis, "strength | canny-steps | context-scale")->required();
  sweep->add_option("--values", values, "Comma separated values")->required();
  sweep->add_option("--jobs", sweep_jobs, "Cells run in parallel");
  sweep->add_option("--out", sweep_out, "Output directory");

  std::string seg, m_image, spec, m_out;
  auto* measure = app.add_subcommand("measure", "Measure an object and its percentage errors against a spec");
  measure->add_option("--seg", seg, "Segmentation mask PNG")->required();
  measure->add_option("--image", m_image, "Image PNG")->required();
  measure->add_option("--spec", spec, "Target properties JSON")->required();
  measure->add_option("--out", m_out, "Report JSON (default stdout)");

  std::string cases, embedder, c_out, c_csv;
  auto* clip = app.add_subcommand("clip-metrics", "Direction and output similarity over a case directory");
  clip->add_option("--cases", cases, "Directory of cases")->required();
  clip->add_option("--embedder", embedder, "mock or http://host:port (default $SPICE_EMBEDDER_URL or mock)");
  clip->add_option("--out", c_out, "Report JSON");
  clip->add_option("--csv", c_csv, "Per-case CSV");

  std::string host = "127.0.0.1", backend_url, embedder_url, project_root = "spice-projects";
  int port = 8080, serve_jobs = 2;
  auto* serve = app.add_subcommand("serve", "Run the HTTP API");
  serve->add_option("--host", host, "Listen address");
  serve->add_option("--port", port, "Listen port");
  serve->add_option("--backend-url", backend_url, "Denoising backend (default $SPICE_BACKEND_URL or mock)");
  serve->add_option("--embedder-url", embedder_url, "Embedding service for /v1/metrics/clip");
  serve->add_option("--project-root", project_root, "Directory holding session projects");
  serve->add_option("--jobs", serve_jobs, "Sweep parallelism");

  std::string mb_host = "127.0.0.1";
  int mb_port = 0;
  auto* mock = app.add_subcommand("mock-backend", "Serve the deterministic mock denoiser and embedder over HTTP");
  mock->add_option("--host", mb_host, "Listen address");
  mock->add_option("--port", mb_port, "Listen port (0 picks a free port and prints the URL)");

  auto* presets = app.add_subcommand("presets", "Print the built-in task presets as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*edit) return cmd_edit(edit_flags, edit_out, edit_meta);
    if (*sweep) return cmd_sweep(sweep_flags, axis, values, sweep_jobs, sweep_out);
    if (*measure) return cmd_measure(seg, m_image, spec, m_out);
    if (*clip) return cmd_clip(cases, embedder, c_out, c_csv);
    if (*serve) return cmd_serve(host, port, backend_url, embedder_url, project_root, serve_jobs);
    if (*mock) return cmd_mock_backend(mb_host, mb_port);
    if (*presets) {
      std::cout << presets_document().dump(2) << "\n";
      return kOk;
    }
  } catch (const Error& e) {
    std::cerr << "spice: " << e.what() << "\n";
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "spice: internal error: " << e.what() << "\n";
    return kInternal;
  }
  return kUsage;
}
