#pragma once

#include <chrono>
#include <memory>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "spice/backend.hpp"
#include "spice/error.hpp"
#include "spice/hash.hpp"
#include "spice/imageops.hpp"
#include "spice/png.hpp"

namespace spice {

namespace wire {

using json = nlohmann::json;

inline std::string png_b64(const ImageBuffer& img) { return base64_encode(encode_png(img)); }

inline ImageBuffer png_from_b64(const json& j, const char* field) {
  if (!j.contains(field) || !j.at(field).is_string()) fail(ErrorCode::bad_request, std::string("missing field ") + field);
  return decode_png(base64_decode(j.at(field).get<std::string>()));
}

inline Digest digest_from_hex(const std::string& hex) {
  require(hex.size() == 64, "digest must be 64 hex characters");
  Digest d{};
  for (std::size_t i = 0; i < 32; ++i) {
    const auto byte = hex.substr(2 * i, 2);
    require(byte.find_first_not_of("0123456789abcdefABCDEF") == std::string::npos, "digest is not hex");
    d[i] = static_cast<std::uint8_t>(std::stoi(byte, nullptr, 16));
  }
  return d;
}

// POST /v1/denoise body. The soft mask travels as 8-bit grayscale (0..255 -> [0,1]).
inline json encode_request(const DenoiseRequest& r) {
  json j{{"crop_png", png_b64(r.crop)},
         {"mask_png", png_b64(mask_to_gray(r.soft_mask))},
         {"prompt", r.prompt},
         {"strength", r.denoising_strength},
         {"stage", std::string(to_string(r.stage))},
         {"stage_steps", r.stage_steps},
         {"total_steps", r.total_steps},
         {"seed", r.seed}};
  if (r.edge_map) j["edge_png"] = png_b64(mask_to_gray(*r.edge_map));
  if (r.continuation) {
    j["continuation_png"] = png_b64(r.continuation->intermediate);
    j["continuation_digest"] = to_hex(r.continuation->digest);
  }
  return j;
}

inline DenoiseRequest decode_request(const json& j) {
  try {
    DenoiseRequest r;
    r.crop = png_from_b64(j, "crop_png");
    r.soft_mask = gray_to_soft(png_from_b64(j, "mask_png"));
    if (j.contains("edge_png")) r.edge_map = EdgeMap(threshold_mask(png_from_b64(j, "edge_png")));
    r.prompt = j.value("prompt", "");
    r.denoising_strength = j.at("strength").get<double>();
    r.stage = parse_stage(j.at("stage").get<std::string>());
    r.stage_steps = j.at("stage_steps").get<int>();
    r.total_steps = j.at("total_steps").get<int>();
    r.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("continuation_png")) {
      ContinuationState c;
      c.intermediate = png_from_b64(j, "continuation_png");
      c.digest = j.contains("continuation_digest") ? digest_from_hex(j.at("continuation_digest").get<std::string>())
                                                   : image_digest(c.intermediate);
      r.continuation = std::move(c);
    }
    validate_request(r);
    return r;
  } catch (const json::exception& e) {
    fail(ErrorCode::bad_request, std::string("malformed denoise request: ") + e.what());
  }
}

inline json encode_response(const DenoiseResponse& r) {
  return json{{"result_png", png_b64(r.result)},
              {"continuation_digest", to_hex(r.continuation.digest)},
              {"backend_id", r.backend_id}};
}

inline DenoiseResponse decode_response(const json& j) {
  try {
    DenoiseResponse r;
    r.result = png_from_b64(j, "result_png");
    r.backend_id = j.value("backend_id", "unknown");
    r.continuation.intermediate = r.result;
    r.continuation.digest = digest_from_hex(j.at("continuation_digest").get<std::string>());
    return r;
  } catch (const json::exception& e) {
    fail(ErrorCode::contract, std::string("malformed denoise response: ") + e.what());
  } catch (const Error& e) {
    fail(ErrorCode::contract, std::string("malformed denoise response: ") + e.what());
  }
}

inline json encode_embedding(const EmbeddingVector& v) { return json{{"dim", v.dim()}, {"values", v.values}}; }

// The API exposes a closed set of error codes; internal codes fold into it.
inline std::string_view api_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::bad_request:
    case ErrorCode::not_found:
    case ErrorCode::conflict:
    case ErrorCode::backend_unavailable: return to_string(code);
    case ErrorCode::contract: return "backend_unavailable";
    case ErrorCode::cancelled: return "conflict";
    default: return "internal";
  }
}

inline json error_body(ErrorCode code, const std::string& message, bool retryable) {
  return json{{"error", {{"code", std::string(api_code(code))}, {"message", message}, {"retryable", retryable}}}};
}

inline int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::bad_request: return 400;
    case ErrorCode::not_found: return 404;
    case ErrorCode::conflict: return 409;
    case ErrorCode::cancelled: return 409;
    case ErrorCode::contract: return 502;
    case ErrorCode::backend_unavailable: return 503;
    default: return 500;
  }
}

}  // namespace wire

// "http://host:port/prefix" -> ("http://host:port", "/prefix")
struct Endpoint {
  std::string origin;
  std::string prefix;

  static Endpoint parse(const std::string& url) {
    const auto scheme = url.find("://");
    require(scheme != std::string::npos, "backend URL must start with http:// (got '" + url + "')");
    require(url.compare(0, scheme, "http") == 0, "only http:// backends are supported (got '" + url + "')");
    const auto slash = url.find('/', scheme + 3);
    Endpoint e;
    e.origin = url.substr(0, slash);
    e.prefix = slash == std::string::npos ? "" : url.substr(slash);
    while (!e.prefix.empty() && e.prefix.back() == '/') e.prefix.pop_back();
    return e;
  }
};

struct HttpOptions {
  int max_attempts = 2;
  std::chrono::milliseconds connect_timeout{2000};
  std::chrono::milliseconds read_timeout{300000};
  std::chrono::milliseconds retry_backoff{100};
};

namespace detail {

// POSTs JSON with retries on transport failures and 5xx responses.
inline nlohmann::json post_json(const Endpoint& ep, const std::string& path, const nlohmann::json& body,
                                const HttpOptions& opt, const Cancellation* cancel) {
  const std::string payload = body.dump();
  std::string last_error;
  for (int attempt = 1; attempt <= opt.max_attempts; ++attempt) {
    check_cancel(cancel);
    httplib::Client cli(ep.origin);
    cli.set_connection_timeout(opt.connect_timeout);
    cli.set_read_timeout(opt.read_timeout);
    httplib::Request req;
    req.method = "POST";
    req.path = ep.prefix + path;
    req.body = payload;
    req.set_header("Content-Type", "application/json");
    req.progress = [cancel](std::uint64_t, std::uint64_t) { return !(cancel && cancel->cancelled()); };
    auto res = cli.send(req);
    if (!res) {
      check_cancel(cancel);
      last_error = "cannot reach " + ep.origin + req.path + ": " + httplib::to_string(res.error());
    } else if (res->status == 404) {
      throw Error(ErrorCode::backend_unavailable, "endpoint " + ep.origin + req.path + " not found (check the backend URL)",
                  false, attempt);
    } else if (res->status >= 500) {
      last_error = "backend error " + std::to_string(res->status) + ": " + res->body;
    } else if (res->status != 200) {
      throw Error(ErrorCode::contract, "backend rejected request with status " + std::to_string(res->status) + ": " + res->body,
                  false, attempt);
    } else {
      try {
        return nlohmann::json::parse(res->body);
      } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::contract, std::string("backend sent invalid JSON: ") + e.what(), false, attempt);
      }
    }
    if (attempt < opt.max_attempts) std::this_thread::sleep_for(opt.retry_backoff * attempt);
  }
  throw Error(ErrorCode::backend_unavailable, last_error + " (after " + std::to_string(opt.max_attempts) + " attempts)",
              true, opt.max_attempts);
}

}  // namespace detail

class HttpDenoiser final : public Denoiser {
 public:
  explicit HttpDenoiser(const std::string& url, HttpOptions options = {})
      : endpoint_(Endpoint::parse(url)), url_(url), options_(options) {}

  DenoiseResponse denoise(const DenoiseRequest& request, const Cancellation* cancel = nullptr) override {
    validate_request(request);
    auto body = detail::post_json(endpoint_, "/v1/denoise", wire::encode_request(request), options_, cancel);
    auto res = wire::decode_response(body);
    validate_response(request, res);
    return res;
  }

  std::string id() const override { return "http:" + url_; }

 private:
  Endpoint endpoint_;
  std::string url_;
  HttpOptions options_;
};

class HttpEmbedder final : public Embedder {
 public:
  explicit HttpEmbedder(const std::string& url, HttpOptions options = {})
      : endpoint_(Endpoint::parse(url)), url_(url), options_(options) {}

  EmbeddingVector embed_text(std::string_view text) override {
    require(!text.empty(), "cannot embed empty text");
    return call({{"kind", "text"}, {"payload", std::string(text)}});
  }
  EmbeddingVector embed_image(const ImageBuffer& image) override {
    return call({{"kind", "image"}, {"payload", wire::png_b64(image)}});
  }
  std::string id() const override { return "http:" + url_; }

 private:
  EmbeddingVector call(const nlohmann::json& body) {
    auto j = detail::post_json(endpoint_, "/v1/embed", body, options_, nullptr);
    try {
      EmbeddingVector v;
      v.values = j.at("values").get<std::vector<double>>();
      if (j.contains("dim") && j.at("dim").get<std::size_t>() != v.dim())
        fail(ErrorCode::contract, "embedding dim field disagrees with values length");
      if (v.values.empty()) fail(ErrorCode::contract, "empty embedding");
      return v;
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::contract, std::string("malformed embedding response: ") + e.what());
    }
  }

  Endpoint endpoint_;
  std::string url_;
  HttpOptions options_;
};

inline void send_error(httplib::Response& res, const Error& e) {
  res.status = wire::http_status(e.code());
  res.set_content(wire::error_body(e.code(), e.what(), e.retryable()).dump(), "application/json");
}

// Serves POST /v1/denoise on `server`, backed by `denoiser`.
inline void mount_denoise_service(httplib::Server& server, std::shared_ptr<Denoiser> denoiser) {
  server.Post("/v1/denoise", [denoiser](const httplib::Request& req, httplib::Response& res) {
    try {
      const auto body = nlohmann::json::parse(req.body);
      const auto request = wire::decode_request(body);
      res.set_content(wire::encode_response(denoiser->denoise(request)).dump(), "application/json");
    } catch (const nlohmann::json::exception& e) {
      send_error(res, Error(ErrorCode::bad_request, std::string("invalid JSON: ") + e.what()));
    } catch (const Error& e) {
      send_error(res, e);
    }
  });
}

// Serves POST /v1/embed {kind: "text"|"image", payload} -> {dim, values}.
inline void mount_embed_service(httplib::Server& server, std::shared_ptr<Embedder> embedder) {
  server.Post("/v1/embed", [embedder](const httplib::Request& req, httplib::Response& res) {
    try {
      const auto body = nlohmann::json::parse(req.body);
      const auto kind = body.at("kind").get<std::string>();
      const auto payload = body.at("payload").get<std::string>();
      EmbeddingVector v;
      if (kind == "text") v = embedder->embed_text(payload);
      else if (kind == "image") v = embedder->embed_image(decode_png(base64_decode(payload)));
      else fail(ErrorCode::bad_request, "kind must be 'text' or 'image'");
      res.set_content(wire::encode_embedding(v).dump(), "application/json");
    } catch (const nlohmann::json::exception& e) {
      send_error(res, Error(ErrorCode::bad_request, std::string("invalid request: ") + e.what()));
    } catch (const Error& e) {
      send_error(res, e);
    }
  });
}

inline std::shared_ptr<Denoiser> make_denoiser(const std::string& spec) {
  if (spec == "mock") return std::make_shared<MockDenoiser>();
  return std::make_shared<HttpDenoiser>(spec);
}

inline std::shared_ptr<Embedder> make_embedder(const std::string& spec) {
  if (spec == "mock") return std::make_shared<MockEmbedder>();
  return std::make_shared<HttpEmbedder>(spec);
}

}  // namespace spice
