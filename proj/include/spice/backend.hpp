#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "spice/error.hpp"
#include "spice/hash.hpp"
#include "spice/image.hpp"

namespace spice {

enum class Stage { canny = 0, base = 1 };

inline std::string_view to_string(Stage s) { return s == Stage::canny ? "canny" : "base"; }

inline Stage parse_stage(std::string_view s) {
  if (s == "canny") return Stage::canny;
  if (s == "base") return Stage::base;
  fail(ErrorCode::bad_request, "unknown stage '" + std::string(s) + "'");
}

// Decoded intermediate generation state handed from one stage to the next.
struct ContinuationState {
  ImageBuffer intermediate;
  Digest digest{};

  static ContinuationState of(ImageBuffer img) {
    ContinuationState s;
    s.digest = image_digest(img);
    s.intermediate = std::move(img);
    return s;
  }
};

struct DenoiseRequest {
  ImageBuffer crop;  // hinted crop at working resolution
  std::string prompt;
  SoftMask soft_mask;
  std::optional<EdgeMap> edge_map;  // present iff stage == canny
  double denoising_strength = 0.0;
  int stage_steps = 1;
  int total_steps = 1;
  Stage stage = Stage::base;
  std::uint64_t seed = 0;
  std::optional<ContinuationState> continuation;
};

struct DenoiseResponse {
  ImageBuffer result;
  ContinuationState continuation;
  std::string backend_id;
};

inline void validate_request(const DenoiseRequest& r) {
  require(r.crop.valid(), "denoise request: empty crop");
  require(r.crop.same_dims(r.soft_mask), "denoise request: soft mask dimensions differ from crop");
  require(r.denoising_strength >= 0.0 && r.denoising_strength <= 1.0, "denoise request: strength outside [0,1]");
  require(r.stage_steps >= 1, "denoise request: stage_steps must be >= 1");
  require(r.total_steps >= r.stage_steps, "denoise request: total_steps must be >= stage_steps");
  if (r.stage == Stage::canny) {
    require(r.edge_map.has_value(), "denoise request: canny stage requires an edge map");
    require(r.crop.same_dims(*r.edge_map), "denoise request: edge map dimensions differ from crop");
  } else {
    require(!r.edge_map.has_value(), "denoise request: edge map is only valid for the canny stage");
  }
  if (r.continuation) {
    const auto& c = r.continuation->intermediate;
    require(c.same_dims(r.crop) && c.channels() == r.crop.channels(),
            "denoise request: continuation shape differs from crop");
    require(image_digest(c) == r.continuation->digest, "denoise request: continuation digest mismatch");
  }
}

inline void validate_response(const DenoiseRequest& req, const DenoiseResponse& res) {
  if (!res.result.same_dims(req.crop) || res.result.channels() != req.crop.channels())
    fail(ErrorCode::contract, "backend returned a " + std::to_string(res.result.width()) + "x" +
                                  std::to_string(res.result.height()) + " result for a " +
                                  std::to_string(req.crop.width()) + "x" + std::to_string(req.crop.height()) + " crop");
}

class Cancellation {
 public:
  void cancel() { flag_.store(true); }
  bool cancelled() const { return flag_.load(); }
  void reset() { flag_.store(false); }

 private:
  std::atomic<bool> flag_{false};
};

inline void check_cancel(const Cancellation* c) {
  if (c && c->cancelled()) fail(ErrorCode::cancelled, "operation cancelled");
}

// The denoising service contract. Implementations must be safe for concurrent calls.
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual DenoiseResponse denoise(const DenoiseRequest& request, const Cancellation* cancel = nullptr) = 0;
  virtual std::string id() const = 0;
};

// Counter-based noise field of the mock denoiser, in [0,1).
inline double mock_noise(std::uint64_t seed, Stage stage, int x, int y, int c) {
  const std::uint64_t key = (seed * 0x9E3779B97F4A7C15ULL) ^ (static_cast<std::uint64_t>(stage) << 48) ^
                            (static_cast<std::uint64_t>(y) << 24) ^ (static_cast<std::uint64_t>(x) << 2) ^
                            static_cast<std::uint64_t>(c);
  return u64_to_unit(splitmix64_finalize(key));
}

// Deterministic stand-in for a diffusion backend:
//   w = strength * stage_steps / total_steps
//   result = soft * ((1 - w) * start + w * noise) + (1 - soft) * start
// where start is the continuation (if any) or the crop. In the canny stage, edge pixels keep start.
class MockDenoiser final : public Denoiser {
 public:
  DenoiseResponse denoise(const DenoiseRequest& r, const Cancellation* cancel = nullptr) override {
    validate_request(r);
    check_cancel(cancel);
    const ImageBuffer& start = r.continuation ? r.continuation->intermediate : r.crop;
    const double w = r.denoising_strength * r.stage_steps / r.total_steps;
    ImageBuffer out = start;
    const int ch = start.channels();
    for (int y = 0; y < start.height(); ++y)
      for (int x = 0; x < start.width(); ++x) {
        const double soft = r.soft_mask.at(x, y);
        if (soft == 0.0) continue;
        if (r.stage == Stage::canny && r.edge_map->test(x, y)) continue;
        for (int c = 0; c < ch; ++c) {
          const double s = start.unit(x, y, c);
          const double blended = (1.0 - w) * s + w * mock_noise(r.seed, r.stage, x, y, c);
          out.at(x, y, c) = quantize(soft * blended + (1.0 - soft) * s);
        }
      }
    DenoiseResponse res;
    res.continuation = ContinuationState::of(out);
    res.result = std::move(out);
    res.backend_id = id();
    return res;
  }

  std::string id() const override { return "mock"; }
};

struct EmbeddingVector {
  std::vector<double> values;

  std::size_t dim() const { return values.size(); }
  double norm() const {
    double s = 0.0;
    for (double v : values) s += v * v;
    return std::sqrt(s);
  }
};

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual EmbeddingVector embed_text(std::string_view text) = 0;
  virtual EmbeddingVector embed_image(const ImageBuffer& image) = 0;
  virtual std::string id() const = 0;
};

inline std::uint64_t text_content_hash(std::string_view text) { return leading_u64(Sha256().update(text).finish()); }

inline std::uint64_t image_content_hash(const ImageBuffer& img) { return leading_u64(image_digest(img)); }

// Component i = unit(finalize(hash ^ i)) - 0.5, then L2-normalised.
inline EmbeddingVector mock_embedding(std::uint64_t content_hash, std::size_t dim = 64) {
  EmbeddingVector v;
  v.values.resize(dim);
  for (std::size_t i = 0; i < dim; ++i) v.values[i] = u64_to_unit(splitmix64_finalize(content_hash ^ i)) - 0.5;
  const double n = v.norm();
  for (double& x : v.values) x /= n;
  return v;
}

class MockEmbedder final : public Embedder {
 public:
  EmbeddingVector embed_text(std::string_view text) override {
    require(!text.empty(), "cannot embed empty text");
    return mock_embedding(text_content_hash(text));
  }
  EmbeddingVector embed_image(const ImageBuffer& image) override {
    require(image.valid(), "cannot embed an empty image");
    return mock_embedding(image_content_hash(image));
  }
  std::string id() const override { return "mock"; }
};

}  // namespace spice
