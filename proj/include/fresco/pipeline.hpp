#pragma once

#include <chrono>
#include <filesystem>
#include <memory>
#include <optional>
#include <sstream>
#include <string>

#include "fresco/config.hpp"
#include "fresco/denoiser.hpp"
#include "fresco/error.hpp"
#include "fresco/external.hpp"
#include "fresco/rng.hpp"
#include "fresco/sampler.hpp"
#include "fresco/schedules.hpp"
#include "fresco/tensor.hpp"
#include "fresco/tile_planner.hpp"

namespace fresco {

// Noise streams derived from the single run seed.
inline constexpr std::uint64_t kCanvasNoiseStream = 0;
inline constexpr std::uint64_t kPriorNoiseStream = 1;

struct PipelineResult {
  LatentTensor x_final;
  LatentTensor prior_low;     // prior at native resolution
  LatentTensor prior_canvas;  // prior resized onto the canvas
  RunTrace trace;
  double prior_seconds = 0.0;
  double main_seconds = 0.0;
};

// Inputs read from disk, loaded before any sampling so that configuration
// problems surface first.
struct PipelineInputs {
  std::optional<LatentTensor> target;
  std::optional<LatentTensor> prior_low;
  std::optional<ActivityMap> activity;
};

inline PipelineInputs load_pipeline_inputs(const RunConfig& c) {
  c.validate();
  PipelineInputs in;
  const Shape canvas = c.canvas_shape();
  if (c.denoiser == "target") {
    in.target = flt1::read(c.target);
    if (!(in.target->shape() == canvas)) {
      throw ConfigError("target " + in.target->shape().str() + " does not match canvas " +
                        canvas.str());
    }
  }
  if (!c.prior_latent.empty()) {
    in.prior_low = flt1::read(c.prior_latent);
    if (in.prior_low->shape().c != canvas.c) {
      throw ConfigError("prior latent channel count does not match the canvas");
    }
  }
  if (c.mode == SamplerMode::fd_regional) {
    in.activity = load_activity_map(c.activity_map, canvas.h, canvas.w);
  }
  return in;
}

inline std::unique_ptr<Denoiser> make_denoiser(const RunConfig& c, const Shape& stage,
                                               const PipelineInputs& in) {
  if (c.denoiser == "gaussian") return std::make_unique<GaussianDenoiser>(c.mean, c.stddev);
  if (c.denoiser == "target") {
    return std::make_unique<TargetDenoiser>(trilinear_resize(*in.target, stage.t, stage.h, stage.w));
  }
  const auto timeout = std::chrono::milliseconds(std::int64_t(c.timeout_s * 1000.0));
  return std::make_unique<ExternalDenoiser>(c.command, c.workers, timeout);
}

namespace detail {

template <typename Fn>
auto in_stage(const char* stage, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const Error& e) {
    std::throw_with_nested(Error(e.kind(), std::string(stage) + " stage: " + e.what()));
  }
}

inline double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace detail

// Native-resolution prior: one untiled pass at the fixed prior area.
inline LatentTensor sample_prior(const RunConfig& c, const PipelineInputs& in) {
  const PixelSize px = prior_resolution(c.height, c.width);
  const Shape shape{c.channels, c.frames, px.height / c.factor, px.width / c.factor};
  const auto denoiser = make_denoiser(c, shape, in);
  SamplerConfig cfg;
  cfg.schedule = c.schedule(c.prior_steps ? c.prior_steps : c.steps);
  cfg.plan = plan_tiles(shape.h, shape.w, shape.h, shape.w, 0.0);
  cfg.mode = SamplerMode::md;
  cfg.prediction = c.prediction;
  cfg.seed = c.seed;
  cfg.conditioning = c.conditioning;
  cfg.workers = 1;
  cfg.strict = c.strict;
  return TiledSampler(cfg, *denoiser).run(gaussian_noise(shape, c.seed, kPriorNoiseStream)).x_final;
}

// Prior stage, prior upsampling, then the tiled canvas pass.
inline PipelineResult run_pipeline(const RunConfig& c, const PipelineInputs& in) {
  c.validate();
  PipelineResult res;
  const Shape canvas = c.canvas_shape();

  auto t0 = std::chrono::steady_clock::now();
  res.prior_low = in.prior_low ? *in.prior_low
                               : detail::in_stage("prior", [&] { return sample_prior(c, in); });
  res.prior_canvas = detail::in_stage("upsample", [&] { return build_prior(res.prior_low, canvas); });
  res.prior_seconds = detail::seconds_since(t0);

  t0 = std::chrono::steady_clock::now();
  detail::in_stage("main", [&] {
    SamplerConfig cfg;
    cfg.schedule = c.schedule(c.steps);
    cfg.plan = plan_tiles_from_pixels(canvas.h, canvas.w, c.window_height, c.window_width,
                                      c.overlap, c.factor);
    cfg.blend = BlendConfig{c.w_min, c.ramp_h, c.ramp_w};
    cfg.prior = c.prior;
    cfg.seed = c.seed;
    cfg.mode = c.mode;
    cfg.prediction = c.prediction;
    cfg.conditioning = c.conditioning;
    cfg.workers = c.workers;
    cfg.strict = c.strict;
    const auto denoiser = make_denoiser(c, canvas, in);
    const ActivityMap* activity = in.activity ? &*in.activity : nullptr;
    TiledSampler sampler(cfg, *denoiser, &res.prior_canvas, activity);
    auto out = sampler.run(gaussian_noise(canvas, c.seed, kCanvasNoiseStream));
    res.x_final = std::move(out.x_final);
    res.trace = std::move(out.trace);
    return 0;
  });
  res.main_seconds = detail::seconds_since(t0);
  return res;
}

inline PipelineResult run_pipeline(const RunConfig& c) {
  return run_pipeline(c, load_pipeline_inputs(c));
}

// Manifest: the canonical config plus run bookkeeping. Loading it back as a
// config reproduces the run.
inline std::string manifest_text(const RunConfig& c, const PipelineResult& r) {
  std::ostringstream os;
  os << serialize_run_config(c) << "\n[manifest]\n"
     << "version = " << kVersion << "\n"
     << "canvas_latent = " << c.canvas_shape().str() << "\n"
     << "prior_latent_shape = " << r.prior_low.shape().str() << "\n"
     << "prior_seconds = " << r.prior_seconds << "\n"
     << "main_seconds = " << r.main_seconds << "\n";
  return os.str();
}

inline void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  flt1::write_bytes_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()),
                                           text.size()));
}

// Writes the latent, and trace, prior and manifest when configured.
inline void write_pipeline_outputs(const RunConfig& c, const PipelineResult& r) {
  flt1::write(c.out_latent, r.x_final);
  if (!c.out_prior.empty()) flt1::write(c.out_prior, r.prior_low);
  if (!c.out_trace.empty()) write_text_atomic(c.out_trace, r.trace.tsv());
  if (!c.out_manifest.empty()) write_text_atomic(c.out_manifest, manifest_text(c, r));
}

}  // namespace fresco
