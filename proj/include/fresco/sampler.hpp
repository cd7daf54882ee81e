#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <iomanip>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "fresco/blending.hpp"
#include "fresco/denoiser.hpp"
#include "fresco/error.hpp"
#include "fresco/fusion.hpp"
#include "fresco/prior_strength.hpp"
#include "fresco/schedules.hpp"
#include "fresco/tensor.hpp"
#include "fresco/tile_planner.hpp"

namespace fresco {

enum class SamplerMode { md, fd, fd_regional };

inline std::string to_string(SamplerMode m) {
  switch (m) {
    case SamplerMode::md: return "md";
    case SamplerMode::fd: return "fd";
    case SamplerMode::fd_regional: return "fd_regional";
  }
  return "?";
}

inline SamplerMode parse_sampler_mode(const std::string& s) {
  if (s == "md") return SamplerMode::md;
  if (s == "fd") return SamplerMode::fd;
  if (s == "fd_regional") return SamplerMode::fd_regional;
  throw ConfigError("unknown sampler mode '" + s + "'");
}

struct BlendConfig {
  float w_min = kDefaultMinWeight;
  // Ramp lengths in latent cells; unset means the overlap extent (window - stride).
  std::optional<std::uint32_t> ramp_h;
  std::optional<std::uint32_t> ramp_w;
};

struct SamplerConfig {
  SigmaSchedule schedule = SigmaSchedule::linear(6);
  TilePlan plan;
  BlendConfig blend;
  PriorScheduleConfig prior;
  std::uint64_t seed = 0;
  SamplerMode mode = SamplerMode::fd;
  Prediction prediction = Prediction::flow;
  std::string conditioning;
  std::uint32_t workers = 1;
  // Accumulate tile predictions in plan order regardless of worker count.
  bool strict = true;
};

// Per-step diagnostics. MSE fields are empty when the partition is empty or
// no clean estimate exists for the step.
struct StepRecord {
  std::uint32_t step = 0;
  double t = 0.0;
  double sigma = 0.0;
  double lambda_min = 0.0;
  double lambda_max = 0.0;
  double lambda_mean = 0.0;
  std::optional<double> fg_mse;
  std::optional<double> bg_mse;
};

struct RunTrace {
  std::vector<StepRecord> steps;

  // Tab-separated, one line per step, preceded by a header line.
  void write_tsv(std::ostream& os) const {
    os << "step\tt\tsigma\tlambda_min\tlambda_max\tlambda_mean\tfg_mse\tbg_mse\n";
    auto opt = [&](const std::optional<double>& v) {
      if (v) {
        os << *v;
      } else {
        os << "NA";
      }
    };
    const auto flags = os.flags();
    const auto prec = os.precision();
    os << std::setprecision(9);
    for (const auto& r : steps) {
      os << r.step << '\t' << r.t << '\t' << r.sigma << '\t' << r.lambda_min << '\t'
         << r.lambda_max << '\t' << r.lambda_mean << '\t';
      opt(r.fg_mse);
      os << '\t';
      opt(r.bg_mse);
      os << '\n';
    }
    os.flags(flags);
    os.precision(prec);
  }

  std::string tsv() const {
    std::ostringstream os;
    write_tsv(os);
    return os.str();
  }
};

struct PartitionMse {
  std::optional<double> fg;
  std::optional<double> bg;
};

// MSE of a clean estimate against the prior over active (fg) and inactive (bg)
// cells. Without an activity map every cell counts as background.
inline PartitionMse prior_mse(const LatentTensor& x0_hat, const LatentTensor& prior,
                              const ActivityMap* activity) {
  const Shape& s = x0_hat.shape();
  if (!(prior.shape() == s)) throw ShapeError("prior shape does not match estimate");
  if (activity && (activity->height() != s.h || activity->width() != s.w)) {
    throw ShapeError("activity map does not match canvas");
  }
  const std::size_t plane = s.plane();
  double sum[2] = {0.0, 0.0};
  std::size_t count[2] = {0, 0};
  auto a = x0_hat.data();
  auto p = prior.data();
  for (std::size_t k = 0; k < a.size(); ++k) {
    const int side = activity && activity->active(k % plane) ? 0 : 1;
    const double d = double(a[k]) - double(p[k]);
    sum[side] += d * d;
    ++count[side];
  }
  PartitionMse out;
  if (count[0]) out.fg = sum[0] / double(count[0]);
  if (count[1]) out.bg = sum[1] / double(count[1]);
  return out;
}

// Foreground/background MSE of the flow clean estimate x_t - sigma y.
inline PartitionMse trace_prior_mse(const LatentTensor& x_t, double sigma, const LatentTensor& y,
                                    const LatentTensor& prior, const ActivityMap& activity) {
  if (!(x_t.shape() == y.shape())) throw ShapeError("velocity shape does not match x_t");
  LatentTensor x0(x_t.shape());
  for (std::size_t k = 0; k < x0.size(); ++k) {
    x0.data()[k] = float(double(x_t.data()[k]) - sigma * double(y.data()[k]));
  }
  return prior_mse(x0, prior, &activity);
}

// Resizes a low-resolution prior latent onto the canvas (T, H, W).
inline LatentTensor build_prior(const LatentTensor& prior_latent, const Shape& canvas) {
  if (prior_latent.shape().c != canvas.c) {
    throw ShapeError("prior has " + std::to_string(prior_latent.shape().c) +
                     " channels, canvas has " + std::to_string(canvas.c));
  }
  return trilinear_resize(prior_latent, canvas.t, canvas.h, canvas.w);
}

// Sampler state shared across steps: the plan's weight maps and the inputs
// that stay fixed for a run.
class TiledSampler {
 public:
  TiledSampler(SamplerConfig cfg, Denoiser& denoiser, const LatentTensor* prior = nullptr,
               const ActivityMap* activity = nullptr)
      : cfg_(std::move(cfg)), denoiser_(denoiser), prior_(prior), activity_(activity) {
    validate();
    const TilePlan& plan = cfg_.plan;
    const std::uint32_t ramp_h =
        cfg_.blend.ramp_h.value_or(plan.window_h > plan.stride_h ? plan.window_h - plan.stride_h : 0);
    const std::uint32_t ramp_w =
        cfg_.blend.ramp_w.value_or(plan.window_w > plan.stride_w ? plan.window_w - plan.stride_w : 0);
    WeightMapCache cache;
    for (const Rect& r : plan.tiles) {
      weights_.push_back(cache.get(r.height, r.width, ramp_h, ramp_w, cfg_.blend.w_min));
    }
  }

  const SamplerConfig& config() const noexcept { return cfg_; }

  Shape canvas_shape(std::uint32_t channels, std::uint32_t frames) const {
    return Shape{channels, frames, cfg_.plan.canvas_h, cfg_.plan.canvas_w};
  }

  // Prior strength at step i (zero in md mode).
  PriorStrength lambda_at(std::uint32_t i) const {
    if (cfg_.mode == SamplerMode::md) return PriorStrength(0.0);
    return prior_strength_at(cfg_.schedule.position(i), cfg_.prior, activity_);
  }

  // Weighted sums of all tile predictions for x_t at step i.
  FusionAccumulator accumulate(const LatentTensor& x_t, std::uint32_t i) const {
    const auto& tiles = cfg_.plan.tiles;
    const std::size_t n = tiles.size();
    const std::size_t workers = std::clamp<std::size_t>(cfg_.workers, 1, n);
    FusionAccumulator acc(x_t.shape());

    if (workers == 1) {
      for (std::size_t k = 0; k < n; ++k) acc.accumulate(predict(x_t, i, k), tiles[k], *weights_[k]);
      return acc;
    }

    std::vector<std::exception_ptr> errors(workers);
    if (cfg_.strict) {
      // Predict concurrently, then accumulate in plan order.
      std::vector<LatentTensor> preds(n);
      run_workers(workers, n, errors, [&](std::size_t k) { preds[k] = predict(x_t, i, k); });
      rethrow_first(errors);
      for (std::size_t k = 0; k < n; ++k) acc.accumulate(preds[k], tiles[k], *weights_[k]);
      return acc;
    }

    // Each worker owns a contiguous block of tiles and a partial accumulator;
    // partials merge in block order.
    std::vector<FusionAccumulator> partials(workers, FusionAccumulator(x_t.shape()));
    std::vector<std::thread> threads;
    for (std::size_t w = 0; w < workers; ++w) {
      threads.emplace_back([&, w] {
        try {
          for (std::size_t k = w * n / workers; k < (w + 1) * n / workers; ++k) {
            partials[w].accumulate(predict(x_t, i, k), tiles[k], *weights_[k]);
          }
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& th : threads) th.join();
    rethrow_first(errors);
    for (const auto& p : partials) acc.merge(p);
    return acc;
  }

  // Fused prediction at step i for the given sums.
  LatentTensor fuse(const FusionAccumulator& acc, const LatentTensor& x_t, std::uint32_t i) const {
    if (cfg_.mode == SamplerMode::md) return fuse_md(acc);
    const PriorStrength lambda = lambda_at(i);
    const double sigma = cfg_.schedule.sigma(i);
    if (cfg_.prediction == Prediction::flow) return fuse_fd_flow(acc, x_t, *prior_, lambda, sigma);
    return fuse_fd_eps(acc, x_t, *prior_, lambda, 1.0 - sigma * sigma);
  }

  // One sampler step from sigma_i to sigma_{i+1}. record, if given, receives
  // the step's diagnostics.
  LatentTensor step(const LatentTensor& x_t, std::uint32_t i, StepRecord* record = nullptr) const {
    if (i >= cfg_.schedule.steps()) throw ArgumentError("step index out of range");
    if (!(x_t.shape().h == cfg_.plan.canvas_h && x_t.shape().w == cfg_.plan.canvas_w)) {
      throw ShapeError("x_t " + x_t.shape().str() + " does not match the tile plan canvas");
    }
    const double sigma = cfg_.schedule.sigma(i);
    const double next = cfg_.schedule.sigma(i + 1);
    StepRecord rec;
    rec.step = i;
    rec.t = cfg_.schedule.position(i);
    rec.sigma = sigma;
    const PriorStrength lambda = wrap(i, -1, [&] { return lambda_at(i); });
    rec.lambda_min = lambda.min();
    rec.lambda_max = lambda.max();
    rec.lambda_mean = lambda.mean();

    if (next == sigma) {
      // Nothing to integrate. At sigma = 0 the state is its own clean estimate.
      if (prior_ && sigma == 0.0) set_mse(rec, prior_mse(x_t, *prior_, activity_));
      if (record) *record = rec;
      return x_t;
    }

    const FusionAccumulator acc = accumulate(x_t, i);
    const LatentTensor y = wrap(i, -1, [&] { return fuse(acc, x_t, i); });

    LatentTensor x0(x_t.shape());
    LatentTensor out(x_t.shape());
    auto xs = x_t.data();
    auto ys = y.data();
    if (cfg_.prediction == Prediction::flow) {
      for (std::size_t k = 0; k < xs.size(); ++k) {
        x0.data()[k] = float(double(xs[k]) - sigma * double(ys[k]));
        out.data()[k] = float(double(xs[k]) + (next - sigma) * double(ys[k]));
      }
    } else {
      // Deterministic DDIM update with x_t = sqrt(1 - sigma^2) x0 + sigma eps.
      const double a = std::sqrt(1.0 - sigma * sigma);
      const double a_next = std::sqrt(1.0 - next * next);
      for (std::size_t k = 0; k < xs.size(); ++k) {
        const double clean = (double(xs[k]) - sigma * double(ys[k])) / a;
        x0.data()[k] = float(clean);
        out.data()[k] = float(a_next * clean + next * double(ys[k]));
      }
    }
    if (!out.all_finite()) {
      throw SamplerError(ErrorKind::domain, "step " + std::to_string(i) + ": non-finite state",
                         i, -1);
    }
    if (prior_) set_mse(rec, prior_mse(x0, *prior_, activity_));
    if (record) *record = rec;
    return out;
  }

  struct Result {
    LatentTensor x_final;
    RunTrace trace;
  };

  // All steps from the initial noise.
  Result run(const LatentTensor& initial_noise) const {
    if (!(initial_noise.shape().h == cfg_.plan.canvas_h &&
          initial_noise.shape().w == cfg_.plan.canvas_w)) {
      throw ShapeError("initial noise " + initial_noise.shape().str() +
                       " does not match the tile plan canvas");
    }
    if (prior_ && !(prior_->shape() == initial_noise.shape())) {
      throw ShapeError("prior " + prior_->shape().str() + " does not match canvas " +
                       initial_noise.shape().str());
    }
    Result res{initial_noise, {}};
    for (std::uint32_t i = 0; i < cfg_.schedule.steps(); ++i) {
      StepRecord rec;
      res.x_final = step(res.x_final, i, &rec);
      res.trace.steps.push_back(rec);
    }
    return res;
  }

 private:
  void validate() const {
    if (cfg_.plan.tiles.empty()) throw ConfigError("tile plan is empty");
    cfg_.prior.validate();
    if (cfg_.mode != SamplerMode::md && prior_ == nullptr) {
      throw ConfigError("mode " + to_string(cfg_.mode) + " requires a prior latent");
    }
    if (cfg_.mode == SamplerMode::fd && cfg_.prior.mode == PriorMode::regional) {
      throw ConfigError("regional prior schedule requires mode fd_regional");
    }
    if (cfg_.mode == SamplerMode::fd_regional) {
      if (cfg_.prior.mode != PriorMode::regional) {
        throw ConfigError("mode fd_regional requires the regional prior schedule");
      }
      if (activity_ == nullptr) throw ConfigError("mode fd_regional requires an activity map");
    }
    if (activity_ && (activity_->height() != cfg_.plan.canvas_h ||
                      activity_->width() != cfg_.plan.canvas_w)) {
      throw ConfigError("activity map does not match the canvas");
    }
    if (cfg_.prediction == Prediction::eps && !(cfg_.schedule.sigma(0) < 1.0)) {
      throw ConfigError("eps prediction needs sigma_0 < 1 (signal level must be positive)");
    }
  }

  static void set_mse(StepRecord& rec, const PartitionMse& m) {
    rec.fg_mse = m.fg;
    rec.bg_mse = m.bg;
  }

  LatentTensor predict(const LatentTensor& x_t, std::uint32_t i, std::size_t k) const {
    const Rect& r = cfg_.plan.tiles[k];
    return wrap(i, long(k), [&] {
      DenoiserRequest req;
      req.tile = crop(x_t, r);
      req.step = i;
      req.t = cfg_.schedule.position(i);
      req.sigma = cfg_.schedule.sigma(i);
      req.conditioning = cfg_.conditioning;
      req.rect = r;
      req.tile_index = long(k);
      req.kind = cfg_.prediction;
      DenoiserResponse res = denoiser_.predict(req);
      if (res.kind != cfg_.prediction) {
        throw DomainError("denoiser returned " + to_string(res.kind) + " prediction, expected " +
                          to_string(cfg_.prediction));
      }
      if (!(res.prediction.shape() == req.tile.shape())) {
        throw ShapeError("denoiser returned " + res.prediction.shape().str() + " for tile " +
                         req.tile.shape().str());
      }
      if (!res.prediction.all_finite()) throw DomainError("denoiser returned non-finite values");
      return std::move(res.prediction);
    });
  }

  // Runs fn, re-raising library errors as SamplerError tagged with step/tile.
  template <typename Fn>
  static auto wrap(std::uint32_t step, long tile, Fn&& fn) -> decltype(fn()) {
    try {
      return fn();
    } catch (const SamplerError&) {
      throw;
    } catch (const Error& e) {
      std::string where = "step " + std::to_string(step);
      if (tile >= 0) where += ", tile " + std::to_string(tile);
      std::throw_with_nested(SamplerError(e.kind(), where + ": " + e.what(), step, tile));
    }
  }

  template <typename Fn>
  static void run_workers(std::size_t workers, std::size_t n,
                          std::vector<std::exception_ptr>& errors, Fn&& fn) {
    std::vector<std::thread> threads;
    for (std::size_t w = 0; w < workers; ++w) {
      threads.emplace_back([&, w] {
        try {
          for (std::size_t k = w; k < n; k += workers) fn(k);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& th : threads) th.join();
  }

  static void rethrow_first(const std::vector<std::exception_ptr>& errors) {
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  SamplerConfig cfg_;
  Denoiser& denoiser_;
  const LatentTensor* prior_;
  const ActivityMap* activity_;
  std::vector<std::shared_ptr<const WeightMap>> weights_;
};

// Convenience wrapper: full run of cfg from initial_noise.
inline TiledSampler::Result run(const SamplerConfig& cfg, const LatentTensor& initial_noise,
                                const LatentTensor* prior, Denoiser& denoiser,
                                const ActivityMap* activity = nullptr) {
  return TiledSampler(cfg, denoiser, prior, activity).run(initial_noise);
}

}  // namespace fresco
