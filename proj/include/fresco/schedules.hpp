#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "fresco/error.hpp"
#include "fresco/netpbm.hpp"
#include "fresco/prior_strength.hpp"
#include "fresco/tensor.hpp"

namespace fresco {

// Discrete sampler schedule. positions[i] = i / (N - 1) drives the prior
// schedules; sigmas holds N + 1 noise levels with sigmas[N] = 0 as the final
// integration target. A step whose sigma equals the next one is a no-op.
class SigmaSchedule {
 public:
  // Linear rectified-flow schedule: sigma_i = 1 - i / (N - 1).
  static SigmaSchedule linear(std::uint32_t steps) {
    if (steps < 2) throw ConfigError("sigma schedule needs at least 2 steps");
    std::vector<double> s(steps);
    for (std::uint32_t i = 0; i < steps; ++i) s[i] = 1.0 - double(i) / double(steps - 1);
    s.back() = 0.0;
    return from_sigmas(std::move(s));
  }

  // sigmas lists one level per step; a trailing zero target is appended.
  static SigmaSchedule from_sigmas(std::vector<double> sigmas) {
    const std::size_t n = sigmas.size();
    if (n < 2) throw ConfigError("sigma schedule needs at least 2 steps");
    if (!(sigmas[0] > 0.0 && sigmas[0] <= 1.0)) {
      throw ConfigError("sigma schedule must start in (0, 1]");
    }
    for (std::size_t i = 1; i < n; ++i) {
      const bool last = i + 1 == n;
      if (!std::isfinite(sigmas[i]) || sigmas[i] < 0.0) {
        throw ConfigError("sigma schedule entries must be finite and nonnegative");
      }
      if (!(sigmas[i] < sigmas[i - 1])) {
        throw ConfigError("sigma schedule must be strictly decreasing");
      }
      if (sigmas[i] == 0.0 && !last) throw ConfigError("sigma may only reach 0 at the last step");
    }
    SigmaSchedule s;
    s.sigmas_ = std::move(sigmas);
    s.sigmas_.push_back(0.0);
    s.positions_.resize(n);
    for (std::size_t i = 0; i < n; ++i) s.positions_[i] = double(i) / double(n - 1);
    return s;
  }

  std::uint32_t steps() const noexcept { return std::uint32_t(positions_.size()); }
  double position(std::uint32_t i) const { return positions_.at(i); }
  double sigma(std::uint32_t i) const { return sigmas_.at(i); }
  const std::vector<double>& sigmas() const noexcept { return sigmas_; }
  const std::vector<double>& positions() const noexcept { return positions_; }

 private:
  std::vector<double> positions_;
  std::vector<double> sigmas_;
};

// cos(t * pi / 2), written so t = 1 lands exactly on 0.
inline double cos_quarter_turn(double t) {
  return std::sin((1.0 - t) * std::numbers::pi / 2.0);
}

// Global gated cosine schedule: lambda_base * cos(t pi / 2) * [t <= tau].
inline double lambda_global(double t, double tau, double lambda_base) {
  if (t > tau) return 0.0;
  return lambda_base * cos_quarter_turn(t);
}

enum class PriorMode { constant, cosine, gated_cosine, regional };

inline std::string to_string(PriorMode m) {
  switch (m) {
    case PriorMode::constant: return "constant";
    case PriorMode::cosine: return "cosine";
    case PriorMode::gated_cosine: return "gated_cosine";
    case PriorMode::regional: return "regional";
  }
  return "?";
}

inline PriorMode parse_prior_mode(const std::string& s) {
  if (s == "constant") return PriorMode::constant;
  if (s == "cosine") return PriorMode::cosine;
  if (s == "gated_cosine") return PriorMode::gated_cosine;
  if (s == "regional") return PriorMode::regional;
  throw ConfigError("unknown prior schedule '" + s + "'");
}

// Binary spatial map at latent resolution: 1 marks regions expected to move.
class ActivityMap {
 public:
  ActivityMap() = default;
  ActivityMap(std::uint32_t height, std::uint32_t width, std::vector<std::uint8_t> active)
      : height_(height), width_(width), active_(std::move(active)) {
    if (active_.size() != std::size_t(height_) * width_) {
      throw ShapeError("activity map size does not match its dims");
    }
  }

  static ActivityMap filled(std::uint32_t height, std::uint32_t width, bool active) {
    return ActivityMap(height, width,
                       std::vector<std::uint8_t>(std::size_t(height) * width, active ? 1 : 0));
  }

  std::uint32_t height() const noexcept { return height_; }
  std::uint32_t width() const noexcept { return width_; }
  bool active(std::uint32_t i, std::uint32_t j) const noexcept {
    return active_[std::size_t(i) * width_ + j] != 0;
  }
  bool active(std::size_t plane_offset) const noexcept { return active_[plane_offset] != 0; }
  const std::vector<std::uint8_t>& cells() const noexcept { return active_; }

 private:
  std::uint32_t height_ = 0;
  std::uint32_t width_ = 0;
  std::vector<std::uint8_t> active_;
};

struct PriorScheduleConfig {
  double lambda_base = 1.5;
  PriorMode mode = PriorMode::gated_cosine;
  double tau = 0.1;
  double tau_act = 0.1;
  double tau_bg = 0.35;

  void validate() const {
    if (!(lambda_base >= 0.0) || !std::isfinite(lambda_base)) {
      throw ConfigError("lambda_base must be finite and nonnegative");
    }
    if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("tau must lie in [0, 1]");
    if (mode == PriorMode::regional) {
      if (!(tau_act >= 0.0 && tau_act <= 1.0 && tau_bg >= 0.0 && tau_bg <= 1.0)) {
        throw ConfigError("tau_act and tau_bg must lie in [0, 1]");
      }
      if (tau_act > tau_bg) throw ConfigError("tau_act must not exceed tau_bg");
    }
  }
};

// Regional schedule at one cell: foreground cells use tau_act, background tau_bg.
inline double lambda_regional(double t, bool active, const PriorScheduleConfig& cfg) {
  return lambda_global(t, active ? cfg.tau_act : cfg.tau_bg, cfg.lambda_base);
}

// Scalar lambda for the non-regional modes.
inline double lambda_scalar(double t, const PriorScheduleConfig& cfg) {
  switch (cfg.mode) {
    case PriorMode::constant: return cfg.lambda_base;
    case PriorMode::cosine: return cfg.lambda_base * cos_quarter_turn(t);
    case PriorMode::gated_cosine: return lambda_global(t, cfg.tau, cfg.lambda_base);
    case PriorMode::regional: break;
  }
  throw ConfigError("regional schedule has no scalar value");
}

// Lambda at normalized step position t, materialized for fusion. Regional mode
// yields a spatial plane and requires an activity map.
inline PriorStrength prior_strength_at(double t, const PriorScheduleConfig& cfg,
                                       const ActivityMap* activity) {
  if (cfg.mode != PriorMode::regional) return PriorStrength(lambda_scalar(t, cfg));
  if (activity == nullptr) throw ConfigError("regional prior schedule requires an activity map");
  const float fg = float(lambda_regional(t, true, cfg));
  const float bg = float(lambda_regional(t, false, cfg));
  if (fg == bg) return PriorStrength(double(fg));
  std::vector<float> plane(activity->cells().size());
  for (std::size_t k = 0; k < plane.size(); ++k) plane[k] = activity->active(k) ? fg : bg;
  return PriorStrength::spatial(activity->height(), activity->width(), std::move(plane));
}

// Clamp to [0, 1], resize to (target_h, target_w), binarize with A > 0.
inline ActivityMap activity_from_values(const LatentTensor& raw, std::uint32_t target_h,
                                        std::uint32_t target_w) {
  const Shape& s = raw.shape();
  if (s.c != 1 || s.t != 1) {
    throw FormatError("activity map must be a single 2-D plane, got " + s.str());
  }
  LatentTensor clamped = raw;
  for (float& v : clamped.data()) v = std::isfinite(v) ? std::clamp(v, 0.0f, 1.0f) : 0.0f;
  const LatentTensor resized = trilinear_resize(clamped, 1, target_h, target_w);
  std::vector<std::uint8_t> cells(resized.size());
  for (std::size_t k = 0; k < cells.size(); ++k) cells[k] = resized.data()[k] > 0.0f ? 1 : 0;
  return ActivityMap(target_h, target_w, std::move(cells));
}

// Reads an activity map from an 8-bit/16-bit PGM (P5) or single-plane FLT1 file.
inline ActivityMap load_activity_map(const std::filesystem::path& path, std::uint32_t target_h,
                                     std::uint32_t target_w) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open activity map " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (bytes.size() >= 4 && std::memcmp(bytes.data(), flt1::kMagic, 4) == 0) {
    std::size_t used = 0;
    const LatentTensor raw = flt1::decode(bytes, &used);
    if (used != bytes.size()) throw FormatError("FLT1: trailing bytes in " + path.string());
    return activity_from_values(raw, target_h, target_w);
  }
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '5') {
    const netpbm::Image img = netpbm::decode(bytes);
    std::vector<float> v(img.samples.size());
    for (std::size_t k = 0; k < v.size(); ++k) v[k] = float(img.samples[k]) / float(img.maxval);
    return activity_from_values(LatentTensor(Shape{1, 1, img.height, img.width}, std::move(v)),
                                target_h, target_w);
  }
  throw FormatError("activity map " + path.string() + " is neither P5 PGM nor FLT1");
}

}  // namespace fresco
