#pragma once

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fresco/denoiser.hpp"
#include "fresco/error.hpp"
#include "fresco/sampler.hpp"
#include "fresco/schedules.hpp"
#include "fresco/tensor.hpp"

namespace fresco {

inline constexpr const char* kVersion = "0.1.0";

// Everything needed to reproduce one `sample` run. Serialized as an INI file
// with one section per concern; unknown keys are rejected.
struct RunConfig {
  // [run]
  std::uint64_t seed = 0;
  std::uint32_t steps = 6;
  SamplerMode mode = SamplerMode::fd;
  Prediction prediction = Prediction::flow;
  std::vector<double> sigmas;  // empty: linear schedule
  bool strict = true;
  std::uint32_t workers = 1;
  std::string conditioning;

  // [canvas] pixel size, snapped to multiples of 16 before conversion.
  std::uint32_t height = 480;
  std::uint32_t width = 832;
  std::uint32_t channels = 16;
  std::uint32_t frames = 21;
  std::uint32_t factor = kLatentFactor;

  // [tiles] pixel window and overlap fraction.
  std::uint32_t window_height = 480;
  std::uint32_t window_width = 832;
  double overlap = 0.3;

  // [blend]
  float w_min = kDefaultMinWeight;
  std::optional<std::uint32_t> ramp_h;
  std::optional<std::uint32_t> ramp_w;

  // [prior]
  PriorScheduleConfig prior;
  std::string activity_map;
  std::string prior_latent;  // precomputed low-resolution prior; empty runs the prior stage
  std::uint32_t prior_steps = 0;  // 0: same as steps

  // [denoiser]
  std::string denoiser = "gaussian";  // gaussian | target | external
  double mean = 0.0;
  double stddev = 1.0;
  std::string target;
  std::string command;
  double timeout_s = 300.0;

  // [output]
  std::string out_latent = "out.flt";
  std::string out_trace;
  std::string out_manifest;
  std::string out_prior;

  std::uint32_t canvas_h() const { return snap_dim(height) / factor; }
  std::uint32_t canvas_w() const { return snap_dim(width) / factor; }
  Shape canvas_shape() const { return Shape{channels, frames, canvas_h(), canvas_w()}; }

  void validate() const {
    if (steps < 2) throw ConfigError("run.steps must be at least 2");
    if (!sigmas.empty() && sigmas.size() != steps) {
      throw ConfigError("run.sigmas must list exactly run.steps values");
    }
    if (channels == 0 || frames == 0) throw ConfigError("canvas channels and frames must be positive");
    if (height == 0 || width == 0) throw ConfigError("canvas size must be positive");
    if (factor == 0 || factor > kPixelAlignment || kPixelAlignment % factor != 0) {
      throw ConfigError("canvas.factor must divide 16");
    }
    if (window_height == 0 || window_width == 0) throw ConfigError("tile window must be positive");
    if (!(overlap >= 0.0 && overlap < 1.0)) throw ConfigError("tiles.overlap must lie in [0, 1)");
    if (!(w_min > 0.0f && w_min <= 1.0f)) throw ConfigError("blend.w_min must lie in (0, 1]");
    prior.validate();
    if (mode == SamplerMode::fd_regional) {
      if (prior.mode != PriorMode::regional) {
        throw ConfigError("mode fd_regional requires prior.schedule = regional");
      }
      if (activity_map.empty()) throw ConfigError("mode fd_regional requires prior.activity_map");
    } else if (mode == SamplerMode::fd && prior.mode == PriorMode::regional) {
      throw ConfigError("prior.schedule = regional requires mode fd_regional");
    }
    if (denoiser == "target") {
      if (target.empty()) throw ConfigError("target denoiser requires denoiser.target");
    } else if (denoiser == "external") {
      if (command.empty()) throw ConfigError("external denoiser requires denoiser.command");
    } else if (denoiser == "gaussian") {
      if (!(stddev >= 0.0)) throw ConfigError("denoiser.stddev must be nonnegative");
    } else {
      throw ConfigError("unknown denoiser '" + denoiser + "'");
    }
    if (!(timeout_s > 0.0)) throw ConfigError("denoiser.timeout_s must be positive");
    if (out_latent.empty()) throw ConfigError("output.latent is required");
  }

  SigmaSchedule schedule(std::uint32_t n) const {
    if (!sigmas.empty() && n == steps) return SigmaSchedule::from_sigmas(sigmas);
    return SigmaSchedule::linear(n);
  }
};

namespace detail {

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* b = text.data();
  const char* e = b + text.size();
  auto [p, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || p != e) throw ConfigError("bad value for " + key + ": '" + text + "'");
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError("bad boolean for " + key + ": '" + text + "'");
}

inline std::vector<double> parse_list(const std::string& key, const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b == std::string::npos) continue;
    out.push_back(parse_number<double>(key, item.substr(b, e - b + 1)));
  }
  return out;
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace detail

// Applies one "section.key = value" setting. Used by the file loader and by
// command-line overrides.
inline void apply_setting(RunConfig& c, const std::string& key, const std::string& value) {
  using detail::parse_bool;
  using detail::parse_number;
  auto u32 = [&] { return parse_number<std::uint32_t>(key, value); };
  auto f64 = [&] { return parse_number<double>(key, value); };

  if (key == "run.seed") c.seed = parse_number<std::uint64_t>(key, value);
  else if (key == "run.steps") c.steps = u32();
  else if (key == "run.mode") c.mode = parse_sampler_mode(value);
  else if (key == "run.prediction") c.prediction = parse_prediction(value);
  else if (key == "run.sigmas") c.sigmas = detail::parse_list(key, value);
  else if (key == "run.strict") c.strict = parse_bool(key, value);
  else if (key == "run.workers") c.workers = u32();
  else if (key == "run.conditioning") c.conditioning = value;
  else if (key == "canvas.height") c.height = u32();
  else if (key == "canvas.width") c.width = u32();
  else if (key == "canvas.channels") c.channels = u32();
  else if (key == "canvas.frames") c.frames = u32();
  else if (key == "canvas.factor") c.factor = u32();
  else if (key == "tiles.window_height") c.window_height = u32();
  else if (key == "tiles.window_width") c.window_width = u32();
  else if (key == "tiles.overlap") c.overlap = f64();
  else if (key == "blend.w_min") c.w_min = float(f64());
  else if (key == "blend.ramp_h") c.ramp_h = u32();
  else if (key == "blend.ramp_w") c.ramp_w = u32();
  else if (key == "prior.lambda_base") c.prior.lambda_base = f64();
  else if (key == "prior.schedule") c.prior.mode = parse_prior_mode(value);
  else if (key == "prior.tau") c.prior.tau = f64();
  else if (key == "prior.tau_act") c.prior.tau_act = f64();
  else if (key == "prior.tau_bg") c.prior.tau_bg = f64();
  else if (key == "prior.activity_map") c.activity_map = value;
  else if (key == "prior.latent") c.prior_latent = value;
  else if (key == "prior.steps") c.prior_steps = u32();
  else if (key == "denoiser.kind") c.denoiser = value;
  else if (key == "denoiser.mean") c.mean = f64();
  else if (key == "denoiser.stddev") c.stddev = f64();
  else if (key == "denoiser.target") c.target = value;
  else if (key == "denoiser.command") c.command = value;
  else if (key == "denoiser.timeout_s") c.timeout_s = f64();
  else if (key == "output.latent") c.out_latent = value;
  else if (key == "output.trace") c.out_trace = value;
  else if (key == "output.manifest") c.out_manifest = value;
  else if (key == "output.prior") c.out_prior = value;
  else throw ConfigError("unknown setting '" + key + "'");
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(path.string(), tree);
  } catch (const pt::ini_parser_error& e) {
    if (!std::filesystem::exists(path)) throw IoError("cannot open config " + path.string());
    throw ConfigError(e.what());
  }
  RunConfig c;
  for (const auto& [section, body] : tree) {
    // Run bookkeeping written alongside a manifest; not part of the config.
    if (section == "manifest") continue;
    if (body.empty()) throw ConfigError("config keys must live in a section: '" + section + "'");
    for (const auto& [key, value] : body) apply_setting(c, section + "." + key, value.data());
  }
  return c;
}

// Canonical serialization; load_run_config(save) reproduces the config.
inline std::string serialize_run_config(const RunConfig& c) {
  using detail::format_double;
  std::ostringstream os;
  os << "[run]\n"
     << "seed = " << c.seed << "\n"
     << "steps = " << c.steps << "\n"
     << "mode = " << to_string(c.mode) << "\n"
     << "prediction = " << to_string(c.prediction) << "\n";
  if (!c.sigmas.empty()) {
    os << "sigmas = ";
    for (std::size_t k = 0; k < c.sigmas.size(); ++k) {
      os << (k ? ", " : "") << format_double(c.sigmas[k]);
    }
    os << "\n";
  }
  os << "strict = " << (c.strict ? "true" : "false") << "\n"
     << "workers = " << c.workers << "\n";
  if (!c.conditioning.empty()) os << "conditioning = " << c.conditioning << "\n";
  os << "\n[canvas]\n"
     << "height = " << c.height << "\n"
     << "width = " << c.width << "\n"
     << "channels = " << c.channels << "\n"
     << "frames = " << c.frames << "\n"
     << "factor = " << c.factor << "\n"
     << "\n[tiles]\n"
     << "window_height = " << c.window_height << "\n"
     << "window_width = " << c.window_width << "\n"
     << "overlap = " << format_double(c.overlap) << "\n"
     << "\n[blend]\n"
     << "w_min = " << format_double(c.w_min) << "\n";
  if (c.ramp_h) os << "ramp_h = " << *c.ramp_h << "\n";
  if (c.ramp_w) os << "ramp_w = " << *c.ramp_w << "\n";
  os << "\n[prior]\n"
     << "lambda_base = " << format_double(c.prior.lambda_base) << "\n"
     << "schedule = " << to_string(c.prior.mode) << "\n"
     << "tau = " << format_double(c.prior.tau) << "\n"
     << "tau_act = " << format_double(c.prior.tau_act) << "\n"
     << "tau_bg = " << format_double(c.prior.tau_bg) << "\n";
  if (!c.activity_map.empty()) os << "activity_map = " << c.activity_map << "\n";
  if (!c.prior_latent.empty()) os << "latent = " << c.prior_latent << "\n";
  if (c.prior_steps) os << "steps = " << c.prior_steps << "\n";
  os << "\n[denoiser]\n"
     << "kind = " << c.denoiser << "\n"
     << "mean = " << format_double(c.mean) << "\n"
     << "stddev = " << format_double(c.stddev) << "\n";
  if (!c.target.empty()) os << "target = " << c.target << "\n";
  if (!c.command.empty()) os << "command = " << c.command << "\n";
  os << "timeout_s = " << format_double(c.timeout_s) << "\n"
     << "\n[output]\n"
     << "latent = " << c.out_latent << "\n";
  if (!c.out_trace.empty()) os << "trace = " << c.out_trace << "\n";
  if (!c.out_manifest.empty()) os << "manifest = " << c.out_manifest << "\n";
  if (!c.out_prior.empty()) os << "prior = " << c.out_prior << "\n";
  return os.str();
}

}  // namespace fresco
