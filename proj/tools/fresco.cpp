// fresco: command-line front end for tiled prior-regularized sampling.
//
//   fresco plan    --canvas 3840x2160 --window 480x832 --overlap 0.3
//   fresco sample  --config run.ini [--set section.key=value ...]
//   fresco metrics --video frames/ [--prior-video prior/] [--out report.tsv]
//   fresco sweep   --config run.ini --lambda-base 0,0.5,1.5,5 --tau 0.1,1
//
// Exit codes: 0 ok, 2 usage, 3 config, 4 I/O, 5 compute.

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fresco/config.hpp"
#include "fresco/metrics.hpp"
#include "fresco/pipeline.hpp"
#include "fresco/tile_planner.hpp"

namespace {

using namespace fresco;

enum ExitCode { kOk = 0, kUsage = 2, kConfig = 3, kIo = 4, kCompute = 5 };

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::argument: return kUsage;
    case ErrorKind::config: return kConfig;
    case ErrorKind::io:
    case ErrorKind::format: return kIo;
    default: return kCompute;
  }
}

struct Dims {
  std::uint32_t h = 0;
  std::uint32_t w = 0;
};

Dims parse_dims(const std::string& text, const char* what) {
  const auto x = text.find('x');
  if (x == std::string::npos) throw ArgumentError(std::string(what) + " must look like HxW");
  try {
    std::size_t used = 0;
    const unsigned long h = std::stoul(text.substr(0, x), &used);
    if (used != x) throw std::invalid_argument(text);
    const unsigned long w = std::stoul(text.substr(x + 1), &used);
    if (used != text.size() - x - 1) throw std::invalid_argument(text);
    if (h == 0 || w == 0 || h > UINT32_MAX || w > UINT32_MAX) throw std::out_of_range(text);
    return {std::uint32_t(h), std::uint32_t(w)};
  } catch (const std::logic_error&) {
    throw ArgumentError(std::string("bad ") + what + " '" + text + "'");
  }
}

std::vector<double> parse_grid(const std::string& text, const char* what) {
  try {
    auto v = detail::parse_list(what, text);
    if (v.empty()) throw ArgumentError(std::string(what) + " grid is empty");
    return v;
  } catch (const ConfigError& e) {
    throw ArgumentError(e.what());
  }
}

std::uint32_t capped_workers(std::uint32_t requested) {
  if (const char* env = std::getenv("FRESCO_MAX_WORKERS")) {
    char* end = nullptr;
    const unsigned long cap = std::strtoul(env, &end, 10);
    if (end != env && *end == '\0' && cap > 0) {
      return std::min<std::uint32_t>(requested, std::uint32_t(cap));
    }
  }
  return requested;
}

// ---------------------------------------------------------------------------
// plan

struct PlanArgs {
  std::string canvas;
  std::string latent_canvas;
  std::string window = "480x832";
  double overlap = 0.3;
  std::uint32_t factor = kLatentFactor;
  bool machine = false;
};

int cmd_plan(const PlanArgs& a) {
  if (!(a.overlap >= 0.0 && a.overlap < 1.0)) {
    throw ArgumentError("--overlap must lie in [0, 1)");
  }
  if (a.factor == 0) throw ArgumentError("--factor must be positive");
  Dims canvas;
  if (!a.latent_canvas.empty()) {
    canvas = parse_dims(a.latent_canvas, "--latent-canvas");
  } else if (!a.canvas.empty()) {
    const Dims px = parse_dims(a.canvas, "--canvas");
    canvas = {snap_dim(px.h) / a.factor, snap_dim(px.w) / a.factor};
  } else {
    throw ArgumentError("one of --canvas or --latent-canvas is required");
  }
  const Dims window = parse_dims(a.window, "--window");
  const TilePlan plan =
      plan_tiles_from_pixels(canvas.h, canvas.w, window.h, window.w, a.overlap, a.factor);

  if (a.machine) {
    for (const Rect& r : plan.tiles) {
      std::cout << r.row << ' ' << r.col << ' ' << r.height << ' ' << r.width << '\n';
    }
    return kOk;
  }
  const auto cov = plan.coverage();
  std::uint32_t lo = UINT32_MAX;
  std::uint32_t hi = 0;
  double sum = 0.0;
  for (std::uint32_t v : cov) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
    sum += v;
  }
  std::cout << "canvas (latent)   " << plan.canvas_h << " x " << plan.canvas_w << '\n'
            << "window (latent)   " << plan.window_h << " x " << plan.window_w << '\n'
            << "stride (latent)   " << plan.stride_h << " x " << plan.stride_w << '\n'
            << "tiles             " << plan.tiles.size() << '\n'
            << "coverage min/max  " << lo << " / " << hi << '\n'
            << "coverage mean     " << std::fixed << std::setprecision(3)
            << sum / double(cov.size()) << '\n'
            << '\n'
            << std::setw(6) << "tile" << std::setw(8) << "row" << std::setw(8) << "col"
            << std::setw(8) << "height" << std::setw(8) << "width" << '\n';
  for (std::size_t k = 0; k < plan.tiles.size(); ++k) {
    const Rect& r = plan.tiles[k];
    std::cout << std::setw(6) << k << std::setw(8) << r.row << std::setw(8) << r.col
              << std::setw(8) << r.height << std::setw(8) << r.width << '\n';
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// sample

struct SampleArgs {
  std::string config;
  std::vector<std::string> settings;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
  std::optional<double> lambda_base;
  std::optional<double> tau;
  std::optional<std::string> out;
  std::optional<std::string> trace;
  std::optional<std::string> manifest;
  std::optional<std::uint32_t> workers;
};

RunConfig resolve_config(const SampleArgs& a) {
  RunConfig c = load_run_config(a.config);
  for (const auto& s : a.settings) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ArgumentError("--set expects section.key=value, got '" + s + "'");
    apply_setting(c, s.substr(0, eq), s.substr(eq + 1));
  }
  if (a.seed) c.seed = *a.seed;
  if (a.mode) c.mode = parse_sampler_mode(*a.mode);
  if (a.lambda_base) c.prior.lambda_base = *a.lambda_base;
  if (a.tau) c.prior.tau = *a.tau;
  if (a.out) c.out_latent = *a.out;
  if (a.trace) c.out_trace = *a.trace;
  if (a.manifest) c.out_manifest = *a.manifest;
  if (a.workers) c.workers = *a.workers;
  c.workers = capped_workers(c.workers);
  c.validate();
  return c;
}

int cmd_sample(const SampleArgs& a) {
  const RunConfig c = resolve_config(a);
  const PipelineInputs in = load_pipeline_inputs(c);
  const PipelineResult r = run_pipeline(c, in);
  write_pipeline_outputs(c, r);
  std::cerr << "wrote " << c.out_latent << " (" << r.x_final.shape().str() << ")\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// metrics / sweep

std::unique_ptr<metrics::Embedder> make_embedder(const std::string& which) {
  if (which.empty() || which == "builtin") return std::make_unique<metrics::ThumbnailEmbedder>();
  return std::make_unique<metrics::ExternalEmbedder>(which);
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(9) << v;
  return os.str();
}

void emit(const std::string& out, const std::string& text) {
  if (out.empty()) {
    std::cout << text;
  } else {
    write_text_atomic(out, text);
  }
}

struct SweepArgs {
  std::string config;
  std::string lambda_grid = "0,0.5,1.5,5";
  std::string tau_grid = "1";
  std::string embedder;
  std::string out;
  std::vector<std::string> settings;
};

int cmd_sweep(const SweepArgs& a) {
  SampleArgs sa;
  sa.config = a.config;
  sa.settings = a.settings;
  RunConfig base = resolve_config(sa);
  const auto lambdas = parse_grid(a.lambda_grid, "--lambda-base");
  const auto taus = parse_grid(a.tau_grid, "--tau");
  PipelineInputs in = load_pipeline_inputs(base);
  auto embedder = make_embedder(a.embedder);

  std::ostringstream table;
  table << "lambda_base\ttau\ttenengrad\ttemporal_consistency\tprior_alignment\tprior_distance\n";
  for (double tau : taus) {
    for (double lambda : lambdas) {
      RunConfig c = base;
      c.prior.lambda_base = lambda;
      c.prior.tau = tau;
      c.validate();
      const PipelineResult r = run_pipeline(c, in);
      // Every grid point shares the prior stage.
      if (!in.prior_low) in.prior_low = r.prior_low;
      const auto gen = metrics::video_from_tensor(r.x_final);
      const auto pri = metrics::video_from_tensor(r.prior_canvas);
      double dist = 0.0;
      for (std::size_t k = 0; k < r.x_final.size(); ++k) {
        const double d = double(r.x_final.data()[k]) - r.prior_canvas.data()[k];
        dist += d * d;
      }
      table << fmt(lambda) << '\t' << fmt(tau) << '\t' << fmt(metrics::tenengrad(gen)) << '\t'
            << (gen.size() >= 2 ? fmt(metrics::temporal_consistency(gen)) : "NA") << '\t'
            << fmt(metrics::prior_alignment(gen, pri, *embedder)) << '\t' << fmt(std::sqrt(dist))
            << '\n';
    }
  }
  emit(a.out, table.str());
  return kOk;
}

struct MetricsArgs {
  std::vector<std::string> videos;
  std::vector<std::string> latents;
  std::vector<std::string> prior_videos;
  std::vector<std::string> prior_latents;
  std::string embedder;
  double tc_divisor = 64.0 * 64.0;
  std::string border = "replicate";
  std::string out;
  SweepArgs sweep;
};

int cmd_metrics(const MetricsArgs& a) {
  if (!a.sweep.config.empty()) return cmd_sweep(a.sweep);

  std::vector<std::pair<std::string, metrics::Video>> videos;
  for (const auto& d : a.videos) videos.emplace_back(d, metrics::read_video_dir(d));
  for (const auto& f : a.latents) videos.emplace_back(f, metrics::video_from_tensor(flt1::read(f)));
  if (videos.empty()) throw ArgumentError("no inputs: pass --video or --latent");

  std::vector<metrics::Video> priors;
  for (const auto& d : a.prior_videos) priors.push_back(metrics::read_video_dir(d));
  for (const auto& f : a.prior_latents) priors.push_back(metrics::video_from_tensor(flt1::read(f)));
  if (!priors.empty() && priors.size() != videos.size()) {
    throw ArgumentError("pass one prior per video");
  }
  if (a.border != "replicate" && a.border != "valid") {
    throw ArgumentError("--sobel-border must be replicate or valid");
  }
  const auto border =
      a.border == "valid" ? metrics::SobelBorder::valid : metrics::SobelBorder::replicate;
  metrics::TemporalConsistencyOptions tc;
  tc.divisor = a.tc_divisor;
  std::unique_ptr<metrics::Embedder> embedder;
  if (!priors.empty()) embedder = make_embedder(a.embedder);

  std::ostringstream table;
  table << "video\tframes\ttenengrad\ttemporal_consistency\tprior_alignment\n";
  for (std::size_t k = 0; k < videos.size(); ++k) {
    const auto& [name, video] = videos[k];
    table << name << '\t' << video.size() << '\t' << fmt(metrics::tenengrad(video, border)) << '\t'
          << (video.size() >= 2 ? fmt(metrics::temporal_consistency(video, tc)) : "NA") << '\t'
          << (priors.empty() ? "NA" : fmt(metrics::prior_alignment(video, priors[k], *embedder)))
          << '\n';
  }
  emit(a.out, table.str());
  return kOk;
}

void print_error(const std::exception& e, int depth = 0) {
  std::cerr << (depth == 0 ? "error: " : "  caused by: ") << e.what() << '\n';
  try {
    std::rethrow_if_nested(e);
  } catch (const std::exception& inner) {
    print_error(inner, depth + 1);
  } catch (...) {
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tiled prior-regularized diffusion sampling on large latent canvases"};
  app.set_version_flag("--version", std::string(fresco::kVersion));
  app.require_subcommand(1);

  PlanArgs plan;
  auto* plan_cmd = app.add_subcommand("plan", "Print the tile plan for a canvas");
  plan_cmd->add_option("--canvas", plan.canvas, "Canvas size in pixels, HxW");
  plan_cmd->add_option("--latent-canvas", plan.latent_canvas, "Canvas size in latent cells, HxW");
  plan_cmd->add_option("--window", plan.window, "Window size in pixels, HxW")->capture_default_str();
  plan_cmd->add_option("--overlap", plan.overlap, "Overlap fraction in [0, 1)")->capture_default_str();
  plan_cmd->add_option("--factor", plan.factor, "Pixels per latent cell")->capture_default_str();
  plan_cmd->add_flag("--machine", plan.machine, "Print one 'row col height width' line per tile");

  SampleArgs sample;
  auto* sample_cmd = app.add_subcommand("sample", "Run the prior and tiled sampling stages");
  sample_cmd->add_option("--config", sample.config, "Run configuration (INI)")->required();
  sample_cmd->add_option("--set", sample.settings, "Override, section.key=value");
  sample_cmd->add_option("--seed", sample.seed);
  sample_cmd->add_option("--mode", sample.mode, "md | fd | fd_regional");
  sample_cmd->add_option("--lambda-base", sample.lambda_base);
  sample_cmd->add_option("--tau", sample.tau);
  sample_cmd->add_option("--workers", sample.workers);
  sample_cmd->add_option("--out", sample.out, "Output FLT1 latent");
  sample_cmd->add_option("--trace", sample.trace, "Output trace TSV");
  sample_cmd->add_option("--manifest", sample.manifest, "Output run manifest");

  MetricsArgs met;
  auto* metrics_cmd = app.add_subcommand("metrics", "Sharpness, temporal consistency, alignment");
  metrics_cmd->add_option("--video", met.videos, "Directory of frames (ppm/pgm/flt)");
  metrics_cmd->add_option("--latent", met.latents, "FLT1 tensor read as a video");
  metrics_cmd->add_option("--prior-video", met.prior_videos, "Prior frames, one per --video");
  metrics_cmd->add_option("--prior-latent", met.prior_latents, "Prior tensor, one per --latent");
  metrics_cmd->add_option("--embedder", met.embedder, "builtin, or a worker command line");
  metrics_cmd->add_option("--tc-divisor", met.tc_divisor, "Temporal consistency normaliser")
      ->capture_default_str();
  metrics_cmd->add_option("--sobel-border", met.border, "replicate | valid")->capture_default_str();
  metrics_cmd->add_option("--out", met.out, "Report TSV (stdout if omitted)");
  metrics_cmd->add_option("--sweep-config", met.sweep.config, "Run a lambda/tau sweep instead");
  metrics_cmd->add_option("--lambda-base", met.sweep.lambda_grid, "Sweep grid for lambda_base");
  metrics_cmd->add_option("--tau", met.sweep.tau_grid, "Sweep grid for tau");

  SweepArgs sweep;
  auto* sweep_cmd = app.add_subcommand("sweep", "Tabulate metrics over a lambda_base x tau grid");
  sweep_cmd->add_option("--config", sweep.config, "Base run configuration")->required();
  sweep_cmd->add_option("--set", sweep.settings, "Override, section.key=value");
  sweep_cmd->add_option("--lambda-base", sweep.lambda_grid, "Comma-separated grid")
      ->capture_default_str();
  sweep_cmd->add_option("--tau", sweep.tau_grid, "Comma-separated grid")->capture_default_str();
  sweep_cmd->add_option("--embedder", sweep.embedder, "builtin, or a worker command line");
  sweep_cmd->add_option("--out", sweep.out, "Table TSV (stdout if omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*plan_cmd) return cmd_plan(plan);
    if (*sample_cmd) return cmd_sample(sample);
    if (*metrics_cmd) {
      met.sweep.out = met.out;
      met.sweep.embedder = met.embedder;
      return cmd_metrics(met);
    }
    if (*sweep_cmd) return cmd_sweep(sweep);
  } catch (const fresco::Error& e) {
    print_error(e);
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    print_error(e);
    return kCompute;
  }
  return kUsage;
}
