// Acceptance checks, one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria.

#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

#include "fresco/fresco.hpp"
#include "oracles.hpp"

using namespace fresco;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const std::function<Outcome()>& check) {
  const auto t0 = Clock::now();
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double s = std::chrono::duration<double>(Clock::now() - t0).count();
  if (!o.pass) ++failures;
  std::ostringstream line;
  line << (o.pass ? "PASS" : "FAIL") << "  criterion " << id << "  " << name << "  [" << o.detail
       << "; " << std::fixed;
  line.precision(2);
  line << s << " s]";
  std::cout << line.str() << std::endl;
}

std::string num(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

LatentTensor smooth(const Shape& s, double phase) {
  LatentTensor x(s);
  for (std::uint32_t c = 0; c < s.c; ++c)
    for (std::uint32_t t = 0; t < s.t; ++t)
      for (std::uint32_t i = 0; i < s.h; ++i)
        for (std::uint32_t j = 0; j < s.w; ++j)
          x(c, t, i, j) = float(std::sin(0.11 * i + 0.07 * j + phase + 0.5 * c) + 0.2 * t);
  return x;
}

// Instance set shared by criteria 1 and 2.
std::vector<oracle::FusionInstance> fusion_instances() {
  std::mt19937_64 rng(20260101);
  std::vector<oracle::FusionInstance> out;
  for (int k = 0; k < 1200; ++k) {
    const double sigmas[] = {0.2, 0.5, 1.0};
    out.push_back(oracle::random_instance(rng, sigmas[k % 3]));
  }
  return out;
}

// Signal levels for the epsilon closed form, paired with the flow sigmas.
double alpha_for(double sigma) { return 1.0 / (1.0 + sigma * sigma); }

Outcome criterion1(const std::vector<oracle::FusionInstance>& set) {
  const auto t0 = Clock::now();
  double worst_flow = 0.0;
  double worst_eps = 0.0;
  int spatial = 0;
  for (const auto& in : set) {
    const auto acc = oracle::accumulate(in);
    const auto lam = oracle::strength(in);
    worst_flow = std::max(worst_flow, oracle::max_rel_error(
                                          fuse_fd_flow(acc, in.x_t, in.x_prior, lam, in.sigma),
                                          oracle::fd_flow(in)));
    const double alpha = alpha_for(in.sigma);
    worst_eps = std::max(worst_eps, oracle::max_rel_error(
                                        fuse_fd_eps(acc, in.x_t, in.x_prior, lam, alpha),
                                        oracle::fd_eps(in, alpha)));
    spatial += in.spatial;
  }
  const double secs = seconds_since(t0);
  return {worst_flow <= 1e-5 && worst_eps <= 1e-5 && secs <= 30.0,
          std::to_string(set.size()) + " instances (" + std::to_string(spatial) +
              " spatial lambda), max rel err flow " + num(worst_flow) + ", eps " + num(worst_eps) +
              ", limit 1e-5, " + num(secs) + " s of 30"};
}

Outcome criterion2(const std::vector<oracle::FusionInstance>& set) {
  double worst = 0.0;
  for (const auto& in : set) {
    const auto acc = oracle::accumulate(in);
    const auto want = oracle::md(in);
    worst = std::max(worst, oracle::max_abs_error(fuse_fd_flow(acc, in.x_t, in.x_prior, 0.0, in.sigma), want));
    worst = std::max(worst, oracle::max_abs_error(fuse_fd_eps(acc, in.x_t, in.x_prior, 0.0, alpha_for(in.sigma)), want));
  }

  // Full pipeline runs, strict mode, several workers.
  RunConfig c;
  c.seed = 77;
  c.steps = 6;
  c.height = 256;
  c.width = 320;
  c.channels = 4;
  c.frames = 3;
  c.mean = 0.3;
  c.stddev = 0.6;
  c.workers = 4;
  RunConfig md = c;
  md.mode = SamplerMode::md;
  RunConfig fd = c;
  fd.mode = SamplerMode::fd;
  fd.prior.lambda_base = 0.0;
  const auto a = flt1::encode(run_pipeline(md).x_final);
  const auto b = flt1::encode(run_pipeline(fd).x_final);
  const bool same = a == b;
  return {worst <= 1e-6 && same, "max |fd(lambda=0) - weighted mean| " + num(worst) +
                                      " (limit 1e-6); md vs fd(lambda_base=0) full run " +
                                      (same ? "bit-identical" : "DIFFERS")};
}

Outcome criterion3() {
  const Shape canvas{16, 21, 272, 480};
  const auto plan = plan_tiles_from_pixels(canvas.h, canvas.w, 480, 832, 0.3, kLatentFactor);
  const auto cov = oracle::coverage(plan.tiles, canvas.h, canvas.w);
  const auto min_cov = *std::min_element(cov.begin(), cov.end());
  const bool ok = plan.window_h == 60 && plan.window_w == 104 && plan.stride_h == 42 &&
                  plan.stride_w == 72 && min_cov >= 1 && plan.coverage() == cov;
  return {ok, "window " + std::to_string(plan.window_h) + "x" + std::to_string(plan.window_w) +
                  ", stride " + std::to_string(plan.stride_h) + "x" + std::to_string(plan.stride_w) +
                  ", " + std::to_string(plan.tiles.size()) + " tiles, min coverage " +
                  std::to_string(min_cov)};
}

Outcome criterion4() {
  const auto sched = SigmaSchedule::linear(6);
  PriorScheduleConfig g;
  g.lambda_base = 1.5;
  g.tau = 0.1;
  g.mode = PriorMode::gated_cosine;
  bool ok = true;
  std::string global;
  for (std::uint32_t i = 0; i < 6; ++i) {
    const double v = lambda_scalar(sched.position(i), g);
    global += (i ? "," : "") + num(v);
    ok &= i == 0 ? v == 1.5 : v == 0.0;
  }
  PriorScheduleConfig r = g;
  r.mode = PriorMode::regional;
  r.tau_act = 0.1;
  r.tau_bg = 0.35;
  ActivityMap a(1, 2, {1, 0});
  std::string fg_steps, bg_steps;
  for (std::uint32_t i = 0; i < 6; ++i) {
    const auto lam = prior_strength_at(sched.position(i), r, &a);
    const bool fg = lam.at(0, 0) > 0.0;
    const bool bg = lam.at(1, 1) > 0.0;
    if (fg) fg_steps += std::to_string(i);
    if (bg) bg_steps += std::to_string(i);
  }
  ok &= fg_steps == "0" && bg_steps == "01";
  return {ok, "global lambda per step {" + global + "}; foreground active at {" + fg_steps +
                  "}, background at {" + bg_steps + "}"};
}

Outcome criterion5() {
  const auto t0 = Clock::now();
  const Shape s{1, 1, 120, 208};
  SamplerConfig cfg;
  cfg.schedule = SigmaSchedule::linear(50);
  cfg.plan = plan_tiles(s.h, s.w, 60, 104, 0.3);
  cfg.mode = SamplerMode::md;
  cfg.seed = 5;
  GaussianDenoiser d(0.7, 0.3);
  const auto out = run(cfg, gaussian_noise(s, cfg.seed, 0), nullptr, d).x_final;
  double mean = 0.0;
  for (float v : out.data()) mean += v;
  mean /= double(out.size());
  double var = 0.0;
  for (float v : out.data()) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / double(out.size()));
  const double secs = seconds_since(t0);
  const double rel = sd / 0.3 - 1.0;
  const bool ok = std::abs(mean - 0.7) <= 0.015 && std::abs(rel) <= 0.05 && secs <= 60.0;
  return {ok, std::to_string(out.size()) + " cells, " + std::to_string(cfg.plan.tiles.size()) +
                  " tiles: mean " + num(mean) + " (target 0.7 +- 0.015), std " + num(sd) +
                  " (target 0.3, rel err " + num(rel * 100) + "%, limit 5%), " + num(secs) +
                  " s of 60"};
}

SamplerConfig pull_config(const Shape& s, double lambda_base) {
  SamplerConfig cfg;
  cfg.schedule = SigmaSchedule::linear(6);
  cfg.plan = plan_tiles(s.h, s.w, 60, 104, 0.3);
  cfg.mode = SamplerMode::fd;
  cfg.prior.lambda_base = lambda_base;
  cfg.prior.tau = 1.0;
  cfg.seed = 11;
  return cfg;
}

Outcome criterion6() {
  const Shape s{2, 3, 120, 208};
  const auto target = smooth(s, 0.0);
  const auto prior = smooth(s, 1.7);
  TargetDenoiser d(target);
  const auto noise = gaussian_noise(s, 11, 0);

  const auto pulled = run(pull_config(s, 1e6), noise, &prior, d).x_final;
  double linf = 0.0;
  for (std::size_t k = 0; k < prior.size(); ++k) {
    linf = std::max(linf, double(std::abs(pulled.data()[k] - prior.data()[k])));
  }

  std::string dists;
  bool monotone = true;
  double prev = std::numeric_limits<double>::infinity();
  for (double lam : {0.0, 0.5, 1.5, 5.0}) {
    const auto x = run(pull_config(s, lam), noise, &prior, d).x_final;
    double l2 = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) l2 += std::pow(double(x.data()[k]) - prior.data()[k], 2);
    l2 = std::sqrt(l2);
    monotone &= l2 <= prev;
    prev = l2;
    dists += (dists.empty() ? "" : ", ") + num(l2);
  }
  return {linf <= 1e-3 && monotone, "lambda_base=1e6, tau=1: max |x - prior| " + num(linf) +
                                        " (limit 1e-3); L2 distance over lambda_base {0,0.5,1.5,5}: " +
                                        dists};
}

Outcome criterion7() {
  const Shape s{2, 2, 120, 208};
  const auto target = smooth(s, 0.0);
  const auto prior = smooth(s, 1.7);
  TargetDenoiser d(target);
  std::vector<std::uint8_t> cells(s.plane());
  for (std::uint32_t i = 0; i < s.h; ++i)
    for (std::uint32_t j = 0; j < s.w; ++j) cells[i * s.w + j] = std::uint8_t((i / 8 + j / 8) % 2);
  const ActivityMap board(s.h, s.w, cells);

  auto run_regional = [&](double tau_act, double tau_bg) {
    SamplerConfig cfg = pull_config(s, 1.5);
    cfg.mode = SamplerMode::fd_regional;
    cfg.prior.mode = PriorMode::regional;
    cfg.prior.tau_act = tau_act;
    cfg.prior.tau_bg = tau_bg;
    return run(cfg, gaussian_noise(s, 13, 0), &prior, d, &board);
  };

  // Final state: background gate open through the last integrating step.
  const auto open = run_regional(0.1, 1.0);
  const auto fin = prior_mse(open.x_final, prior, &board);
  const bool final_ok = *fin.bg <= *fin.fg;

  // tau_bg = 0.35: at step 1 only the background prior is active.
  const auto narrow = run_regional(0.1, 0.35);
  const auto& s1 = narrow.trace.steps.at(1);
  const bool step_ok = *s1.bg_mse <= *s1.fg_mse;
  return {final_ok && step_ok,
          "tau_act=0.1, tau_bg=1: final bg MSE " + num(*fin.bg) + " <= fg MSE " + num(*fin.fg) +
              "; tau_act=0.1, tau_bg=0.35: step-1 clean-estimate bg MSE " + num(*s1.bg_mse) +
              " <= fg MSE " + num(*s1.fg_mse)};
}

Outcome criterion8() {
  using namespace metrics;
  const Video still(4, Frame::gray(64, 64, std::vector<float>(64 * 64, 0.37f)));
  const double t_still = tenengrad(still);
  const double c_still = temporal_consistency(still);

  const double c = 0.25;
  const Video offset{Frame::gray(64, 64, std::vector<float>(64 * 64, 0.5f)),
                     Frame::gray(64, 64, std::vector<float>(64 * 64, float(0.5 + c)))};
  const double c_off = temporal_consistency(offset);

  std::mt19937_64 rng(808);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  double worst = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    Video v;
    for (int t = 0; t < 3; ++t) {
      std::vector<float> px(64 * 64 * 3);
      for (float& x : px) x = u(rng);
      v.push_back(Frame::rgb(64, 64, px));
    }
    worst = std::max(worst, std::abs(tenengrad(v[0]) - double(oracle::tenengrad(v[0]))));
    worst = std::max(worst, std::abs(temporal_consistency(v) - double(oracle::temporal_consistency(v))));
    const auto lum = v[1].luminance();
    const auto small = area_resize(lum, 64, 64, 128, 128);
    const auto want = oracle::area_resize({lum.begin(), lum.end()}, 64, 64, 128, 128);
    for (std::size_t k = 0; k < small.size(); ++k) worst = std::max(worst, std::abs(small[k] - double(want[k])));
    ThumbnailEmbedder thumb;
    const auto za = thumb.embed(v[0], 0);
    const auto zb = thumb.embed(v[2], 2);
    long double ab = 0, aa = 0, bb = 0;
    for (std::size_t k = 0; k < za.size(); ++k) {
      ab += (long double)za[k] * zb[k];
      aa += (long double)za[k] * za[k];
      bb += (long double)zb[k] * zb[k];
    }
    worst = std::max(worst, std::abs(cosine(za, zb) - double(ab / std::sqrt(aa * bb))));
  }
  const bool ok = t_still == 0.0 && c_still == 0.0 && std::abs(c_off - 4 * c * c) <= 1e-12 &&
                  worst <= 1e-6;
  return {ok, "constant video tenengrad " + num(t_still) + ", temporal consistency " + num(c_still) +
                  "; offset c=0.25 gives " + num(c_off) + " (4c^2 = " + num(4 * c * c) +
                  "); max kernel-vs-oracle deviation " + num(worst) + " (limit 1e-6)"};
}

template <typename E>
bool raises(Denoiser& d, const DenoiserRequest& req, long item) {
  try {
    d.predict(req);
  } catch (const E& e) {
    return e.item() == item;
  } catch (...) {
    return false;
  }
  return false;
}

Outcome criterion9() {
  const std::string worker = FDP_WORKER;
  ExternalDenoiser echo(worker + " echo");
  std::mt19937_64 rng(909);
  auto u = [&](int lo, int hi) { return std::uint32_t(std::uniform_int_distribution<int>(lo, hi)(rng)); };
  int exact = 0;
  DenoiserRequest req;
  for (int k = 0; k < 100; ++k) {
    req.tile = LatentTensor(Shape{u(1, 4), u(1, 3), u(1, 16), u(1, 16)});
    for (float& v : req.tile.data()) {
      do v = std::bit_cast<float>(std::uint32_t(rng()));
      while (!std::isfinite(v));
    }
    req.rect = Rect{0, 0, req.tile.shape().h, req.tile.shape().w};
    req.sigma = 0.5;
    req.tile_index = k;
    if (flt1::encode(echo.predict(req).prediction) == flt1::encode(req.tile)) ++exact;
  }

  req.tile_index = 42;
  ExternalDenoiser malformed(worker + " malformed");
  ExternalDenoiser wrong_shape(worker + " wrong_shape");
  ExternalDenoiser crash(worker + " crash");
  ExternalDenoiser hang(worker + " hang", 1, std::chrono::milliseconds(300));
  const bool m = raises<MalformedFrameError>(malformed, req, 42);
  const bool w = raises<ResponseShapeError>(wrong_shape, req, 42);
  const bool c = raises<BrokenPipeError>(crash, req, 42);
  const bool h = raises<TimeoutError>(hang, req, 42);
  const bool ok = exact == 100 && m && w && c && h;
  auto yn = [](bool b) { return b ? "yes" : "no"; };
  return {ok, std::to_string(exact) + "/100 tiles bit-exact; malformed->MalformedFrameError " +
                  yn(m) + ", wrong shape->ResponseShapeError " + yn(w) +
                  ", crash->BrokenPipeError " + yn(c) + ", hang->TimeoutError " + yn(h) +
                  " (all carrying the tile index)"};
}

int run_cli(const std::vector<std::string>& args) {
  const pid_t pid = ::fork();
  if (pid == 0) {
    std::vector<char*> argv{const_cast<char*>(FRESCO_CLI)};
    for (const auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
    argv.push_back(nullptr);
    ::execv(FRESCO_CLI, argv.data());
    ::_exit(127);
  }
  int status = 0;
  ::waitpid(pid, &status, 0);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome criterion10() {
  const auto dir = std::filesystem::temp_directory_path() /
                   ("fresco_acceptance_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "run.ini")
      << "[run]\nseed = 2026\nsteps = 6\nworkers = 4\n\n[canvas]\nheight = 256\nwidth = 384\n"
      << "channels = 4\nframes = 3\n\n[denoiser]\nmean = 0.1\nstddev = 0.8\n";
  const std::string first = (dir / "first.flt").string();
  const std::string manifest = (dir / "manifest.ini").string();
  int rc = run_cli({"sample", "--config", (dir / "run.ini").string(), "--out", first, "--manifest", manifest});
  const std::string second = (dir / "second.flt").string();
  const int rc2 = run_cli({"sample", "--config", manifest, "--out", second});
  bool same = false;
  std::size_t bytes = 0;
  if (rc == 0 && rc2 == 0) {
    std::ifstream a(first, std::ios::binary), b(second, std::ios::binary);
    const std::string sa((std::istreambuf_iterator<char>(a)), {});
    const std::string sb((std::istreambuf_iterator<char>(b)), {});
    same = sa == sb && !sa.empty();
    bytes = sa.size();
  }
  std::filesystem::remove_all(dir);
  return {same, "exit codes " + std::to_string(rc) + "/" + std::to_string(rc2) + ", outputs of " +
                    std::to_string(bytes) + " bytes " + (same ? "byte-identical" : "DIFFER")};
}

}  // namespace

int main() {
  const auto set = fusion_instances();
  report(1, "fusion closed forms match the per-element quadratic minimiser", [&] { return criterion1(set); });
  report(2, "lambda=0 reduces to the weighted mean; md == fd(lambda_base=0)", [&] { return criterion2(set); });
  report(3, "480x832 window tile geometry", criterion3);
  report(4, "gated prior schedules", criterion4);
  report(5, "Gaussian end-to-end statistics", criterion5);
  report(6, "prior-pull limit and lambda sweep monotonicity", criterion6);
  report(7, "regional ordering (background closer to prior)", criterion7);
  report(8, "metrics exact values and dense-loop oracles", criterion8);
  report(9, "FDP1 loopback and distinct protocol errors", criterion9);
  report(10, "determinism from manifest", criterion10);
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed")
            << std::endl;
  return failures;
}
