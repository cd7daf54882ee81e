#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>

#include "fresco/error.hpp"
#include "fresco/tensor.hpp"

namespace fresco {

// What a denoiser output represents.
//   flow: velocity y with x_t = x0 + sigma (eps - x0), so x0_hat = x_t - sigma y.
//   eps:  noise with x_t = sqrt(1 - sigma^2) x0 + sigma eps.
enum class Prediction : std::uint8_t { flow = 0, eps = 1 };

inline std::string to_string(Prediction p) { return p == Prediction::flow ? "flow" : "eps"; }

inline Prediction parse_prediction(const std::string& s) {
  if (s == "flow") return Prediction::flow;
  if (s == "eps") return Prediction::eps;
  throw ConfigError("unknown prediction kind '" + s + "'");
}

struct DenoiserRequest {
  LatentTensor tile;
  std::uint32_t step = 0;
  double t = 0.0;
  double sigma = 1.0;
  std::string conditioning;
  Rect rect;
  // Position of the tile in the plan; -1 for untiled calls.
  long tile_index = -1;
  Prediction kind = Prediction::flow;
};

struct DenoiserResponse {
  LatentTensor prediction;
  Prediction kind = Prediction::flow;
};

// Maps a noisy tile to a velocity or noise prediction of the same shape.
// Implementations must return identical responses for identical requests.
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual DenoiserResponse predict(const DenoiserRequest& req) = 0;
};

namespace detail {

inline void require_noise_level(const DenoiserRequest& req) {
  if (!(req.sigma > 0.0 && req.sigma <= 1.0)) {
    throw DomainError("denoiser: sigma must lie in (0, 1], got " + std::to_string(req.sigma));
  }
}

// Converts a clean-sample estimate into the requested prediction kind.
inline DenoiserResponse from_clean_estimate(const DenoiserRequest& req, const LatentTensor& x0) {
  DenoiserResponse res{LatentTensor(req.tile.shape()), req.kind};
  auto y = res.prediction.data();
  auto x = req.tile.data();
  auto c = x0.data();
  const double s = req.sigma;
  if (req.kind == Prediction::flow) {
    for (std::size_t k = 0; k < y.size(); ++k) y[k] = float((double(x[k]) - c[k]) / s);
  } else {
    const double a = std::sqrt(1.0 - s * s);
    for (std::size_t k = 0; k < y.size(); ++k) y[k] = float((double(x[k]) - a * c[k]) / s);
  }
  return res;
}

}  // namespace detail

// Exact posterior-mean predictor for i.i.d. N(mean, stddev^2) data.
class GaussianDenoiser final : public Denoiser {
 public:
  GaussianDenoiser(double mean, double stddev) : mean_(mean), stddev_(stddev) {
    if (!(stddev >= 0.0)) throw ArgumentError("gaussian denoiser: stddev must be nonnegative");
  }

  // E[x0 | x_t] for a single cell.
  double posterior_mean(double x, double sigma, Prediction kind) const {
    const double v = stddev_ * stddev_;
    // Signal scale a and noise scale b with x_t = a x0 + b eps.
    const double a = kind == Prediction::flow ? 1.0 - sigma : std::sqrt(1.0 - sigma * sigma);
    const double b = sigma;
    return (a * v * x + b * b * mean_) / (a * a * v + b * b);
  }

  DenoiserResponse predict(const DenoiserRequest& req) override {
    detail::require_noise_level(req);
    LatentTensor x0(req.tile.shape());
    auto src = req.tile.data();
    auto dst = x0.data();
    for (std::size_t k = 0; k < dst.size(); ++k) {
      dst[k] = float(posterior_mean(src[k], req.sigma, req.kind));
    }
    return detail::from_clean_estimate(req, x0);
  }

 private:
  double mean_;
  double stddev_;
};

// Predicts the crop of a fixed target as the clean sample at every step.
class TargetDenoiser final : public Denoiser {
 public:
  explicit TargetDenoiser(LatentTensor target) : target_(std::move(target)) {}

  const LatentTensor& target() const noexcept { return target_; }

  DenoiserResponse predict(const DenoiserRequest& req) override {
    detail::require_noise_level(req);
    const LatentTensor clean = crop(target_, req.rect);
    if (!(clean.shape() == req.tile.shape())) {
      throw ShapeError("target crop " + clean.shape().str() + " does not match tile " +
                       req.tile.shape().str());
    }
    return detail::from_clean_estimate(req, clean);
  }

 private:
  LatentTensor target_;
};

}  // namespace fresco
