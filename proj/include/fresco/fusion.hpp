#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "fresco/blending.hpp"
#include "fresco/error.hpp"
#include "fresco/prior_strength.hpp"
#include "fresco/tensor.hpp"

namespace fresco {

// Running sums of weighted tile predictions (num) and tile weights (den).
// num is canvas-shaped; den is one spatial plane shared by all channels and
// frames. Both are held in double precision.
class FusionAccumulator {
 public:
  FusionAccumulator() = default;
  explicit FusionAccumulator(Shape canvas)
      : shape_(canvas), num_(canvas.size(), 0.0), den_(canvas.plane(), 0.0) {}

  const Shape& shape() const noexcept { return shape_; }
  const std::vector<double>& num() const noexcept { return num_; }
  const std::vector<double>& den() const noexcept { return den_; }

  // num += w * pred and den += w inside window r. Single writer.
  void accumulate(const LatentTensor& pred, const Rect& r, const WeightMap& w) {
    const Shape& ps = pred.shape();
    if (ps.h != r.height || ps.w != r.width) {
      throw ShapeError("tile prediction " + ps.str() + " does not match window " +
                       std::to_string(r.height) + "x" + std::to_string(r.width));
    }
    if (w.height() != r.height || w.width() != r.width) {
      throw ShapeError("weight map does not match window");
    }
    if (ps.c != shape_.c || ps.t != shape_.t) {
      throw ShapeError("tile prediction " + ps.str() + " incompatible with canvas " +
                       shape_.str());
    }
    validate_rect(r, shape_.h, shape_.w);
    const std::size_t plane = shape_.plane();
    for (std::uint32_t c = 0; c < ps.c; ++c) {
      for (std::uint32_t t = 0; t < ps.t; ++t) {
        const float* src = pred.plane(c, t);
        double* dst = &num_[(std::size_t(c) * shape_.t + t) * plane];
        for (std::uint32_t i = 0; i < r.height; ++i) {
          const std::size_t row = std::size_t(r.row + i) * shape_.w + r.col;
          for (std::uint32_t j = 0; j < r.width; ++j) {
            dst[row + j] += double(w(i, j)) * double(src[std::size_t(i) * r.width + j]);
          }
        }
      }
    }
    for (std::uint32_t i = 0; i < r.height; ++i) {
      const std::size_t row = std::size_t(r.row + i) * shape_.w + r.col;
      for (std::uint32_t j = 0; j < r.width; ++j) den_[row + j] += w(i, j);
    }
  }

  // Adds another accumulator's sums (merging per-worker partials).
  void merge(const FusionAccumulator& other) {
    if (!(other.shape_ == shape_)) throw ShapeError("cannot merge accumulators of different shape");
    for (std::size_t k = 0; k < num_.size(); ++k) num_[k] += other.num_[k];
    for (std::size_t k = 0; k < den_.size(); ++k) den_[k] += other.den_[k];
  }

 private:
  Shape shape_;
  std::vector<double> num_;
  std::vector<double> den_;
};

namespace detail {

inline void check_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (!(a == b)) {
    throw ShapeError(std::string(what) + " shape " + b.str() + " does not match canvas " + a.str());
  }
}

inline CoverageError uncovered_cell(const Shape& s, std::size_t plane_offset) {
  return CoverageError("cell (" + std::to_string(plane_offset / s.w) + ", " +
                       std::to_string(plane_offset % s.w) +
                       ") is covered by no tile and has zero prior strength");
}

}  // namespace detail

// Weighted average of tile predictions: num / den.
inline LatentTensor fuse_md(const FusionAccumulator& acc) {
  const Shape& s = acc.shape();
  const std::size_t plane = s.plane();
  for (std::size_t k = 0; k < plane; ++k) {
    if (!(acc.den()[k] > 0.0)) throw detail::uncovered_cell(s, k);
  }
  LatentTensor out(s);
  auto y = out.data();
  for (std::size_t k = 0; k < y.size(); ++k) y[k] = float(acc.num()[k] / acc.den()[k % plane]);
  return out;
}

// Prior-regularized velocity for flow matching:
//   (sigma * lambda * (x_t - x_prior) + num) / (sigma^2 * lambda + den).
inline LatentTensor fuse_fd_flow(const FusionAccumulator& acc, const LatentTensor& x_t,
                                 const LatentTensor& x_prior, const PriorStrength& lambda,
                                 double sigma) {
  const Shape& s = acc.shape();
  detail::check_same_shape(s, x_t.shape(), "x_t");
  detail::check_same_shape(s, x_prior.shape(), "x_prior");
  lambda.check_against(s);
  if (lambda.min() < 0.0) throw DomainError("prior strength must be nonnegative");
  if (!(sigma > 0.0) && lambda.max() > 0.0) {
    throw DomainError("sigma must be positive when the prior term is active");
  }
  const std::size_t plane = s.plane();
  LatentTensor out(s);
  auto y = out.data();
  auto xt = x_t.data();
  auto xp = x_prior.data();
  for (std::size_t k = 0; k < y.size(); ++k) {
    const std::size_t p = k % plane;
    const double lam = lambda.at(k, p);
    const double den = lam == 0.0 ? acc.den()[p] : sigma * sigma * lam + acc.den()[p];
    if (!(den > 0.0)) throw detail::uncovered_cell(s, p);
    // lambda = 0 takes the plain weighted-average path so both fusions agree bit for bit.
    const double num =
        lam == 0.0 ? acc.num()[k] : sigma * lam * (double(xt[k]) - double(xp[k])) + acc.num()[k];
    y[k] = float(num / den);
  }
  return out;
}

// Prior-regularized noise prediction for epsilon-parameterized models, with
// alpha the cumulative signal level in (0, 1).
inline LatentTensor fuse_fd_eps(const FusionAccumulator& acc, const LatentTensor& x_t,
                                const LatentTensor& x_prior, const PriorStrength& lambda,
                                double alpha) {
  const Shape& s = acc.shape();
  if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("alpha must lie in (0, 1)");
  detail::check_same_shape(s, x_t.shape(), "x_t");
  detail::check_same_shape(s, x_prior.shape(), "x_prior");
  lambda.check_against(s);
  if (lambda.min() < 0.0) throw DomainError("prior strength must be nonnegative");
  const double ratio = (1.0 - alpha) / alpha;
  const double root_ratio = std::sqrt(ratio);
  const double inv_root_alpha = 1.0 / std::sqrt(alpha);
  const std::size_t plane = s.plane();
  LatentTensor out(s);
  auto y = out.data();
  auto xt = x_t.data();
  auto xp = x_prior.data();
  for (std::size_t k = 0; k < y.size(); ++k) {
    const std::size_t p = k % plane;
    const double lam = lambda.at(k, p);
    const double den = lam == 0.0 ? acc.den()[p] : ratio * lam + acc.den()[p];
    if (!(den > 0.0)) throw detail::uncovered_cell(s, p);
    const double num =
        lam == 0.0 ? acc.num()[k]
                   : root_ratio * lam * (double(xt[k]) * inv_root_alpha - double(xp[k])) +
                         acc.num()[k];
    y[k] = float(num / den);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Objective evaluators, used to check the closed forms.

struct TileContribution {
  LatentTensor pred;
  Rect rect;
  WeightMap weights;
};

// sum_i || sqrt(w_i) (y - pad(y_i)) ||^2 over each tile's window. Outside a
// window the padded prediction and the weight are both zero.
inline double loss_md(const LatentTensor& y, const std::vector<TileContribution>& tiles) {
  const Shape& s = y.shape();
  double total = 0.0;
  for (const auto& tile : tiles) {
    const Shape& ps = tile.pred.shape();
    if (ps.c != s.c || ps.t != s.t || ps.h != tile.rect.height || ps.w != tile.rect.width ||
        tile.weights.height() != tile.rect.height || tile.weights.width() != tile.rect.width) {
      throw ShapeError("tile contribution shape mismatch");
    }
    validate_rect(tile.rect, s.h, s.w);
    for (std::uint32_t c = 0; c < s.c; ++c) {
      for (std::uint32_t t = 0; t < s.t; ++t) {
        for (std::uint32_t i = 0; i < tile.rect.height; ++i) {
          for (std::uint32_t j = 0; j < tile.rect.width; ++j) {
            const double d =
                double(y(c, t, tile.rect.row + i, tile.rect.col + j)) - tile.pred(c, t, i, j);
            total += double(tile.weights(i, j)) * d * d;
          }
        }
      }
    }
  }
  return total;
}

// ||sqrt(lambda) ((x_t - sigma y) - x_prior)||^2 + loss_md(y).
inline double loss_fd(const LatentTensor& y, const std::vector<TileContribution>& tiles,
                      const LatentTensor& x_t, const LatentTensor& x_prior,
                      const PriorStrength& lambda, double sigma) {
  const Shape& s = y.shape();
  detail::check_same_shape(s, x_t.shape(), "x_t");
  detail::check_same_shape(s, x_prior.shape(), "x_prior");
  lambda.check_against(s);
  const std::size_t plane = s.plane();
  double prior = 0.0;
  for (std::size_t k = 0; k < s.size(); ++k) {
    const double d = (double(x_t.data()[k]) - sigma * y.data()[k]) - x_prior.data()[k];
    prior += lambda.at(k, k % plane) * d * d;
  }
  return prior + loss_md(y, tiles);
}

// Epsilon variant: the clean estimate is (x_t - sqrt(1 - alpha) y) / sqrt(alpha).
inline double loss_fd_eps(const LatentTensor& y, const std::vector<TileContribution>& tiles,
                          const LatentTensor& x_t, const LatentTensor& x_prior,
                          const PriorStrength& lambda, double alpha) {
  const Shape& s = y.shape();
  detail::check_same_shape(s, x_t.shape(), "x_t");
  detail::check_same_shape(s, x_prior.shape(), "x_prior");
  lambda.check_against(s);
  const double a = std::sqrt(alpha);
  const double b = std::sqrt(1.0 - alpha);
  const std::size_t plane = s.plane();
  double prior = 0.0;
  for (std::size_t k = 0; k < s.size(); ++k) {
    const double d = (double(x_t.data()[k]) - b * y.data()[k]) / a - x_prior.data()[k];
    prior += lambda.at(k, k % plane) * d * d;
  }
  return prior + loss_md(y, tiles);
}

}  // namespace fresco
