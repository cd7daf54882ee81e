#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "fresco/error.hpp"
#include "fresco/tensor.hpp"

namespace fresco {

// Spatial alignment required by the latent video backbone (VAE factor 8 x patch 2).
inline constexpr std::uint32_t kPixelAlignment = 16;
// Default VAE spatial compression factor (pixels per latent cell).
inline constexpr std::uint32_t kLatentFactor = 8;
// Native generation area of the backbone, 480 x 832 pixels.
inline constexpr double kPriorArea = 399360.0;

// Snaps a pixel dimension down to a multiple of 16, never below 16.
constexpr std::uint32_t snap_dim(std::uint32_t px) noexcept {
  return std::max<std::uint32_t>(kPixelAlignment, px / kPixelAlignment * kPixelAlignment);
}

struct PixelSize {
  std::uint32_t height = 0;
  std::uint32_t width = 0;

  friend bool operator==(const PixelSize&, const PixelSize&) = default;
};

// Resolution of the low-resolution prior: fixed area, input aspect ratio, snapped.
inline PixelSize prior_resolution(std::uint32_t h, std::uint32_t w) {
  if (h == 0 || w == 0) throw ArgumentError("prior_resolution: dims must be positive");
  const double ph = std::round(std::sqrt(kPriorArea * double(h) / double(w)));
  const double pw = std::round(std::sqrt(kPriorArea * double(w) / double(h)));
  auto snap = [](double v) {
    return snap_dim(std::uint32_t(std::min(v, double(UINT32_MAX))));
  };
  return {snap(ph), snap(pw)};
}

struct TilePlan {
  std::vector<Rect> tiles;
  std::uint32_t canvas_h = 0;
  std::uint32_t canvas_w = 0;
  std::uint32_t window_h = 0;
  std::uint32_t window_w = 0;
  std::uint32_t stride_h = 0;
  std::uint32_t stride_w = 0;

  // Number of tiles containing each cell, row-major over the canvas.
  std::vector<std::uint32_t> coverage() const {
    std::vector<std::uint32_t> count(std::size_t(canvas_h) * canvas_w, 0);
    for (const Rect& r : tiles) {
      for (std::uint32_t i = r.row; i < r.row + r.height; ++i) {
        for (std::uint32_t j = r.col; j < r.col + r.width; ++j) {
          ++count[std::size_t(i) * canvas_w + j];
        }
      }
    }
    return count;
  }
};

namespace detail {

// Grid origins along one axis, plus a final window flush with the far edge.
inline std::vector<std::uint32_t> axis_origins(std::uint32_t canvas, std::uint32_t window,
                                               std::uint32_t stride) {
  std::vector<std::uint32_t> pos;
  if (window >= canvas) return {0};
  for (std::uint32_t p = 0; p + window <= canvas; p += stride) pos.push_back(p);
  if (pos.back() + window < canvas) pos.push_back(canvas - window);
  return pos;
}

// floor(len * (1 - overlap)), tolerant of representation error (0.7 * 60 -> 42).
inline std::uint32_t overlap_stride(std::uint32_t len, double overlap_fraction) {
  const double s = std::floor(double(len) * (1.0 - overlap_fraction) + 1e-9);
  return std::max<std::uint32_t>(1, std::uint32_t(s));
}

inline void check_overlap(double overlap_fraction) {
  if (!(overlap_fraction >= 0.0 && overlap_fraction < 1.0)) {
    throw ArgumentError("plan_tiles: overlap fraction must lie in [0, 1)");
  }
}

inline TilePlan layout(std::uint32_t canvas_h, std::uint32_t canvas_w, std::uint32_t window_h,
                       std::uint32_t window_w, std::uint32_t stride_h, std::uint32_t stride_w) {
  if (canvas_h == 0 || canvas_w == 0) throw ArgumentError("plan_tiles: empty canvas");
  if (window_h == 0 || window_w == 0) throw ArgumentError("plan_tiles: empty window");
  TilePlan plan;
  plan.canvas_h = canvas_h;
  plan.canvas_w = canvas_w;
  plan.window_h = std::min(window_h, canvas_h);
  plan.window_w = std::min(window_w, canvas_w);
  plan.stride_h = stride_h;
  plan.stride_w = stride_w;
  for (std::uint32_t r : axis_origins(canvas_h, plan.window_h, stride_h)) {
    for (std::uint32_t c : axis_origins(canvas_w, plan.window_w, stride_w)) {
      const Rect rect{r, c, plan.window_h, plan.window_w};
      if (std::find(plan.tiles.begin(), plan.tiles.end(), rect) == plan.tiles.end()) {
        plan.tiles.push_back(rect);
      }
    }
  }
  return plan;
}

}  // namespace detail

// Overlapping windows covering a canvas_h x canvas_w latent canvas, in
// row-major order. Windows larger than the canvas are clipped to it.
inline TilePlan plan_tiles(std::uint32_t canvas_h, std::uint32_t canvas_w, std::uint32_t window_h,
                           std::uint32_t window_w, double overlap_fraction) {
  detail::check_overlap(overlap_fraction);
  return detail::layout(canvas_h, canvas_w, window_h, window_w,
                        detail::overlap_stride(window_h, overlap_fraction),
                        detail::overlap_stride(window_w, overlap_fraction));
}

// Pixel window and overlap converted to latent cells: window and stride are
// each floor-divided by the compression factor.
inline TilePlan plan_tiles_from_pixels(std::uint32_t canvas_h, std::uint32_t canvas_w,
                                       std::uint32_t window_px_h, std::uint32_t window_px_w,
                                       double overlap_fraction,
                                       std::uint32_t factor = kLatentFactor) {
  if (factor == 0) throw ArgumentError("latent factor must be positive");
  detail::check_overlap(overlap_fraction);
  auto to_latent = [factor](std::uint32_t px) { return std::max<std::uint32_t>(1, px / factor); };
  return detail::layout(canvas_h, canvas_w, to_latent(window_px_h), to_latent(window_px_w),
                        to_latent(detail::overlap_stride(window_px_h, overlap_fraction)),
                        to_latent(detail::overlap_stride(window_px_w, overlap_fraction)));
}

}  // namespace fresco
