#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <tuple>
#include <vector>

#include "fresco/error.hpp"

namespace fresco {

// Default minimum border weight of a tile's blending ramp.
inline constexpr float kDefaultMinWeight = 0.1f;

// Spatial blending weights of one tile, broadcast over channels and frames.
class WeightMap {
 public:
  WeightMap() = default;
  WeightMap(std::uint32_t height, std::uint32_t width, std::vector<float> values)
      : height_(height), width_(width), values_(std::move(values)) {
    if (values_.size() != std::size_t(height_) * width_) {
      throw ShapeError("weight map size does not match its dims");
    }
  }

  static WeightMap ones(std::uint32_t height, std::uint32_t width) {
    return WeightMap(height, width, std::vector<float>(std::size_t(height) * width, 1.0f));
  }

  std::uint32_t height() const noexcept { return height_; }
  std::uint32_t width() const noexcept { return width_; }
  float operator()(std::uint32_t i, std::uint32_t j) const noexcept {
    return values_[std::size_t(i) * width_ + j];
  }
  const std::vector<float>& values() const noexcept { return values_; }

 private:
  std::uint32_t height_ = 0;
  std::uint32_t width_ = 0;
  std::vector<float> values_;
};

// 1-D profile rising linearly from w_min at each border to 1 at distance ramp_len.
inline std::vector<float> ramp_profile(std::uint32_t length, std::uint32_t ramp_len, float w_min) {
  std::vector<float> r(length, 1.0f);
  if (ramp_len == 0) return r;
  for (std::uint32_t k = 0; k < length; ++k) {
    const std::uint32_t d = std::min(k, length - 1 - k);
    if (d >= ramp_len) continue;
    const double f = double(d) / double(ramp_len);
    r[k] = float(double(w_min) + (1.0 - double(w_min)) * f);
  }
  return r;
}

// Separable ramp map w(i, j) = r(i) * r(j).
inline WeightMap ramp_weight_map(std::uint32_t height, std::uint32_t width,
                                 std::uint32_t ramp_h, std::uint32_t ramp_w, float w_min) {
  if (height == 0 || width == 0) throw ArgumentError("ramp_weight_map: empty map");
  if (!(w_min > 0.0f) || w_min > 1.0f) {
    throw ArgumentError("ramp_weight_map: w_min must lie in (0, 1]");
  }
  const auto rows = ramp_profile(height, ramp_h, w_min);
  const auto cols = ramp_profile(width, ramp_w, w_min);
  std::vector<float> v(std::size_t(height) * width);
  for (std::uint32_t i = 0; i < height; ++i) {
    for (std::uint32_t j = 0; j < width; ++j) v[std::size_t(i) * width + j] = rows[i] * cols[j];
  }
  return WeightMap(height, width, std::move(v));
}

inline WeightMap ramp_weight_map(std::uint32_t height, std::uint32_t width, std::uint32_t ramp_len,
                                 float w_min) {
  return ramp_weight_map(height, width, ramp_len, ramp_len, w_min);
}

// Thread-safe cache of ramp maps keyed by (height, width, ramp_h, ramp_w, w_min).
class WeightMapCache {
 public:
  std::shared_ptr<const WeightMap> get(std::uint32_t height, std::uint32_t width,
                                       std::uint32_t ramp_h, std::uint32_t ramp_w, float w_min) {
    const Key key{height, width, ramp_h, ramp_w, w_min};
    std::lock_guard lock(mutex_);
    auto it = maps_.find(key);
    if (it != maps_.end()) return it->second;
    auto map = std::make_shared<const WeightMap>(
        ramp_weight_map(height, width, ramp_h, ramp_w, w_min));
    maps_.emplace(key, map);
    return map;
  }

 private:
  using Key = std::tuple<std::uint32_t, std::uint32_t, std::uint32_t, std::uint32_t, float>;
  std::mutex mutex_;
  std::map<Key, std::shared_ptr<const WeightMap>> maps_;
};

}  // namespace fresco
