#pragma once

#include <algorithm>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "fresco/error.hpp"
#include "fresco/tensor.hpp"

namespace fresco {

// Prior strength lambda: one scalar, one spatial plane broadcast over channels
// and frames, or a full canvas-shaped tensor.
class PriorStrength {
 public:
  enum class Kind { scalar, plane, tensor };

  PriorStrength() = default;
  PriorStrength(double value) : kind_(Kind::scalar), scalar_(value) {}  // NOLINT

  static PriorStrength spatial(std::uint32_t height, std::uint32_t width,
                               std::vector<float> values) {
    if (values.size() != std::size_t(height) * width) {
      throw ShapeError("prior strength plane size mismatch");
    }
    PriorStrength p;
    p.kind_ = Kind::plane;
    p.values_ = std::make_shared<const LatentTensor>(Shape{1, 1, height, width}, std::move(values));
    return p;
  }

  static PriorStrength full(LatentTensor values) {
    PriorStrength p;
    p.kind_ = Kind::tensor;
    p.values_ = std::make_shared<const LatentTensor>(std::move(values));
    return p;
  }

  Kind kind() const noexcept { return kind_; }
  double scalar() const noexcept { return scalar_; }
  const LatentTensor* values() const noexcept { return values_.get(); }

  // Throws unless this lambda broadcasts onto a canvas of the given shape.
  void check_against(const Shape& canvas) const {
    if (kind_ == Kind::scalar) return;
    const Shape& s = values_->shape();
    if (kind_ == Kind::plane && (s.h != canvas.h || s.w != canvas.w)) {
      throw ShapeError("prior strength plane " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                       " does not match canvas " + canvas.str());
    }
    if (kind_ == Kind::tensor && !(s == canvas)) {
      throw ShapeError("prior strength tensor " + s.str() + " does not match canvas " +
                       canvas.str());
    }
  }

  // Value at canvas element (flat index, plane offset h*W+w).
  double at(std::size_t flat, std::size_t plane_offset) const noexcept {
    switch (kind_) {
      case Kind::scalar: return scalar_;
      case Kind::plane: return values_->data()[plane_offset];
      case Kind::tensor: return values_->data()[flat];
    }
    return 0.0;
  }

  double min() const {
    if (kind_ == Kind::scalar) return scalar_;
    auto d = values_->data();
    return *std::min_element(d.begin(), d.end());
  }

  double max() const {
    if (kind_ == Kind::scalar) return scalar_;
    auto d = values_->data();
    return *std::max_element(d.begin(), d.end());
  }

  double mean() const {
    if (kind_ == Kind::scalar) return scalar_;
    double s = 0.0;
    for (float v : values_->data()) s += v;
    return s / double(values_->size());
  }

 private:
  Kind kind_ = Kind::scalar;
  double scalar_ = 0.0;
  std::shared_ptr<const LatentTensor> values_;
};

}  // namespace fresco
