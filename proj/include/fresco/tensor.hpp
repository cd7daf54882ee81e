#pragma once

#include <unistd.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "fresco/error.hpp"

namespace fresco {

// Extents of a latent tensor: channels, frames, rows, cols.
struct Shape {
  std::uint32_t c = 0;
  std::uint32_t t = 0;
  std::uint32_t h = 0;
  std::uint32_t w = 0;

  std::size_t size() const noexcept {
    return std::size_t(c) * t * h * w;
  }
  std::size_t plane() const noexcept { return std::size_t(h) * w; }

  friend bool operator==(const Shape&, const Shape&) = default;

  std::string str() const {
    std::ostringstream os;
    os << c << "x" << t << "x" << h << "x" << w;
    return os.str();
  }
};

// Spatial window in latent cells.
struct Rect {
  std::uint32_t row = 0;
  std::uint32_t col = 0;
  std::uint32_t height = 1;
  std::uint32_t width = 1;

  friend bool operator==(const Rect&, const Rect&) = default;

  bool contains(std::uint32_t r, std::uint32_t c) const noexcept {
    return r >= row && r < row + height && c >= col && c < col + width;
  }
};

inline void validate_rect(const Rect& r, std::uint32_t canvas_h, std::uint32_t canvas_w) {
  if (r.height == 0 || r.width == 0) {
    throw BoundsError("rect has zero extent (" + std::to_string(r.height) + "x" +
                      std::to_string(r.width) + ")");
  }
  if (std::uint64_t(r.row) + r.height > canvas_h) {
    throw BoundsError("rect rows [" + std::to_string(r.row) + ", " +
                      std::to_string(r.row + r.height) + ") exceed canvas height " +
                      std::to_string(canvas_h));
  }
  if (std::uint64_t(r.col) + r.width > canvas_w) {
    throw BoundsError("rect cols [" + std::to_string(r.col) + ", " +
                      std::to_string(r.col + r.width) + ") exceed canvas width " +
                      std::to_string(canvas_w));
  }
}

// Dense (C, T, H, W) tensor of 32-bit reals, W fastest-varying.
class LatentTensor {
 public:
  LatentTensor() = default;

  explicit LatentTensor(Shape shape, float fill = 0.0f)
      : shape_(shape), data_(shape.size(), fill) {}

  LatentTensor(Shape shape, std::vector<float> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.size()) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_.str());
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }

  std::size_t index(std::uint32_t c, std::uint32_t t, std::uint32_t h,
                    std::uint32_t w) const noexcept {
    return ((std::size_t(c) * shape_.t + t) * shape_.h + h) * shape_.w + w;
  }

  float& operator()(std::uint32_t c, std::uint32_t t, std::uint32_t h, std::uint32_t w) noexcept {
    return data_[index(c, t, h, w)];
  }
  float operator()(std::uint32_t c, std::uint32_t t, std::uint32_t h,
                   std::uint32_t w) const noexcept {
    return data_[index(c, t, h, w)];
  }

  // Pointer to the start of spatial plane (c, t).
  float* plane(std::uint32_t c, std::uint32_t t) noexcept { return &data_[index(c, t, 0, 0)]; }
  const float* plane(std::uint32_t c, std::uint32_t t) const noexcept {
    return &data_[index(c, t, 0, 0)];
  }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
  }

  friend bool operator==(const LatentTensor&, const LatentTensor&) = default;

 private:
  Shape shape_;
  std::vector<float> data_;
};

// Copies window r out of every (c, t) plane.
inline LatentTensor crop(const LatentTensor& canvas, const Rect& r) {
  const Shape& s = canvas.shape();
  validate_rect(r, s.h, s.w);
  LatentTensor out(Shape{s.c, s.t, r.height, r.width});
  for (std::uint32_t c = 0; c < s.c; ++c) {
    for (std::uint32_t t = 0; t < s.t; ++t) {
      const float* src = canvas.plane(c, t);
      float* dst = out.plane(c, t);
      for (std::uint32_t i = 0; i < r.height; ++i) {
        std::copy_n(src + std::size_t(r.row + i) * s.w + r.col, r.width,
                    dst + std::size_t(i) * r.width);
      }
    }
  }
  return out;
}

// Places tile at r inside an otherwise zero canvas of shape canvas_shape.
inline LatentTensor zero_pad(const LatentTensor& tile, const Rect& r, const Shape& canvas_shape) {
  const Shape& ts = tile.shape();
  if (ts.h != r.height || ts.w != r.width) {
    throw ShapeError("tile spatial dims " + std::to_string(ts.h) + "x" + std::to_string(ts.w) +
                     " do not match rect " + std::to_string(r.height) + "x" +
                     std::to_string(r.width));
  }
  if (ts.c != canvas_shape.c || ts.t != canvas_shape.t) {
    throw ShapeError("tile " + ts.str() + " incompatible with canvas " + canvas_shape.str());
  }
  validate_rect(r, canvas_shape.h, canvas_shape.w);
  LatentTensor out(canvas_shape);
  for (std::uint32_t c = 0; c < ts.c; ++c) {
    for (std::uint32_t t = 0; t < ts.t; ++t) {
      const float* src = tile.plane(c, t);
      float* dst = out.plane(c, t);
      for (std::uint32_t i = 0; i < r.height; ++i) {
        std::copy_n(src + std::size_t(i) * r.width, r.width,
                    dst + std::size_t(r.row + i) * canvas_shape.w + r.col);
      }
    }
  }
  return out;
}

namespace detail {

struct LerpTap {
  std::uint32_t lo;
  std::uint32_t hi;
  double frac;
};

// Endpoint-aligned sample positions: out index o maps to o * (n_src - 1) / (n_out - 1).
inline std::vector<LerpTap> lerp_taps(std::uint32_t n_src, std::uint32_t n_out) {
  std::vector<LerpTap> taps(n_out);
  for (std::uint32_t o = 0; o < n_out; ++o) {
    if (n_out == 1 || n_src == 1) {
      taps[o] = {0, 0, 0.0};
      continue;
    }
    const double pos = double(o) * double(n_src - 1) / double(n_out - 1);
    auto lo = std::uint32_t(std::floor(pos));
    if (lo >= n_src - 1) lo = n_src - 1;
    const std::uint32_t hi = std::min(lo + 1, n_src - 1);
    taps[o] = {lo, hi, pos - double(lo)};
  }
  return taps;
}

}  // namespace detail

// Channel-wise endpoint-aligned trilinear interpolation over (T, H, W).
inline LatentTensor trilinear_resize(const LatentTensor& src, std::uint32_t out_t,
                                     std::uint32_t out_h, std::uint32_t out_w) {
  const Shape& s = src.shape();
  if (out_t == 0 || out_h == 0 || out_w == 0) {
    throw ArgumentError("trilinear_resize: output dims must be positive");
  }
  if (s.size() == 0) {
    throw ArgumentError("trilinear_resize: source tensor is empty");
  }
  if (s.t == out_t && s.h == out_h && s.w == out_w) return src;

  const auto tt = detail::lerp_taps(s.t, out_t);
  const auto th = detail::lerp_taps(s.h, out_h);
  const auto tw = detail::lerp_taps(s.w, out_w);

  LatentTensor out(Shape{s.c, out_t, out_h, out_w});
  for (std::uint32_t c = 0; c < s.c; ++c) {
    for (std::uint32_t t = 0; t < out_t; ++t) {
      const double ft = tt[t].frac;
      const float* p0 = src.plane(c, tt[t].lo);
      const float* p1 = src.plane(c, tt[t].hi);
      float* dst = out.plane(c, t);
      for (std::uint32_t i = 0; i < out_h; ++i) {
        const double fh = th[i].frac;
        const std::size_t r0 = std::size_t(th[i].lo) * s.w;
        const std::size_t r1 = std::size_t(th[i].hi) * s.w;
        for (std::uint32_t j = 0; j < out_w; ++j) {
          const double fw = tw[j].frac;
          const std::uint32_t c0 = tw[j].lo;
          const std::uint32_t c1 = tw[j].hi;
          auto bilerp = [&](const float* p) {
            const double top = p[r0 + c0] * (1.0 - fw) + p[r0 + c1] * fw;
            const double bot = p[r1 + c0] * (1.0 - fw) + p[r1 + c1] * fw;
            return top * (1.0 - fh) + bot * fh;
          };
          const double v = bilerp(p0) * (1.0 - ft) + bilerp(p1) * ft;
          dst[std::size_t(i) * out_w + j] = float(v);
        }
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// FLT1 file format: "FLT1", u32 version (1), u32 C, T, H, W, then C*T*H*W f32.
// All integers and reals little-endian.

namespace flt1 {

inline constexpr char kMagic[4] = {'F', 'L', 'T', '1'};
inline constexpr std::uint32_t kVersion = 1;
inline constexpr std::size_t kHeaderBytes = 24;

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) out.push_back(std::uint8_t(v >> (8 * k)));
}

inline std::uint32_t get_u32(const std::uint8_t* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
         std::uint32_t(p[3]) << 24;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode(const LatentTensor& x) {
  const Shape& s = x.shape();
  std::vector<std::uint8_t> out;
  out.reserve(kHeaderBytes + 4 * x.size());
  out.insert(out.end(), kMagic, kMagic + 4);
  detail::put_u32(out, kVersion);
  detail::put_u32(out, s.c);
  detail::put_u32(out, s.t);
  detail::put_u32(out, s.h);
  detail::put_u32(out, s.w);
  for (float v : x.data()) detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

// Decodes one tensor from the front of bytes; consumed receives the byte count used.
inline LatentTensor decode(std::span<const std::uint8_t> bytes, std::size_t* consumed = nullptr) {
  if (bytes.size() < kHeaderBytes) throw FormatError("FLT1: truncated header");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("FLT1: bad magic");
  const std::uint8_t* p = bytes.data();
  const std::uint32_t version = detail::get_u32(p + 4);
  if (version != kVersion) {
    throw FormatError("FLT1: unsupported version " + std::to_string(version));
  }
  const Shape s{detail::get_u32(p + 8), detail::get_u32(p + 12), detail::get_u32(p + 16),
                detail::get_u32(p + 20)};
  const std::size_t n = s.size();
  if (n == 0) throw FormatError("FLT1: zero-sized tensor " + s.str());
  if ((bytes.size() - kHeaderBytes) / 4 < n) {
    throw FormatError("FLT1: payload shorter than shape " + s.str());
  }
  std::vector<float> data(n);
  for (std::size_t i = 0; i < n; ++i) {
    data[i] = std::bit_cast<float>(detail::get_u32(p + kHeaderBytes + 4 * i));
  }
  if (consumed) *consumed = kHeaderBytes + 4 * n;
  return LatentTensor(s, std::move(data));
}

inline LatentTensor read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  std::size_t used = 0;
  LatentTensor x = decode(bytes, &used);
  if (used != bytes.size()) throw FormatError("FLT1: trailing bytes in " + path.string());
  return x;
}

// Writes to a sibling temporary then renames, so readers never see a partial file.
inline void write_bytes_atomic(const std::filesystem::path& path,
                               std::span<const std::uint8_t> bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    out.flush();
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("rename " + tmp.string() + " -> " + path.string() + ": " + ec.message());
}

inline void write(const std::filesystem::path& path, const LatentTensor& x) {
  const auto bytes = encode(x);
  write_bytes_atomic(path, bytes);
}

}  // namespace flt1

}  // namespace fresco
