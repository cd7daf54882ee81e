#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "fresco/error.hpp"
#include "fresco/external.hpp"
#include "fresco/netpbm.hpp"
#include "fresco/protocol.hpp"
#include "fresco/tensor.hpp"
#include "fresco/tile_planner.hpp"

namespace fresco::metrics {

// One video frame: interleaved RGB (channels = 3) or a single luminance
// channel. 8-bit sources keep their [0, 255] scale.
struct Frame {
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::uint32_t channels = 1;
  std::vector<float> values;

  static Frame gray(std::uint32_t height, std::uint32_t width, std::vector<float> v) {
    Frame f{height, width, 1, std::move(v)};
    f.check();
    return f;
  }

  static Frame rgb(std::uint32_t height, std::uint32_t width, std::vector<float> v) {
    Frame f{height, width, 3, std::move(v)};
    f.check();
    return f;
  }

  void check() const {
    if (height == 0 || width == 0) throw ArgumentError("frame is empty");
    if (channels != 1 && channels != 3) throw ArgumentError("frame must have 1 or 3 channels");
    if (values.size() != std::size_t(height) * width * channels) {
      throw ShapeError("frame data does not match its dims");
    }
  }

  // Luminance plane, 0.299 R + 0.587 G + 0.114 B for colour frames.
  std::vector<double> luminance() const {
    const std::size_t n = std::size_t(height) * width;
    std::vector<double> lum(n);
    if (channels == 1) {
      for (std::size_t k = 0; k < n; ++k) lum[k] = values[k];
    } else {
      for (std::size_t k = 0; k < n; ++k) {
        lum[k] = 0.299 * values[3 * k] + 0.587 * values[3 * k + 1] + 0.114 * values[3 * k + 2];
      }
    }
    return lum;
  }
};

using Video = std::vector<Frame>;

// ---------------------------------------------------------------------------
// Sharpness

enum class SobelBorder { replicate, valid };

// Mean of Gx^2 + Gy^2 over the frame, with 3x3 Sobel responses.
inline double tenengrad(const Frame& frame, SobelBorder border = SobelBorder::replicate) {
  frame.check();
  const std::uint32_t h = frame.height;
  const std::uint32_t w = frame.width;
  if (h < 3 || w < 3) throw ArgumentError("tenengrad: frame smaller than the 3x3 kernel");
  const auto lum = frame.luminance();
  auto at = [&](long i, long j) {
    i = std::clamp<long>(i, 0, long(h) - 1);
    j = std::clamp<long>(j, 0, long(w) - 1);
    return lum[std::size_t(i) * w + std::size_t(j)];
  };
  const long lo_i = border == SobelBorder::valid ? 1 : 0;
  const long hi_i = border == SobelBorder::valid ? long(h) - 1 : long(h);
  const long lo_j = border == SobelBorder::valid ? 1 : 0;
  const long hi_j = border == SobelBorder::valid ? long(w) - 1 : long(w);
  double sum = 0.0;
  for (long i = lo_i; i < hi_i; ++i) {
    for (long j = lo_j; j < hi_j; ++j) {
      const double gx = (at(i - 1, j + 1) + 2.0 * at(i, j + 1) + at(i + 1, j + 1)) -
                        (at(i - 1, j - 1) + 2.0 * at(i, j - 1) + at(i + 1, j - 1));
      const double gy = (at(i + 1, j - 1) + 2.0 * at(i + 1, j) + at(i + 1, j + 1)) -
                        (at(i - 1, j - 1) + 2.0 * at(i - 1, j) + at(i - 1, j + 1));
      sum += gx * gx + gy * gy;
    }
  }
  return sum / double((hi_i - lo_i) * (hi_j - lo_j));
}

// Video-level sharpness: mean of per-frame scores.
inline double tenengrad(const Video& video, SobelBorder border = SobelBorder::replicate) {
  if (video.empty()) throw ArgumentError("tenengrad: empty video");
  double sum = 0.0;
  for (const auto& f : video) sum += tenengrad(f, border);
  return sum / double(video.size());
}

// ---------------------------------------------------------------------------
// Temporal consistency

namespace detail {

// Overlap weights of output cells [o*n/m, (o+1)*n/m) against unit source cells.
inline std::vector<std::vector<std::pair<std::uint32_t, double>>> area_taps(std::uint32_t n,
                                                                            std::uint32_t m) {
  std::vector<std::vector<std::pair<std::uint32_t, double>>> taps(m);
  const double scale = double(n) / double(m);
  for (std::uint32_t o = 0; o < m; ++o) {
    const double a = o * scale;
    const double b = (o + 1) * scale;
    for (auto s = std::uint32_t(std::floor(a)); s < n && double(s) < b; ++s) {
      const double overlap = std::min(b, double(s + 1)) - std::max(a, double(s));
      if (overlap > 0.0) taps[o].emplace_back(s, overlap / scale);
    }
  }
  return taps;
}

}  // namespace detail

// Area-averaging resize of an h x w plane to out_h x out_w.
inline std::vector<double> area_resize(std::span<const double> src, std::uint32_t h, std::uint32_t w,
                                       std::uint32_t out_h, std::uint32_t out_w) {
  if (src.size() != std::size_t(h) * w) throw ShapeError("area_resize: plane size mismatch");
  const auto rows = detail::area_taps(h, out_h);
  const auto cols = detail::area_taps(w, out_w);
  std::vector<double> tmp(std::size_t(h) * out_w, 0.0);
  for (std::uint32_t i = 0; i < h; ++i) {
    for (std::uint32_t j = 0; j < out_w; ++j) {
      double v = 0.0;
      for (auto [s, wt] : cols[j]) v += wt * src[std::size_t(i) * w + s];
      tmp[std::size_t(i) * out_w + j] = v;
    }
  }
  std::vector<double> out(std::size_t(out_h) * out_w, 0.0);
  for (std::uint32_t i = 0; i < out_h; ++i) {
    for (auto [s, wt] : rows[i]) {
      for (std::uint32_t j = 0; j < out_w; ++j) {
        out[std::size_t(i) * out_w + j] += wt * tmp[std::size_t(s) * out_w + j];
      }
    }
  }
  return out;
}

struct TemporalConsistencyOptions {
  std::uint32_t size = 128;
  // Normaliser applied to each squared Frobenius norm.
  double divisor = 64.0 * 64.0;
};

// (1 / (T - 1)) sum_t ||f_t - f_{t-1}||_F^2 / divisor over grayscale frames
// area-averaged to size x size.
inline double temporal_consistency(const Video& video, const TemporalConsistencyOptions& opt = {}) {
  if (video.size() < 2) throw ArgumentError("temporal_consistency: needs at least 2 frames");
  if (opt.size == 0 || !(opt.divisor > 0.0)) throw ArgumentError("temporal_consistency: bad options");
  std::vector<double> prev;
  double total = 0.0;
  for (std::size_t t = 0; t < video.size(); ++t) {
    video[t].check();
    const auto lum = video[t].luminance();
    auto small = area_resize(lum, video[t].height, video[t].width, opt.size, opt.size);
    if (t > 0) {
      double ss = 0.0;
      for (std::size_t k = 0; k < small.size(); ++k) {
        const double d = small[k] - prev[k];
        ss += d * d;
      }
      total += ss / opt.divisor;
    }
    prev = std::move(small);
  }
  return total / double(video.size() - 1);
}

// ---------------------------------------------------------------------------
// Prior alignment

// Maps a frame to a global feature vector.
class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::vector<float> embed(const Frame& frame, long index) = 0;
};

// Luminance thumbnail as a feature vector. Deterministic stand-in for a
// learned encoder.
class ThumbnailEmbedder final : public Embedder {
 public:
  explicit ThumbnailEmbedder(std::uint32_t size = 16) : size_(size) {}

  std::vector<float> embed(const Frame& frame, long) override {
    frame.check();
    const auto lum = frame.luminance();
    const auto small = area_resize(lum, frame.height, frame.width, size_, size_);
    return {small.begin(), small.end()};
  }

 private:
  std::uint32_t size_;
};

// Embeddings computed by external worker processes over FDP1.
class ExternalEmbedder final : public Embedder {
 public:
  ExternalEmbedder(const std::string& command, std::size_t workers = 1,
                   std::chrono::milliseconds timeout = kDefaultWorkerTimeout)
      : pool_(command, workers, timeout) {}

  std::vector<float> embed(const Frame& frame, long index) override {
    frame.check();
    // Channel-planar (channels, 1, H, W) tensor.
    LatentTensor x(Shape{frame.channels, 1, frame.height, frame.width});
    const std::size_t n = std::size_t(frame.height) * frame.width;
    for (std::uint32_t c = 0; c < frame.channels; ++c) {
      for (std::size_t k = 0; k < n; ++k) x.data()[c * n + k] = frame.values[k * frame.channels + c];
    }
    const auto payload = flt1::encode(x);
    const fdp::Frame reply = pool_.exchange(fdp::MessageType::embed_request, payload, index);
    if (reply.type == fdp::MessageType::error) {
      throw RemoteError("embedder error: " + std::string(reply.payload.begin(), reply.payload.end()),
                        index);
    }
    if (reply.type != fdp::MessageType::embed_response) {
      throw MalformedFrameError("unexpected message type in reply to embed request", index);
    }
    return fresco::detail::with_item(index, [&] { return fdp::decode_embedding(reply.payload); });
  }

 private:
  WorkerPool pool_;
};

inline double cosine(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw MetricError("embedding dimensions differ");
  double ab = 0.0;
  double aa = 0.0;
  double bb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    ab += double(a[k]) * b[k];
    aa += double(a[k]) * a[k];
    bb += double(b[k]) * b[k];
  }
  if (!(aa > 0.0) || !(bb > 0.0)) throw MetricError("zero-norm embedding");
  return ab / (std::sqrt(aa) * std::sqrt(bb));
}

// Mean cosine similarity between per-frame embeddings of the two videos.
inline double prior_alignment(const Video& generated, const Video& prior, Embedder& embedder) {
  if (generated.size() != prior.size()) {
    throw ArgumentError("prior_alignment: frame counts differ (" +
                        std::to_string(generated.size()) + " vs " + std::to_string(prior.size()) +
                        ")");
  }
  if (generated.empty()) throw ArgumentError("prior_alignment: empty video");
  double sum = 0.0;
  for (std::size_t t = 0; t < generated.size(); ++t) {
    const auto zp = embedder.embed(prior[t], long(t));
    const auto zg = embedder.embed(generated[t], long(t));
    try {
      sum += cosine(zp, zg);
    } catch (const MetricError& e) {
      throw MetricError(std::string(e.what()) + " at frame " + std::to_string(t));
    }
  }
  return sum / double(generated.size());
}

// ---------------------------------------------------------------------------
// Seam diagnostic

// Mean squared luminance step across interior tile boundaries minus the mean
// squared step over the whole frame. Positive values indicate visible seams.
inline double seam_energy(const Frame& frame, const TilePlan& plan, std::uint32_t factor) {
  frame.check();
  const std::uint32_t h = frame.height;
  const std::uint32_t w = frame.width;
  const auto lum = frame.luminance();
  std::set<std::uint32_t> cols;
  std::set<std::uint32_t> rows;
  for (const Rect& r : plan.tiles) {
    for (std::uint64_t b : {std::uint64_t(r.col) * factor, std::uint64_t(r.col + r.width) * factor}) {
      if (b > 0 && b < w) cols.insert(std::uint32_t(b));
    }
    for (std::uint64_t b : {std::uint64_t(r.row) * factor, std::uint64_t(r.row + r.height) * factor}) {
      if (b > 0 && b < h) rows.insert(std::uint32_t(b));
    }
  }
  if (cols.empty() && rows.empty()) return 0.0;
  auto L = [&](std::uint32_t i, std::uint32_t j) { return lum[std::size_t(i) * w + j]; };

  double seam = 0.0;
  std::size_t seam_n = 0;
  for (std::uint32_t b : cols) {
    for (std::uint32_t i = 0; i < h; ++i) {
      const double d = L(i, b) - L(i, b - 1);
      seam += d * d;
      ++seam_n;
    }
  }
  for (std::uint32_t b : rows) {
    for (std::uint32_t j = 0; j < w; ++j) {
      const double d = L(b, j) - L(b - 1, j);
      seam += d * d;
      ++seam_n;
    }
  }

  double all = 0.0;
  std::size_t all_n = 0;
  for (std::uint32_t i = 0; i < h; ++i) {
    for (std::uint32_t j = 0; j < w; ++j) {
      if (j + 1 < w) {
        const double d = L(i, j + 1) - L(i, j);
        all += d * d;
        ++all_n;
      }
      if (i + 1 < h) {
        const double d = L(i + 1, j) - L(i, j);
        all += d * d;
        ++all_n;
      }
    }
  }
  return seam / double(seam_n) - (all_n ? all / double(all_n) : 0.0);
}

// ---------------------------------------------------------------------------
// Frame sources

inline Frame frame_from_image(const netpbm::Image& img) {
  const float scale = 255.0f / float(img.maxval);
  std::vector<float> v(img.samples.size());
  for (std::size_t k = 0; k < v.size(); ++k) v[k] = float(img.samples[k]) * scale;
  return img.channels == 1 ? Frame::gray(img.height, img.width, std::move(v))
                           : Frame::rgb(img.height, img.width, std::move(v));
}

// Frame t of a (C, T, H, W) tensor. Three channels are read as RGB; any other
// count is averaged into one luminance channel.
inline Frame frame_from_tensor(const LatentTensor& x, std::uint32_t t) {
  const Shape& s = x.shape();
  if (t >= s.t) throw ArgumentError("frame index out of range");
  const std::size_t n = s.plane();
  if (s.c == 3) {
    std::vector<float> v(3 * n);
    for (std::uint32_t c = 0; c < 3; ++c) {
      const float* p = x.plane(c, t);
      for (std::size_t k = 0; k < n; ++k) v[3 * k + c] = p[k];
    }
    return Frame::rgb(s.h, s.w, std::move(v));
  }
  std::vector<double> acc(n, 0.0);
  for (std::uint32_t c = 0; c < s.c; ++c) {
    const float* p = x.plane(c, t);
    for (std::size_t k = 0; k < n; ++k) acc[k] += p[k];
  }
  std::vector<float> v(n);
  for (std::size_t k = 0; k < n; ++k) v[k] = float(acc[k] / double(s.c));
  return Frame::gray(s.h, s.w, std::move(v));
}

inline Video video_from_tensor(const LatentTensor& x) {
  Video v;
  for (std::uint32_t t = 0; t < x.shape().t; ++t) v.push_back(frame_from_tensor(x, t));
  return v;
}

// Reads frames (*.ppm, *.pgm, single-frame *.flt) from a directory in name order.
inline Video read_video_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const auto ext = e.path().extension().string();
    if (e.is_regular_file() && (ext == ".ppm" || ext == ".pgm" || ext == ".flt")) {
      files.push_back(e.path());
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoError("no frames in " + dir.string());
  Video video;
  for (const auto& f : files) {
    if (f.extension() == ".flt") {
      const LatentTensor x = flt1::read(f);
      if (x.shape().t != 1) throw FormatError(f.string() + " holds more than one frame");
      video.push_back(frame_from_tensor(x, 0));
    } else {
      video.push_back(frame_from_image(netpbm::read(f)));
    }
  }
  return video;
}

}  // namespace fresco::metrics
