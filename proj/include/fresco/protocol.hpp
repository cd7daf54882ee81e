#pragma once

// FDP1: framed messages between the sampler and an external worker process.
//
//   frame   := "FDP1" | u8 type | u64 LE payload length | payload
//
// Payloads by message type:
//   hello            u32 protocol version (both directions, once per session)
//   denoise_request  u32 step | f32 t | f32 sigma | u32 row, col, height, width
//                    | u16 conditioning length | conditioning bytes | FLT1 tile
//   denoise_response u8 kind (0 flow, 1 eps) | FLT1 tile
//   embed_request    FLT1 frame (channels, 1, height, width)
//   embed_response   u32 dim | dim x f32
//   error            UTF-8 message
//   shutdown         empty
// All integers and reals are little-endian.

#include <poll.h>
#include <unistd.h>

#include <array>
#include <bit>
#include <cerrno>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "fresco/denoiser.hpp"
#include "fresco/error.hpp"
#include "fresco/tensor.hpp"

namespace fresco::fdp {

inline constexpr char kMagic[4] = {'F', 'D', 'P', '1'};
inline constexpr std::uint32_t kProtocolVersion = 1;
inline constexpr std::size_t kHeaderBytes = 13;
// Frames above this size are rejected as malformed rather than allocated.
inline constexpr std::uint64_t kMaxPayload = 1ULL << 34;

enum class MessageType : std::uint8_t {
  hello = 0x01,
  denoise_request = 0x02,
  denoise_response = 0x03,
  embed_request = 0x04,
  embed_response = 0x05,
  error = 0x06,
  shutdown = 0x07,
};

inline bool known_type(std::uint8_t t) { return t >= 0x01 && t <= 0x07; }

struct Frame {
  MessageType type = MessageType::error;
  std::vector<std::uint8_t> payload;
};

// ---------------------------------------------------------------------------
// Byte-level helpers

class Writer {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void raw(std::span<const std::uint8_t> b) { bytes_.insert(bytes_.end(), b.begin(), b.end()); }

  std::vector<std::uint8_t>& bytes() noexcept { return bytes_; }

 private:
  void put(std::uint64_t v, int n) {
    for (int k = 0; k < n; ++k) bytes_.push_back(std::uint8_t(v >> (8 * k)));
  }
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint8_t u8() { return std::uint8_t(get(1)); }
  std::uint16_t u16() { return std::uint16_t(get(2)); }
  std::uint32_t u32() { return std::uint32_t(get(4)); }
  std::uint64_t u64() { return get(8); }
  float f32() { return std::bit_cast<float>(u32()); }

  std::span<const std::uint8_t> take(std::size_t n) {
    need(n);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  LatentTensor tensor() {
    std::size_t used = 0;
    try {
      LatentTensor x = flt1::decode(bytes_.subspan(pos_), &used);
      pos_ += used;
      return x;
    } catch (const FormatError& e) {
      throw MalformedFrameError(std::string("bad tensor payload: ") + e.what(), -1);
    }
  }

  bool done() const noexcept { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw MalformedFrameError("payload truncated", -1);
  }
  std::uint64_t get(int n) {
    need(std::size_t(n));
    std::uint64_t v = 0;
    for (int k = 0; k < n; ++k) v |= std::uint64_t(bytes_[pos_ + k]) << (8 * k);
    pos_ += std::size_t(n);
    return v;
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> encode_frame(MessageType type,
                                              std::span<const std::uint8_t> payload) {
  Writer w;
  w.raw(std::span(reinterpret_cast<const std::uint8_t*>(kMagic), 4));
  w.u8(std::uint8_t(type));
  w.u64(payload.size());
  w.raw(payload);
  return std::move(w.bytes());
}

// ---------------------------------------------------------------------------
// Message codecs

inline std::vector<std::uint8_t> encode_hello() {
  Writer w;
  w.u32(kProtocolVersion);
  return std::move(w.bytes());
}

inline std::uint32_t decode_hello(std::span<const std::uint8_t> payload) {
  Reader r(payload);
  const std::uint32_t v = r.u32();
  if (!r.done()) throw MalformedFrameError("hello: trailing bytes", -1);
  return v;
}

inline std::vector<std::uint8_t> encode_denoise_request(const DenoiserRequest& req) {
  if (req.conditioning.size() > 0xffff) throw ArgumentError("conditioning id longer than 65535");
  Writer w;
  w.u32(req.step);
  w.f32(float(req.t));
  w.f32(float(req.sigma));
  w.u32(req.rect.row);
  w.u32(req.rect.col);
  w.u32(req.rect.height);
  w.u32(req.rect.width);
  w.u16(std::uint16_t(req.conditioning.size()));
  w.raw(std::span(reinterpret_cast<const std::uint8_t*>(req.conditioning.data()),
                  req.conditioning.size()));
  w.raw(flt1::encode(req.tile));
  return std::move(w.bytes());
}

inline DenoiserRequest decode_denoise_request(std::span<const std::uint8_t> payload) {
  Reader r(payload);
  DenoiserRequest req;
  req.step = r.u32();
  req.t = r.f32();
  req.sigma = r.f32();
  req.rect.row = r.u32();
  req.rect.col = r.u32();
  req.rect.height = r.u32();
  req.rect.width = r.u32();
  const std::uint16_t n = r.u16();
  const auto cond = r.take(n);
  req.conditioning.assign(cond.begin(), cond.end());
  req.tile = r.tensor();
  if (!r.done()) throw MalformedFrameError("denoise request: trailing bytes", -1);
  return req;
}

inline std::vector<std::uint8_t> encode_denoise_response(const DenoiserResponse& res) {
  Writer w;
  w.u8(std::uint8_t(res.kind));
  w.raw(flt1::encode(res.prediction));
  return std::move(w.bytes());
}

inline DenoiserResponse decode_denoise_response(std::span<const std::uint8_t> payload) {
  Reader r(payload);
  const std::uint8_t kind = r.u8();
  if (kind > 1) throw MalformedFrameError("denoise response: unknown kind " + std::to_string(kind), -1);
  DenoiserResponse res{r.tensor(), Prediction(kind)};
  if (!r.done()) throw MalformedFrameError("denoise response: trailing bytes", -1);
  return res;
}

inline std::vector<std::uint8_t> encode_embedding(std::span<const float> z) {
  Writer w;
  w.u32(std::uint32_t(z.size()));
  for (float v : z) w.f32(v);
  return std::move(w.bytes());
}

inline std::vector<float> decode_embedding(std::span<const std::uint8_t> payload) {
  Reader r(payload);
  const std::uint32_t n = r.u32();
  if (n == 0) throw MalformedFrameError("embedding: zero dimension", -1);
  if ((payload.size() - 4) / 4 < n) throw MalformedFrameError("embedding: truncated", -1);
  std::vector<float> z(n);
  for (auto& v : z) v = r.f32();
  if (!r.done()) throw MalformedFrameError("embedding: trailing bytes", -1);
  return z;
}

// ---------------------------------------------------------------------------
// Frame transport over file descriptors

using Clock = std::chrono::steady_clock;

inline void write_all(int fd, std::span<const std::uint8_t> bytes, long item = -1) {
  std::size_t off = 0;
  while (off < bytes.size()) {
    const ssize_t n = ::write(fd, bytes.data() + off, bytes.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw BrokenPipeError(std::string("write to worker failed: ") + std::strerror(errno), item);
    }
    off += std::size_t(n);
  }
}

inline void write_frame(int fd, MessageType type, std::span<const std::uint8_t> payload,
                        long item = -1) {
  write_all(fd, encode_frame(type, payload), item);
}

// Reads exactly out.size() bytes before the deadline. A negative timeout
// means wait forever.
inline void read_exact(int fd, std::span<std::uint8_t> out, Clock::time_point deadline,
                       bool has_deadline, long item) {
  std::size_t off = 0;
  while (off < out.size()) {
    if (has_deadline) {
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now());
      if (left.count() <= 0) throw TimeoutError("worker response timed out", item);
      pollfd p{fd, POLLIN, 0};
      const int rc = ::poll(&p, 1, int(std::min<long long>(left.count(), 1 << 30)));
      if (rc < 0) {
        if (errno == EINTR) continue;
        throw BrokenPipeError(std::string("poll failed: ") + std::strerror(errno), item);
      }
      if (rc == 0) throw TimeoutError("worker response timed out", item);
    }
    const ssize_t n = ::read(fd, out.data() + off, out.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw BrokenPipeError(std::string("read from worker failed: ") + std::strerror(errno), item);
    }
    if (n == 0) throw BrokenPipeError("worker closed its output", item);
    off += std::size_t(n);
  }
}

inline Frame read_frame(int fd, std::chrono::milliseconds timeout, long item = -1) {
  const bool has_deadline = timeout.count() >= 0;
  const auto deadline = Clock::now() + timeout;
  std::array<std::uint8_t, kHeaderBytes> hdr{};
  read_exact(fd, hdr, deadline, has_deadline, item);
  if (std::memcmp(hdr.data(), kMagic, 4) != 0) throw MalformedFrameError("bad frame magic", item);
  if (!known_type(hdr[4])) {
    throw MalformedFrameError("unknown message type " + std::to_string(hdr[4]), item);
  }
  std::uint64_t len = 0;
  for (int k = 0; k < 8; ++k) len |= std::uint64_t(hdr[5 + k]) << (8 * k);
  if (len > kMaxPayload) throw MalformedFrameError("frame length out of range", item);
  Frame f;
  f.type = MessageType(hdr[4]);
  f.payload.resize(std::size_t(len));
  read_exact(fd, f.payload, deadline, has_deadline, item);
  return f;
}

}  // namespace fresco::fdp
