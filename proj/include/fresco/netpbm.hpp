#pragma once

#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "fresco/error.hpp"
#include "fresco/tensor.hpp"

namespace fresco::netpbm {

// Binary PGM (P5, one channel) or PPM (P6, three channels), interleaved.
struct Image {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::uint32_t channels = 1;
  std::uint32_t maxval = 255;
  std::vector<std::uint16_t> samples;

  std::uint16_t at(std::uint32_t row, std::uint32_t col, std::uint32_t ch = 0) const {
    return samples[(std::size_t(row) * width + col) * channels + ch];
  }
};

namespace detail {

class HeaderReader {
 public:
  explicit HeaderReader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  std::uint32_t next_uint() {
    skip_space_and_comments();
    if (pos_ >= bytes_.size() || !std::isdigit(bytes_[pos_])) {
      throw FormatError("netpbm: expected integer in header");
    }
    std::uint64_t v = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      v = v * 10 + (bytes_[pos_++] - '0');
      if (v > 0xffffffffULL) throw FormatError("netpbm: header integer overflow");
    }
    return std::uint32_t(v);
  }

  // Exactly one whitespace byte separates maxval from the raster.
  std::size_t raster_start() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) {
      throw FormatError("netpbm: missing separator before raster");
    }
    return pos_ + 1;
  }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 2;
};

}  // namespace detail

inline Image decode(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw FormatError("netpbm: only binary P5/P6 files are supported");
  }
  Image img;
  img.channels = bytes[1] == '5' ? 1 : 3;
  detail::HeaderReader hdr(bytes);
  img.width = hdr.next_uint();
  img.height = hdr.next_uint();
  img.maxval = hdr.next_uint();
  if (img.width == 0 || img.height == 0) throw FormatError("netpbm: zero image size");
  if (img.maxval == 0 || img.maxval > 65535) throw FormatError("netpbm: bad maxval");
  const std::size_t start = hdr.raster_start();
  const std::size_t count = std::size_t(img.width) * img.height * img.channels;
  const std::size_t bps = img.maxval < 256 ? 1 : 2;
  if (bytes.size() < start + count * bps) throw FormatError("netpbm: truncated raster");
  img.samples.resize(count);
  for (std::size_t k = 0; k < count; ++k) {
    std::uint16_t v = bps == 1 ? bytes[start + k]
                               : std::uint16_t(bytes[start + 2 * k] << 8 | bytes[start + 2 * k + 1]);
    if (v > img.maxval) throw FormatError("netpbm: sample exceeds maxval");
    img.samples[k] = v;
  }
  return img;
}

inline Image read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode(bytes);
}

inline std::vector<std::uint8_t> encode(const Image& img) {
  if (img.channels != 1 && img.channels != 3) throw ArgumentError("netpbm: channels must be 1 or 3");
  const std::string header = std::string(img.channels == 1 ? "P5" : "P6") + "\n" +
                             std::to_string(img.width) + " " + std::to_string(img.height) + "\n" +
                             std::to_string(img.maxval) + "\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  for (std::uint16_t v : img.samples) {
    if (img.maxval > 255) out.push_back(std::uint8_t(v >> 8));
    out.push_back(std::uint8_t(v & 0xff));
  }
  return out;
}

inline void write(const std::filesystem::path& path, const Image& img) {
  flt1::write_bytes_atomic(path, encode(img));
}

}  // namespace fresco::netpbm
