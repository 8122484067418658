// Copyright 2026 The AttCDC Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef ATTCDC_IMAGE_HPP_
#define ATTCDC_IMAGE_HPP_

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "attcdc/crc32.hpp"
#include "attcdc/error.hpp"
#include "attcdc/tensor.hpp"

namespace attcdc {

/// 8-bit image, channels interleaved (1 = gray, 3 = RGB).
struct ImageU8 {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<uint8_t> pixels;
};

namespace png {

// The codec is self-contained: writing emits zlib streams made of stored
// deflate blocks (byte-identical output for identical input), reading
// implements the full inflate so PNGs from ordinary encoders decode too.
// Supported: 8-bit depth, colour types 0/2/4/6, no interlace.

namespace detail {

inline void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v >> 24));
  out.push_back(static_cast<uint8_t>(v >> 16));
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v));
}

inline uint32_t read_u32(const uint8_t* p) {
  return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
         (static_cast<uint32_t>(p[2]) << 8) | static_cast<uint32_t>(p[3]);
}

inline uint32_t adler32(const uint8_t* data, size_t len) {
  uint32_t a = 1, b = 0;
  for (size_t i = 0; i < len; ++i) {
    a = (a + data[i]) % 65521u;
    b = (b + a) % 65521u;
  }
  return (b << 16) | a;
}

inline void append_chunk(std::vector<uint8_t>& out, const char type[5],
                         const std::vector<uint8_t>& payload) {
  put_u32(out, static_cast<uint32_t>(payload.size()));
  std::vector<uint8_t> body(type, type + 4);
  body.insert(body.end(), payload.begin(), payload.end());
  out.insert(out.end(), body.begin(), body.end());
  put_u32(out, crc32(body.data(), body.size()));
}

// zlib stream with stored (uncompressed) deflate blocks.
inline std::vector<uint8_t> zlib_store(const std::vector<uint8_t>& raw) {
  std::vector<uint8_t> out;
  out.push_back(0x78);
  out.push_back(0x01);
  size_t pos = 0;
  do {
    const size_t n = std::min<size_t>(raw.size() - pos, 65535);
    const bool last = pos + n == raw.size();
    out.push_back(last ? 1 : 0);
    out.push_back(static_cast<uint8_t>(n & 0xff));
    out.push_back(static_cast<uint8_t>(n >> 8));
    out.push_back(static_cast<uint8_t>(~n & 0xff));
    out.push_back(static_cast<uint8_t>((~n >> 8) & 0xff));
    out.insert(out.end(), raw.begin() + static_cast<std::ptrdiff_t>(pos),
               raw.begin() + static_cast<std::ptrdiff_t>(pos + n));
    pos += n;
  } while (pos < raw.size());
  put_u32(out, adler32(raw.data(), raw.size()));
  return out;
}

// ----- inflate -----

struct BitReader {
  const uint8_t* data;
  size_t len;
  size_t pos = 0;
  uint32_t bitbuf = 0;
  int bitcnt = 0;
  const std::string& path;

  BitReader(const uint8_t* d, size_t l, const std::string& p) : data(d), len(l), path(p) {}

  int bits(int need) {
    while (bitcnt < need) {
      if (pos >= len) throw FormatError(path + ": truncated deflate stream");
      bitbuf |= static_cast<uint32_t>(data[pos++]) << bitcnt;
      bitcnt += 8;
    }
    const int v = static_cast<int>(bitbuf & ((1u << need) - 1));
    bitbuf >>= need;
    bitcnt -= need;
    return v;
  }

  void align_byte() {
    bitbuf = 0;
    bitcnt = 0;
  }
};

struct Huffman {
  // canonical decode tables: count of codes per length, symbols in order
  std::vector<int> count;   // [16]
  std::vector<int> symbol;  // [n]

  void build(const std::vector<int>& lengths) {
    count.assign(16, 0);
    for (int l : lengths) count[static_cast<size_t>(l)]++;
    count[0] = 0;
    std::vector<int> offs(16, 0);
    for (int l = 1; l < 16; ++l) offs[static_cast<size_t>(l)] = offs[static_cast<size_t>(l - 1)] + count[static_cast<size_t>(l - 1)];
    symbol.assign(lengths.size(), 0);
    for (size_t s = 0; s < lengths.size(); ++s) {
      if (lengths[s]) symbol[static_cast<size_t>(offs[static_cast<size_t>(lengths[s])]++)] = static_cast<int>(s);
    }
  }

  int decode(BitReader& br) const {
    int code = 0, first = 0, index = 0;
    for (int len = 1; len < 16; ++len) {
      code |= br.bits(1);
      const int cnt = count[static_cast<size_t>(len)];
      if (code - first < cnt) return symbol[static_cast<size_t>(index + (code - first))];
      index += cnt;
      first = (first + cnt) << 1;
      code <<= 1;
    }
    throw FormatError(br.path + ": invalid huffman code");
  }
};

inline std::vector<uint8_t> inflate(const uint8_t* data, size_t len, const std::string& path,
                                    size_t expected_hint = 0) {
  BitReader br(data, len, path);
  std::vector<uint8_t> out;
  if (expected_hint) out.reserve(expected_hint);

  static const int len_base[29] = {3,  4,  5,  6,  7,  8,  9,  10, 11,  13,  15,  17,  19,  23, 27,
                                   31, 35, 43, 51, 59, 67, 83, 99, 115, 131, 163, 195, 227, 258};
  static const int len_extra[29] = {0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2,
                                    2, 3, 3, 3, 3, 4, 4, 4, 4, 5, 5, 5, 5, 0};
  static const int dist_base[30] = {1,    2,    3,    4,    5,    7,     9,     13,   17,   25,
                                    33,   49,   65,   97,   129,  193,   257,   385,  513,  769,
                                    1025, 1537, 2049, 3073, 4097, 6145,  8193,  12289, 16385, 24577};
  static const int dist_extra[30] = {0, 0, 0, 0, 1, 1, 2, 2,  3,  3,  4,  4,  5,  5,  6,
                                     6, 7, 7, 8, 8, 9, 9, 10, 10, 11, 11, 12, 12, 13, 13};

  bool final_block = false;
  while (!final_block) {
    final_block = br.bits(1) != 0;
    const int type = br.bits(2);
    if (type == 0) {  // stored
      br.align_byte();
      if (br.pos + 4 > br.len) throw FormatError(path + ": truncated stored block");
      const unsigned n = br.data[br.pos] | (br.data[br.pos + 1] << 8);
      const unsigned nn = br.data[br.pos + 2] | (br.data[br.pos + 3] << 8);
      if ((n ^ 0xffffu) != nn) throw FormatError(path + ": stored block length mismatch");
      br.pos += 4;
      if (br.pos + n > br.len) throw FormatError(path + ": truncated stored block");
      out.insert(out.end(), br.data + br.pos, br.data + br.pos + n);
      br.pos += n;
      continue;
    }
    if (type == 3) throw FormatError(path + ": invalid deflate block type");

    Huffman lit, dist;
    if (type == 1) {  // fixed tables
      std::vector<int> ll(288);
      for (int i = 0; i < 144; ++i) ll[static_cast<size_t>(i)] = 8;
      for (int i = 144; i < 256; ++i) ll[static_cast<size_t>(i)] = 9;
      for (int i = 256; i < 280; ++i) ll[static_cast<size_t>(i)] = 7;
      for (int i = 280; i < 288; ++i) ll[static_cast<size_t>(i)] = 8;
      lit.build(ll);
      dist.build(std::vector<int>(30, 5));
    } else {  // dynamic tables
      const int hlit = br.bits(5) + 257;
      const int hdist = br.bits(5) + 1;
      const int hclen = br.bits(4) + 4;
      static const int order[19] = {16, 17, 18, 0, 8, 7, 9, 6, 10, 5, 11, 4, 12, 3, 13, 2, 14, 1, 15};
      std::vector<int> cl(19, 0);
      for (int i = 0; i < hclen; ++i) cl[static_cast<size_t>(order[i])] = br.bits(3);
      Huffman clh;
      clh.build(cl);
      std::vector<int> lengths;
      lengths.reserve(static_cast<size_t>(hlit + hdist));
      while (static_cast<int>(lengths.size()) < hlit + hdist) {
        const int sym = clh.decode(br);
        if (sym < 16) {
          lengths.push_back(sym);
        } else if (sym == 16) {
          if (lengths.empty()) throw FormatError(path + ": bad code-length repeat");
          const int prev = lengths.back();
          for (int r = br.bits(2) + 3; r > 0; --r) lengths.push_back(prev);
        } else if (sym == 17) {
          for (int r = br.bits(3) + 3; r > 0; --r) lengths.push_back(0);
        } else {
          for (int r = br.bits(7) + 11; r > 0; --r) lengths.push_back(0);
        }
      }
      if (static_cast<int>(lengths.size()) != hlit + hdist) {
        throw FormatError(path + ": code-length overflow");
      }
      lit.build(std::vector<int>(lengths.begin(), lengths.begin() + hlit));
      dist.build(std::vector<int>(lengths.begin() + hlit, lengths.end()));
    }

    for (;;) {
      const int sym = lit.decode(br);
      if (sym < 256) {
        out.push_back(static_cast<uint8_t>(sym));
      } else if (sym == 256) {
        break;
      } else {
        if (sym > 285) throw FormatError(path + ": invalid length symbol");
        const int li = sym - 257;
        const int length = len_base[li] + br.bits(len_extra[li]);
        const int ds = dist.decode(br);
        if (ds > 29) throw FormatError(path + ": invalid distance symbol");
        const size_t distance = static_cast<size_t>(dist_base[ds] + br.bits(dist_extra[ds]));
        if (distance > out.size()) throw FormatError(path + ": distance past window start");
        for (int i = 0; i < length; ++i) out.push_back(out[out.size() - distance]);
      }
    }
  }
  return out;
}

inline int paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace detail

/// Encodes an 8-bit gray or RGB image; output bytes are a pure function of
/// the pixel data.
inline std::vector<uint8_t> encode(const ImageU8& img) {
  if (img.channels != 1 && img.channels != 3) {
    throw ContractError("png encode: only 1- or 3-channel images, got " +
                        std::to_string(img.channels));
  }
  if (img.width < 1 || img.height < 1 ||
      img.pixels.size() != static_cast<size_t>(img.width) * img.height * img.channels) {
    throw ContractError("png encode: pixel buffer does not match dimensions");
  }
  std::vector<uint8_t> out{0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  std::vector<uint8_t> ihdr;
  detail::put_u32(ihdr, static_cast<uint32_t>(img.width));
  detail::put_u32(ihdr, static_cast<uint32_t>(img.height));
  ihdr.push_back(8);                                   // bit depth
  ihdr.push_back(img.channels == 1 ? 0 : 2);           // colour type
  ihdr.push_back(0);                                   // compression
  ihdr.push_back(0);                                   // filter
  ihdr.push_back(0);                                   // no interlace
  detail::append_chunk(out, "IHDR", ihdr);

  const size_t stride = static_cast<size_t>(img.width) * img.channels;
  std::vector<uint8_t> raw;
  raw.reserve((stride + 1) * static_cast<size_t>(img.height));
  for (int y = 0; y < img.height; ++y) {
    raw.push_back(0);  // filter: none
    raw.insert(raw.end(), img.pixels.begin() + static_cast<std::ptrdiff_t>(y * stride),
               img.pixels.begin() + static_cast<std::ptrdiff_t>((y + 1) * stride));
  }
  detail::append_chunk(out, "IDAT", detail::zlib_store(raw));
  detail::append_chunk(out, "IEND", {});
  return out;
}

inline void write_file(const std::string& path, const ImageU8& img) {
  std::vector<uint8_t> bytes = encode(img);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("short write: " + path);
}

inline ImageU8 decode(const std::vector<uint8_t>& bytes, const std::string& path) {
  static const uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  if (bytes.size() < 8 || std::memcmp(bytes.data(), sig, 8) != 0) {
    throw FormatError(path + ": not a PNG file");
  }
  size_t pos = 8;
  int width = 0, height = 0, bit_depth = 0, colour = -1;
  std::vector<uint8_t> idat;
  bool saw_end = false;
  while (pos + 8 <= bytes.size() && !saw_end) {
    const uint32_t len = detail::read_u32(bytes.data() + pos);
    if (pos + 12 + len > bytes.size()) throw FormatError(path + ": truncated chunk");
    const char* type = reinterpret_cast<const char*>(bytes.data() + pos + 4);
    const uint8_t* payload = bytes.data() + pos + 8;
    const uint32_t expect = detail::read_u32(bytes.data() + pos + 8 + len);
    if (crc32(bytes.data() + pos + 4, len + 4) != expect) {
      throw FormatError(path + ": chunk CRC mismatch");
    }
    if (std::memcmp(type, "IHDR", 4) == 0) {
      if (len != 13) throw FormatError(path + ": bad IHDR");
      width = static_cast<int>(detail::read_u32(payload));
      height = static_cast<int>(detail::read_u32(payload + 4));
      bit_depth = payload[8];
      colour = payload[9];
      if (payload[12] != 0) throw FormatError(path + ": interlaced PNG not supported");
      if (bit_depth != 8) {
        throw FormatError(path + ": only 8-bit PNGs supported, got depth " +
                          std::to_string(bit_depth));
      }
      if (colour != 0 && colour != 2 && colour != 4 && colour != 6) {
        throw FormatError(path + ": unsupported colour type " + std::to_string(colour));
      }
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), payload, payload + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      saw_end = true;
    }
    pos += 12 + len;
  }
  if (width < 1 || height < 1) throw FormatError(path + ": missing IHDR");
  if (idat.size() < 6) throw FormatError(path + ": missing image data");

  const int src_ch = colour == 0 ? 1 : colour == 2 ? 3 : colour == 4 ? 2 : 4;
  const size_t stride = static_cast<size_t>(width) * src_ch;
  // skip the 2-byte zlib header; trailing adler is ignored by the inflater
  std::vector<uint8_t> raw = detail::inflate(idat.data() + 2, idat.size() - 2, path,
                                             (stride + 1) * static_cast<size_t>(height));
  if (raw.size() != (stride + 1) * static_cast<size_t>(height)) {
    throw FormatError(path + ": decompressed size mismatch");
  }

  // undo per-row filters in place
  std::vector<uint8_t> img(stride * static_cast<size_t>(height));
  const int bpp = src_ch;
  for (int y = 0; y < height; ++y) {
    const uint8_t filter = raw[(stride + 1) * static_cast<size_t>(y)];
    const uint8_t* src = raw.data() + (stride + 1) * static_cast<size_t>(y) + 1;
    uint8_t* dst = img.data() + stride * static_cast<size_t>(y);
    const uint8_t* up = y > 0 ? img.data() + stride * static_cast<size_t>(y - 1) : nullptr;
    for (size_t x = 0; x < stride; ++x) {
      const int a = x >= static_cast<size_t>(bpp) ? dst[x - static_cast<size_t>(bpp)] : 0;
      const int b = up ? up[x] : 0;
      const int c = (up && x >= static_cast<size_t>(bpp)) ? up[x - static_cast<size_t>(bpp)] : 0;
      int v = src[x];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += detail::paeth(a, b, c); break;
        default: throw FormatError(path + ": unknown filter " + std::to_string(filter));
      }
      dst[x] = static_cast<uint8_t>(v & 0xff);
    }
  }

  // normalise to gray or RGB, dropping alpha
  ImageU8 out;
  out.width = width;
  out.height = height;
  if (colour == 0) {
    out.channels = 1;
    out.pixels = std::move(img);
  } else if (colour == 4) {
    out.channels = 1;
    out.pixels.resize(static_cast<size_t>(width) * height);
    for (size_t i = 0; i < out.pixels.size(); ++i) out.pixels[i] = img[i * 2];
  } else {
    out.channels = 3;
    out.pixels.resize(static_cast<size_t>(width) * height * 3);
    const int sc = colour == 2 ? 3 : 4;
    for (size_t i = 0; i < static_cast<size_t>(width) * height; ++i) {
      out.pixels[i * 3 + 0] = img[i * static_cast<size_t>(sc) + 0];
      out.pixels[i * 3 + 1] = img[i * static_cast<size_t>(sc) + 1];
      out.pixels[i * 3 + 2] = img[i * static_cast<size_t>(sc) + 2];
    }
  }
  return out;
}

inline ImageU8 read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode(bytes, path);
}

}  // namespace png

/// Gray float plane in [0,1] from an 8-bit image; RGB collapses via the
/// BT.601 luma weights.
inline TensorT<float> to_gray_float(const ImageU8& img) {
  TensorT<float> out({img.height, img.width});
  const size_t n = static_cast<size_t>(img.width) * img.height;
  if (img.channels == 1) {
    for (size_t i = 0; i < n; ++i) out[static_cast<int64_t>(i)] = img.pixels[i] / 255.0f;
  } else {
    for (size_t i = 0; i < n; ++i) {
      const float r = img.pixels[i * 3 + 0], g = img.pixels[i * 3 + 1], b = img.pixels[i * 3 + 2];
      out[static_cast<int64_t>(i)] = (0.299f * r + 0.587f * g + 0.114f * b) / 255.0f;
    }
  }
  return out;
}

/// Bilinear resample of a (H,W) plane to (out_h, out_w), half-pixel centre
/// convention, edge clamped.
template <class T>
TensorT<T> bilinear_resize(const TensorT<T>& src, int out_h, int out_w) {
  if (src.rank() != 2) throw DimensionError("bilinear_resize expects (H,W), got " + src.shape_string());
  if (out_h < 1 || out_w < 1) throw ContractError("bilinear_resize: output extents must be >= 1");
  const int H = src.dim(0), W = src.dim(1);
  TensorT<T> dst({out_h, out_w});
  const double sy = static_cast<double>(H) / out_h;
  const double sx = static_cast<double>(W) / out_w;
  for (int y = 0; y < out_h; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    if (fy < 0) fy = 0;
    int y0 = static_cast<int>(fy);
    if (y0 > H - 1) y0 = H - 1;
    const int y1 = std::min(y0 + 1, H - 1);
    const double wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      if (fx < 0) fx = 0;
      int x0 = static_cast<int>(fx);
      if (x0 > W - 1) x0 = W - 1;
      const int x1 = std::min(x0 + 1, W - 1);
      const double wx = fx - x0;
      const double v00 = src[static_cast<int64_t>(y0) * W + x0];
      const double v01 = src[static_cast<int64_t>(y0) * W + x1];
      const double v10 = src[static_cast<int64_t>(y1) * W + x0];
      const double v11 = src[static_cast<int64_t>(y1) * W + x1];
      dst[static_cast<int64_t>(y) * out_w + x] =
          static_cast<T>((1 - wy) * ((1 - wx) * v00 + wx * v01) +
                         wy * ((1 - wx) * v10 + wx * v11));
    }
  }
  return dst;
}

}  // namespace attcdc

#endif  // ATTCDC_IMAGE_HPP_
