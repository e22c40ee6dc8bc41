#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "dfo/errors.hpp"
#include "dfo/grid.hpp"

namespace dfo {

// Image grids serialize as binary PGM (C=1) / PPM (C=3), maxval 255, values
// mapped from [0,1]. Feature/depth/mask grids use the DFOG format: a 16-byte
// header (magic "DFOG", u32 H, u32 W, u32 C, little-endian) followed by
// H*W*C float32 values in row-major order with interleaved channels.

namespace detail {

inline void put_u32_le(std::ostream& os, uint32_t v) {
  const std::array<char, 4> b = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                                 static_cast<char>((v >> 16) & 0xff),
                                 static_cast<char>((v >> 24) & 0xff)};
  os.write(b.data(), 4);
}

inline uint32_t get_u32_le(std::istream& is, const std::string& path) {
  std::array<unsigned char, 4> b;
  is.read(reinterpret_cast<char*>(b.data()), 4);
  if (!is) throw IoError("truncated header in " + path);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

inline void put_f32_le(std::ostream& os, float v) {
  static_assert(sizeof(float) == 4);
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  if constexpr (std::endian::native == std::endian::big)
    bits = __builtin_bswap32(bits);
  os.write(reinterpret_cast<const char*>(&bits), 4);
}

}  // namespace detail

inline void write_dfog(const Grid& g, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os.write("DFOG", 4);
  detail::put_u32_le(os, static_cast<uint32_t>(g.height()));
  detail::put_u32_le(os, static_cast<uint32_t>(g.width()));
  detail::put_u32_le(os, static_cast<uint32_t>(g.channels()));
  for (double v : g.data()) detail::put_f32_le(os, static_cast<float>(v));
  if (!os) throw IoError("write failed for " + path);
}

inline Grid read_dfog(const std::string& path, GridTag tag) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "DFOG", 4) != 0)
    throw IoError("bad magic in " + path);
  const uint32_t H = detail::get_u32_le(is, path);
  const uint32_t W = detail::get_u32_le(is, path);
  const uint32_t C = detail::get_u32_le(is, path);
  if (H == 0 || W == 0 || C == 0 || H > (1u << 20) || W > (1u << 20) || C > (1u << 12))
    throw IoError("implausible dimensions in " + path);
  Grid g(static_cast<int>(H), static_cast<int>(W), static_cast<int>(C), tag);
  std::vector<unsigned char> buf(static_cast<size_t>(H) * W * C * 4);
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!is) throw IoError("truncated data in " + path);
  for (size_t i = 0; i < g.data().size(); ++i) {
    uint32_t bits = static_cast<uint32_t>(buf[4 * i]) | (static_cast<uint32_t>(buf[4 * i + 1]) << 8) |
                    (static_cast<uint32_t>(buf[4 * i + 2]) << 16) |
                    (static_cast<uint32_t>(buf[4 * i + 3]) << 24);
    float f;
    std::memcpy(&f, &bits, 4);
    g.data()[i] = static_cast<double>(f);
  }
  return g;
}

/// Binary PGM (1 channel) or PPM (3 channels), maxval 255.
inline void write_pnm(const Grid& g, const std::string& path) {
  if (g.channels() != 1 && g.channels() != 3)
    throw IoError("PGM/PPM supports 1 or 3 channels, got " + std::to_string(g.channels()));
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os << (g.channels() == 1 ? "P5" : "P6") << "\n"
     << g.width() << " " << g.height() << "\n255\n";
  for (double v : g.data()) {
    const double clamped = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
    os.put(static_cast<char>(static_cast<int>(std::lround(clamped * 255.0))));
  }
  if (!os) throw IoError("write failed for " + path);
}

inline Grid read_pnm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  std::string magic;
  is >> magic;
  if (magic != "P5" && magic != "P6") throw IoError("bad magic in " + path);
  int w = 0, h = 0, maxval = 0;
  is >> w >> h >> maxval;
  if (!is || w < 1 || h < 1 || maxval != 255)
    throw IoError("unsupported PNM header in " + path);
  is.get();  // single whitespace after maxval
  const int C = magic == "P5" ? 1 : 3;
  Grid g(h, w, C, GridTag::Image);
  std::vector<unsigned char> buf(static_cast<size_t>(h) * w * C);
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!is) throw IoError("truncated data in " + path);
  for (size_t i = 0; i < buf.size(); ++i) g.data()[i] = buf[i] / 255.0;
  return g;
}

}  // namespace dfo
