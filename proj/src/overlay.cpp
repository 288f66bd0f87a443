#include "careseg/overlay.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <zlib.h>

namespace careseg {

namespace {

void put_u32be(std::string& s, uint32_t v) {
  s.push_back(char((v >> 24) & 0xff));
  s.push_back(char((v >> 16) & 0xff));
  s.push_back(char((v >> 8) & 0xff));
  s.push_back(char(v & 0xff));
}

void put_chunk(std::string& out, const char type[4], const std::string& payload) {
  put_u32be(out, uint32_t(payload.size()));
  const size_t start = out.size();
  out.append(type, 4);
  out += payload;
  const uint32_t crc = uint32_t(
      crc32(0, reinterpret_cast<const Bytef*>(out.data() + start), uInt(4 + payload.size())));
  put_u32be(out, crc);
}

}  // namespace

void write_png(const std::string& path, const std::vector<uint8_t>& rgb, int64_t width,
               int64_t height) {
  if (int64_t(rgb.size()) != width * height * 3) throw IoFailure("write_png: bad buffer size");

  // raw scanlines with filter byte 0
  std::vector<uint8_t> raw(size_t(height * (1 + width * 3)));
  for (int64_t y = 0; y < height; ++y) {
    raw[size_t(y * (1 + width * 3))] = 0;
    std::memcpy(&raw[size_t(y * (1 + width * 3) + 1)], &rgb[size_t(y * width * 3)],
                size_t(width * 3));
  }
  uLongf comp_len = compressBound(uLong(raw.size()));
  std::vector<uint8_t> comp(comp_len);
  if (compress2(comp.data(), &comp_len, raw.data(), uLong(raw.size()), 6) != Z_OK)
    throw IoFailure("write_png: deflate failed");

  std::string out("\x89PNG\r\n\x1a\n", 8);
  std::string ihdr;
  put_u32be(ihdr, uint32_t(width));
  put_u32be(ihdr, uint32_t(height));
  ihdr.push_back(8);   // bit depth
  ihdr.push_back(2);   // color type: truecolor
  ihdr.push_back(0);   // compression
  ihdr.push_back(0);   // filter
  ihdr.push_back(0);   // interlace
  put_chunk(out, "IHDR", ihdr);
  put_chunk(out, "IDAT", std::string(reinterpret_cast<char*>(comp.data()), comp_len));
  put_chunk(out, "IEND", "");

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoFailure("cannot open " + path);
  f.write(out.data(), std::streamsize(out.size()));
  if (!f) throw IoFailure("write failed: " + path);
}

void write_overlay_slices(const ScalarVolume& img, const LabelVolume& labels,
                          const std::string& out_dir, const std::string& prefix) {
  if (!(img.dims == labels.dims)) throw GeometryMismatch("overlay: geometry mismatch");
  std::filesystem::create_directories(out_dir);

  float lo = img.data.empty() ? 0.0f : img.data[0], hi = lo;
  for (float v : img.data) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const float range = hi > lo ? hi - lo : 1.0f;

  static const uint8_t colors[5][3] = {
      {0, 0, 0}, {220, 40, 40}, {40, 200, 40}, {230, 220, 40}, {60, 90, 255}};

  const Dims d = img.dims;
  std::vector<uint8_t> rgb(size_t(d.nx * d.ny * 3));
  for (int64_t z = 0; z < d.nz; ++z) {
    for (int64_t y = 0; y < d.ny; ++y)
      for (int64_t x = 0; x < d.nx; ++x) {
        const float g = (img.at(x, y, z) - lo) / range;
        const uint8_t gray = uint8_t(std::clamp(g, 0.0f, 1.0f) * 255.0f);
        const uint8_t lbl = labels.at(x, y, z);
        uint8_t* px = &rgb[size_t((y * d.nx + x) * 3)];
        if (lbl == 0) {
          px[0] = px[1] = px[2] = gray;
        } else {
          for (int c = 0; c < 3; ++c) px[c] = uint8_t((gray + colors[lbl][c]) / 2);
        }
      }
    char name[64];
    std::snprintf(name, sizeof name, "%s_z%03d.png", prefix.c_str(), int(z));
    write_png(out_dir + "/" + name, rgb, d.nx, d.ny);
  }
}

}  // namespace careseg
