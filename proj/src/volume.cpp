#include "careseg/volume.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace careseg {

ScalarVolume make_scalar(Dims dims, Spacing spacing, float fill) {
  return ScalarVolume{dims, spacing, std::vector<float>(dims.count(), fill)};
}

LabelVolume make_labels(Dims dims, Spacing spacing, uint8_t fill, uint8_t schema) {
  return LabelVolume{dims, spacing, schema, std::vector<uint8_t>(dims.count(), fill)};
}

ProbVolume make_probs(Dims dims, Spacing spacing, int64_t channels, ProbVolume::Kind kind) {
  return ProbVolume{dims, spacing, channels, kind,
                    std::vector<float>(channels * dims.count(), 0.0f)};
}

// ---- MVOL I/O ---------------------------------------------------------------

namespace {

constexpr unsigned char kMagic[6] = {0x4D, 0x56, 0x4F, 0x4C, 0x31, 0x00};  // "MVOL1\0"
constexpr uint8_t kDtypeScalar = 0;
constexpr uint8_t kDtypeLabel = 1;

void put_u32le(std::string& out, uint32_t v) {
  out.push_back(char(v & 0xff));
  out.push_back(char((v >> 8) & 0xff));
  out.push_back(char((v >> 16) & 0xff));
  out.push_back(char((v >> 24) & 0xff));
}

void put_f32le(std::string& out, float f) {
  uint32_t v;
  std::memcpy(&v, &f, 4);
  put_u32le(out, v);
}

uint32_t get_u32le(const unsigned char* p) {
  return uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 | uint32_t(p[3]) << 24;
}

float get_f32le(const unsigned char* p) {
  const uint32_t v = get_u32le(p);
  float f;
  std::memcpy(&f, &v, 4);
  return f;
}

std::string encode_header(uint8_t dtype, const Dims& dims, const Spacing& sp) {
  std::string h(reinterpret_cast<const char*>(kMagic), 6);
  h.push_back(char(dtype));
  put_u32le(h, uint32_t(dims.nx));
  put_u32le(h, uint32_t(dims.ny));
  put_u32le(h, uint32_t(dims.nz));
  put_f32le(h, sp.sx);
  put_f32le(h, sp.sy);
  put_f32le(h, sp.sz);
  return h;  // 31 bytes
}

struct Header {
  uint8_t dtype;
  Dims dims;
  Spacing spacing;
};

Header read_header(std::ifstream& in, const std::string& path) {
  unsigned char buf[31];
  in.read(reinterpret_cast<char*>(buf), 31);
  if (in.gcount() != 31) throw TruncatedFile(path + ": header truncated");
  if (std::memcmp(buf, kMagic, 6) != 0) throw BadMagic(path + ": not an MVOL file");
  Header h;
  h.dtype = buf[6];
  if (h.dtype != kDtypeScalar && h.dtype != kDtypeLabel)
    throw UnknownDtype(path + ": unknown dtype " + std::to_string(h.dtype));
  h.dims = {int64_t(get_u32le(buf + 7)), int64_t(get_u32le(buf + 11)), int64_t(get_u32le(buf + 15))};
  h.spacing = {get_f32le(buf + 19), get_f32le(buf + 23), get_f32le(buf + 27)};
  return h;
}

void write_file(const std::string& path, const std::string& header, const void* payload,
                size_t payload_bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoFailure("cannot open " + path + " for writing");
  out.write(header.data(), std::streamsize(header.size()));
  out.write(static_cast<const char*>(payload), std::streamsize(payload_bytes));
  if (!out) throw IoFailure("write failed: " + path);
}

}  // namespace

void write_mvol(const ScalarVolume& v, const std::string& path) {
  const std::string h = encode_header(kDtypeScalar, v.dims, v.spacing);
  // payload is written through the same LE packing as the header fields
  std::string payload;
  payload.reserve(v.data.size() * 4);
  for (float f : v.data) put_f32le(payload, f);
  write_file(path, h, payload.data(), payload.size());
}

void write_mvol(const LabelVolume& v, const std::string& path) {
  const std::string h = encode_header(kDtypeLabel, v.dims, v.spacing);
  write_file(path, h, v.data.data(), v.data.size());
}

AnyVolume read_mvol(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoFailure("cannot open " + path);
  const Header h = read_header(in, path);
  const int64_t n = h.dims.count();
  if (h.dtype == kDtypeScalar) {
    std::vector<unsigned char> raw(size_t(n) * 4);
    in.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size()));
    if (in.gcount() != std::streamsize(raw.size()))
      throw TruncatedFile(path + ": payload truncated");
    ScalarVolume v{h.dims, h.spacing, std::vector<float>(size_t(n))};
    for (int64_t i = 0; i < n; ++i) v.data[size_t(i)] = get_f32le(raw.data() + 4 * i);
    return v;
  }
  LabelVolume v{h.dims, h.spacing, 3, std::vector<uint8_t>(size_t(n))};
  in.read(reinterpret_cast<char*>(v.data.data()), n);
  if (in.gcount() != n) throw TruncatedFile(path + ": payload truncated");
  return v;
}

ScalarVolume read_scalar_mvol(const std::string& path) {
  AnyVolume v = read_mvol(path);
  if (auto* s = std::get_if<ScalarVolume>(&v)) return std::move(*s);
  throw UnknownDtype(path + ": expected scalar payload, found labels");
}

LabelVolume read_label_mvol(const std::string& path) {
  AnyVolume v = read_mvol(path);
  if (auto* l = std::get_if<LabelVolume>(&v)) return std::move(*l);
  throw UnknownDtype(path + ": expected label payload, found scalars");
}

// ---- sidecar ----------------------------------------------------------------

std::string sidecar_path(const std::string& mvol_path) {
  std::string p = mvol_path;
  const std::string suffix = ".mvol";
  if (p.size() >= suffix.size() && p.compare(p.size() - suffix.size(), suffix.size(), suffix) == 0)
    p.erase(p.size() - suffix.size());
  return p + ".meta.json";
}

void write_sidecar(const SidecarMeta& meta, const std::string& mvol_path) {
  nlohmann::json j;
  j["case_id"] = meta.case_id;
  j["subgroup"] = meta.subgroup;
  std::ofstream out(sidecar_path(mvol_path), std::ios::trunc);
  if (!out) throw IoFailure("cannot write sidecar for " + mvol_path);
  out << j.dump(2) << "\n";
}

std::optional<SidecarMeta> read_sidecar(const std::string& mvol_path) {
  std::ifstream in(sidecar_path(mvol_path));
  if (!in) return std::nullopt;
  nlohmann::json j = nlohmann::json::parse(in);
  SidecarMeta m;
  m.case_id = j.value("case_id", "");
  m.subgroup = j.value("subgroup", "");
  return m;
}

// ---- resampling -------------------------------------------------------------

namespace {

// source coordinate (in voxel units) of an output voxel center
inline double src_coord(int64_t i, float out_sp, float src_sp) {
  return double(i) * double(out_sp) / double(src_sp);
}

}  // namespace

ScalarVolume resample_trilinear(const ScalarVolume& src, Dims out_dims, Spacing out_spacing) {
  ScalarVolume out{out_dims, out_spacing, std::vector<float>(out_dims.count())};
  const Dims sd = src.dims;
#pragma omp parallel for schedule(static)
  for (int64_t z = 0; z < out_dims.nz; ++z) {
    double uz = src_coord(z, out_spacing.sz, src.spacing.sz);
    uz = std::clamp(uz, 0.0, double(sd.nz - 1));
    const int64_t z0 = int64_t(uz);
    const int64_t z1 = std::min(z0 + 1, sd.nz - 1);
    const double fz = uz - double(z0);
    for (int64_t y = 0; y < out_dims.ny; ++y) {
      double uy = src_coord(y, out_spacing.sy, src.spacing.sy);
      uy = std::clamp(uy, 0.0, double(sd.ny - 1));
      const int64_t y0 = int64_t(uy);
      const int64_t y1 = std::min(y0 + 1, sd.ny - 1);
      const double fy = uy - double(y0);
      float* orow = &out.data[voxel_index(out_dims, 0, y, z)];
      for (int64_t x = 0; x < out_dims.nx; ++x) {
        double ux = src_coord(x, out_spacing.sx, src.spacing.sx);
        ux = std::clamp(ux, 0.0, double(sd.nx - 1));
        const int64_t x0 = int64_t(ux);
        const int64_t x1 = std::min(x0 + 1, sd.nx - 1);
        const double fx = ux - double(x0);
        const double c00 = src.at(x0, y0, z0) + fx * (src.at(x1, y0, z0) - src.at(x0, y0, z0));
        const double c10 = src.at(x0, y1, z0) + fx * (src.at(x1, y1, z0) - src.at(x0, y1, z0));
        const double c01 = src.at(x0, y0, z1) + fx * (src.at(x1, y0, z1) - src.at(x0, y0, z1));
        const double c11 = src.at(x0, y1, z1) + fx * (src.at(x1, y1, z1) - src.at(x0, y1, z1));
        const double c0 = c00 + fy * (c10 - c00);
        const double c1 = c01 + fy * (c11 - c01);
        orow[x] = float(c0 + fz * (c1 - c0));
      }
    }
  }
  return out;
}

LabelVolume resample_nearest(const LabelVolume& src, Dims out_dims, Spacing out_spacing) {
  LabelVolume out{out_dims, out_spacing, src.schema, std::vector<uint8_t>(out_dims.count())};
  const Dims sd = src.dims;
#pragma omp parallel for schedule(static)
  for (int64_t z = 0; z < out_dims.nz; ++z) {
    const int64_t zi = std::clamp(int64_t(std::llround(src_coord(z, out_spacing.sz, src.spacing.sz))),
                                  int64_t(0), sd.nz - 1);
    for (int64_t y = 0; y < out_dims.ny; ++y) {
      const int64_t yi = std::clamp(int64_t(std::llround(src_coord(y, out_spacing.sy, src.spacing.sy))),
                                    int64_t(0), sd.ny - 1);
      uint8_t* orow = &out.data[voxel_index(out_dims, 0, y, z)];
      for (int64_t x = 0; x < out_dims.nx; ++x) {
        const int64_t xi = std::clamp(int64_t(std::llround(src_coord(x, out_spacing.sx, src.spacing.sx))),
                                      int64_t(0), sd.nx - 1);
        orow[x] = src.at(xi, yi, zi);
      }
    }
  }
  return out;
}

// ---- channel utilities --------------------------------------------------------

ProbVolume one_hot(const LabelVolume& labels, int64_t channels) {
  const int64_t n = labels.dims.count();
  ProbVolume p = make_probs(labels.dims, labels.spacing, channels, ProbVolume::Kind::Probs);
  for (int64_t i = 0; i < n; ++i) {
    const uint8_t code = labels.data[size_t(i)];
    if (code >= channels)
      throw CodeOutOfRange("label code " + std::to_string(code) + " >= K=" + std::to_string(channels));
    p.data[size_t(code) * n + i] = 1.0f;
  }
  return p;
}

LabelVolume argmax_labels(const ProbVolume& p) {
  const int64_t n = p.dims.count();
  const int64_t K = p.channels;
  uint8_t schema = 3;
  if (K == 3) schema = 1;
  if (K == 4) schema = 2;
  LabelVolume out{p.dims, p.spacing, schema, std::vector<uint8_t>(size_t(n))};
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) {
    int64_t best = 0;
    float best_v = p.data[size_t(i)];
    for (int64_t k = 1; k < K; ++k) {
      const float v = p.data[size_t(k) * n + i];
      if (v > best_v) {
        best_v = v;
        best = k;
      }
    }
    out.data[size_t(i)] = uint8_t(best);
  }
  return out;
}

ScalarVolume entropy_map(const ProbVolume& p) {
  if (p.kind != ProbVolume::Kind::Probs)
    throw NotProbabilities("entropy_map expects a Probs volume");
  const int64_t n = p.dims.count();
  ScalarVolume out{p.dims, p.spacing, std::vector<float>(size_t(n))};
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) {
    double h = 0.0;
    for (int64_t k = 0; k < p.channels; ++k) {
      const double q = p.data[size_t(k) * n + i];
      if (q > 0.0) h -= q * std::log(q);
    }
    out.data[size_t(i)] = float(h);
  }
  return out;
}

}  // namespace careseg
