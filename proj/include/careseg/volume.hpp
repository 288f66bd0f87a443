#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "careseg/errors.hpp"

namespace careseg {

struct Dims {
  int64_t nx = 0, ny = 0, nz = 0;

  int64_t count() const { return nx * ny * nz; }
  bool operator==(const Dims&) const = default;
};

// Physical voxel spacing in mm. Stored as f32 to match the on-disk format.
struct Spacing {
  float sx = 1.0f, sy = 1.0f, sz = 1.0f;

  double voxel_ml() const { return double(sx) * sy * sz / 1000.0; }
  bool operator==(const Spacing&) const = default;
};

// Voxel (i,j,k) has physical center (i*sx, j*sy, k*sz); data is linear with
// x fastest, then y, then z.
inline int64_t voxel_index(const Dims& d, int64_t x, int64_t y, int64_t z) {
  return x + d.nx * (y + d.ny * z);
}

struct ScalarVolume {
  Dims dims;
  Spacing spacing;
  std::vector<float> data;

  float& at(int64_t x, int64_t y, int64_t z) { return data[voxel_index(dims, x, y, z)]; }
  float at(int64_t x, int64_t y, int64_t z) const { return data[voxel_index(dims, x, y, z)]; }
};

struct LabelVolume {
  Dims dims;
  Spacing spacing;
  uint8_t schema = 3;  // stage id of the label schema (see hierarchy)
  std::vector<uint8_t> data;

  uint8_t& at(int64_t x, int64_t y, int64_t z) { return data[voxel_index(dims, x, y, z)]; }
  uint8_t at(int64_t x, int64_t y, int64_t z) const { return data[voxel_index(dims, x, y, z)]; }
};

// K per-voxel class scores; channel-major (channel is the outermost axis).
struct ProbVolume {
  enum class Kind { Logits, Probs };

  Dims dims;
  Spacing spacing;
  int64_t channels = 0;
  Kind kind = Kind::Logits;
  std::vector<float> data;  // data[k * dims.count() + voxel]

  float& at(int64_t k, int64_t x, int64_t y, int64_t z) {
    return data[k * dims.count() + voxel_index(dims, x, y, z)];
  }
  float at(int64_t k, int64_t x, int64_t y, int64_t z) const {
    return data[k * dims.count() + voxel_index(dims, x, y, z)];
  }
};

ScalarVolume make_scalar(Dims dims, Spacing spacing, float fill = 0.0f);
LabelVolume make_labels(Dims dims, Spacing spacing, uint8_t fill = 0, uint8_t schema = 3);
ProbVolume make_probs(Dims dims, Spacing spacing, int64_t channels, ProbVolume::Kind kind);

// ---- MVOL file format -----------------------------------------------------
//
// little-endian, 31-byte header:
//   magic   6 bytes  "MVOL1\0"
//   dtype   u8       0 = f32 scalar, 1 = u8 label
//   dims    3 x u32
//   spacing 3 x f32  (mm)
// followed by the raw payload, x fastest.

using AnyVolume = std::variant<ScalarVolume, LabelVolume>;

AnyVolume read_mvol(const std::string& path);
ScalarVolume read_scalar_mvol(const std::string& path);
LabelVolume read_label_mvol(const std::string& path);
void write_mvol(const ScalarVolume& v, const std::string& path);
void write_mvol(const LabelVolume& v, const std::string& path);

// Optional JSON sidecar <name>.meta.json next to a .mvol file.
struct SidecarMeta {
  std::string case_id;
  std::string subgroup;  // "D8", "M1" or "M12"
};

std::string sidecar_path(const std::string& mvol_path);
void write_sidecar(const SidecarMeta& meta, const std::string& mvol_path);
std::optional<SidecarMeta> read_sidecar(const std::string& mvol_path);

// ---- resampling -----------------------------------------------------------

// Maps every output voxel center into source physical space
// (center-of-first-voxel alignment) and interpolates trilinearly.
// Out-of-bounds samples clamp to the nearest source voxel center.
ScalarVolume resample_trilinear(const ScalarVolume& src, Dims out_dims, Spacing out_spacing);

// Nearest-neighbor counterpart for label volumes.
LabelVolume resample_nearest(const LabelVolume& src, Dims out_dims, Spacing out_spacing);

// ---- channel utilities ----------------------------------------------------

ProbVolume one_hot(const LabelVolume& labels, int64_t channels);

// Per voxel the lowest channel index attaining the maximum (ties break low).
LabelVolume argmax_labels(const ProbVolume& p);

// Shannon entropy -sum q ln q per voxel, with 0 ln 0 := 0. Probs input only.
ScalarVolume entropy_map(const ProbVolume& p);

}  // namespace careseg
