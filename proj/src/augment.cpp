#include "careseg/augment.hpp"

#include <algorithm>
#include <cmath>

namespace careseg {

AugmentParams AugmentParams::identity(int64_t num_labels) {
  AugmentParams p;
  p.elastic.assign(size_t(kElasticNodes) * kElasticNodes * kElasticNodes * 3, 0.0);
  p.per_label_shift.assign(size_t(num_labels), 0.0);
  p.per_label_scale.assign(size_t(num_labels), 1.0);
  return p;
}

// ---- normalization -------------------------------------------------------------

namespace {

// percentile by linear interpolation between order statistics
double percentile_sorted(const std::vector<float>& sorted, double p) {
  const double rank = p / 100.0 * double(sorted.size() - 1);
  const size_t lo = size_t(rank);
  const size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double f = rank - double(lo);
  return double(sorted[lo]) + f * (double(sorted[hi]) - double(sorted[lo]));
}

}  // namespace

ScalarVolume normalize_percentile(const ScalarVolume& img) {
  std::vector<float> sorted = img.data;
  std::sort(sorted.begin(), sorted.end());
  const double p10 = percentile_sorted(sorted, 10.0);
  const double p90 = percentile_sorted(sorted, 90.0);
  if (!(p90 > p10))
    throw DegenerateIntensities("normalize_percentile: p10 == p90");
  const double scale = 2.0 / (p90 - p10);
  ScalarVolume out = img;
  const int64_t n = out.dims.count();
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i)
    out.data[size_t(i)] = float((double(img.data[size_t(i)]) - p10) * scale - 1.0);
  return out;
}

// ---- parameter sampling ----------------------------------------------------------

AugmentParams sample_params(Rng& rng, int64_t num_labels, const AugmentRanges& r) {
  AugmentParams p;
  for (auto& t : p.translation) t = rng.uniform(-r.translation_voxels, r.translation_voxels);
  for (auto& a : p.rotation) a = rng.uniform(-r.rotation_radians, r.rotation_radians);
  p.iso_scale = rng.uniform(r.iso_scale_lo, r.iso_scale_hi);
  for (auto& s : p.aniso_scale) s = rng.uniform(r.aniso_scale_lo, r.aniso_scale_hi);
  const int n = AugmentParams::kElasticNodes;
  p.elastic.resize(size_t(n) * n * n * 3);
  for (auto& e : p.elastic) e = rng.uniform(-r.elastic_voxels, r.elastic_voxels);
  p.intensity_shift = rng.uniform(-r.intensity_shift, r.intensity_shift);
  p.intensity_scale = rng.uniform(r.intensity_scale_lo, r.intensity_scale_hi);
  p.per_label_shift.resize(size_t(num_labels));
  p.per_label_scale.resize(size_t(num_labels));
  for (auto& s : p.per_label_shift) s = rng.uniform(-r.label_shift, r.label_shift);
  for (auto& s : p.per_label_scale) s = rng.uniform(r.label_scale_lo, r.label_scale_hi);
  return p;
}

// ---- spatial transform -------------------------------------------------------------

namespace {

struct Mat3 {
  double m[3][3];
};

Mat3 rotation_matrix(const std::array<double, 3>& angles) {
  const double cx = std::cos(angles[0]), sx = std::sin(angles[0]);
  const double cy = std::cos(angles[1]), sy = std::sin(angles[1]);
  const double cz = std::cos(angles[2]), sz = std::sin(angles[2]);
  // R = Rx * Ry * Rz (intrinsic XYZ)
  const Mat3 rx{{{1, 0, 0}, {0, cx, -sx}, {0, sx, cx}}};
  const Mat3 ry{{{cy, 0, sy}, {0, 1, 0}, {-sy, 0, cy}}};
  const Mat3 rz{{{cz, -sz, 0}, {sz, cz, 0}, {0, 0, 1}}};
  const auto mul = [](const Mat3& a, const Mat3& b) {
    Mat3 r{};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        for (int k = 0; k < 3; ++k) r.m[i][j] += a.m[i][k] * b.m[k][j];
    return r;
  };
  return mul(mul(rx, ry), rz);
}

struct Vec3 {
  double x, y, z;
};

// applies the transpose (inverse) of R, mapping output space back to source
inline Vec3 apply_rt(const Mat3& r, const Vec3& v) {
  return {r.m[0][0] * v.x + r.m[1][0] * v.y + r.m[2][0] * v.z,
          r.m[0][1] * v.x + r.m[1][1] * v.y + r.m[2][1] * v.z,
          r.m[0][2] * v.x + r.m[1][2] * v.y + r.m[2][2] * v.z};
}

// trilinear lookup of one displacement component on the elastic node lattice
class ElasticField {
 public:
  ElasticField(const std::vector<double>& nodes, Vec3 extent_mm, Vec3 disp_scale_mm)
      : nodes_(nodes), extent_(extent_mm), scale_(disp_scale_mm) {}

  bool active() const {
    for (double v : nodes_)
      if (v != 0.0) return true;
    return false;
  }

  Vec3 displacement(const Vec3& q) const {
    constexpr int N = AugmentParams::kElasticNodes;
    const auto coord = [](double v, double extent) {
      if (extent <= 0.0) return 0.0;
      return std::clamp(v / extent, 0.0, 1.0) * double(N - 1);
    };
    const double ux = coord(q.x, extent_.x), uy = coord(q.y, extent_.y), uz = coord(q.z, extent_.z);
    const int x0 = int(ux), y0 = int(uy), z0 = int(uz);
    const int x1 = std::min(x0 + 1, N - 1), y1 = std::min(y0 + 1, N - 1), z1 = std::min(z0 + 1, N - 1);
    const double fx = ux - x0, fy = uy - y0, fz = uz - z0;
    double out[3];
    for (int c = 0; c < 3; ++c) {
      const auto node = [&](int i, int j, int k) {
        return nodes_[size_t(((k * N + j) * N + i) * 3 + c)];
      };
      const double c00 = node(x0, y0, z0) + fx * (node(x1, y0, z0) - node(x0, y0, z0));
      const double c10 = node(x0, y1, z0) + fx * (node(x1, y1, z0) - node(x0, y1, z0));
      const double c01 = node(x0, y0, z1) + fx * (node(x1, y0, z1) - node(x0, y0, z1));
      const double c11 = node(x0, y1, z1) + fx * (node(x1, y1, z1) - node(x0, y1, z1));
      const double c0 = c00 + fy * (c10 - c00);
      const double c1 = c01 + fy * (c11 - c01);
      out[c] = c0 + fz * (c1 - c0);
    }
    return {out[0] * scale_.x, out[1] * scale_.y, out[2] * scale_.z};
  }

 private:
  const std::vector<double>& nodes_;
  Vec3 extent_;
  Vec3 scale_;
};

double sample_trilinear_clamped(const ScalarVolume& v, double ux, double uy, double uz) {
  ux = std::clamp(ux, 0.0, double(v.dims.nx - 1));
  uy = std::clamp(uy, 0.0, double(v.dims.ny - 1));
  uz = std::clamp(uz, 0.0, double(v.dims.nz - 1));
  const int64_t x0 = int64_t(ux), y0 = int64_t(uy), z0 = int64_t(uz);
  const int64_t x1 = std::min(x0 + 1, v.dims.nx - 1), y1 = std::min(y0 + 1, v.dims.ny - 1),
                z1 = std::min(z0 + 1, v.dims.nz - 1);
  const double fx = ux - double(x0), fy = uy - double(y0), fz = uz - double(z0);
  const double c00 = v.at(x0, y0, z0) + fx * (v.at(x1, y0, z0) - v.at(x0, y0, z0));
  const double c10 = v.at(x0, y1, z0) + fx * (v.at(x1, y1, z0) - v.at(x0, y1, z0));
  const double c01 = v.at(x0, y0, z1) + fx * (v.at(x1, y0, z1) - v.at(x0, y0, z1));
  const double c11 = v.at(x0, y1, z1) + fx * (v.at(x1, y1, z1) - v.at(x0, y1, z1));
  const double c0 = c00 + fy * (c10 - c00);
  const double c1 = c01 + fy * (c11 - c01);
  return c0 + fz * (c1 - c0);
}

uint8_t sample_nearest_clamped(const LabelVolume& v, double ux, double uy, double uz) {
  const int64_t x = std::clamp(int64_t(std::llround(ux)), int64_t(0), v.dims.nx - 1);
  const int64_t y = std::clamp(int64_t(std::llround(uy)), int64_t(0), v.dims.ny - 1);
  const int64_t z = std::clamp(int64_t(std::llround(uz)), int64_t(0), v.dims.nz - 1);
  return v.at(x, y, z);
}

}  // namespace

std::pair<ScalarVolume, LabelVolume> apply_spatial(const ScalarVolume& img,
                                                   const LabelVolume& labels,
                                                   const AugmentParams& p, Dims out_dims,
                                                   Spacing out_spacing) {
  if (!(img.dims == labels.dims) || !(img.spacing == labels.spacing))
    throw GeometryMismatch("apply_spatial: image and labels disagree on geometry");

  const Mat3 rot = rotation_matrix(p.rotation);
  const Vec3 center{double(img.dims.nx - 1) * img.spacing.sx * 0.5,
                    double(img.dims.ny - 1) * img.spacing.sy * 0.5,
                    double(img.dims.nz - 1) * img.spacing.sz * 0.5};
  const Vec3 extent{double(img.dims.nx - 1) * img.spacing.sx,
                    double(img.dims.ny - 1) * img.spacing.sy,
                    double(img.dims.nz - 1) * img.spacing.sz};
  // node displacements are in output-grid voxels; convert to mm
  const ElasticField elastic(p.elastic, extent,
                             {out_spacing.sx, out_spacing.sy, out_spacing.sz});
  const bool use_elastic = !p.elastic.empty() && elastic.active();
  const bool use_rotation =
      p.rotation[0] != 0.0 || p.rotation[1] != 0.0 || p.rotation[2] != 0.0;

  ScalarVolume oimg = make_scalar(out_dims, out_spacing);
  LabelVolume olab = make_labels(out_dims, out_spacing, 0, labels.schema);

#pragma omp parallel for schedule(static)
  for (int64_t z = 0; z < out_dims.nz; ++z)
    for (int64_t y = 0; y < out_dims.ny; ++y)
      for (int64_t x = 0; x < out_dims.nx; ++x) {
        // positive translation moves content toward +axis
        Vec3 q{double(x) * out_spacing.sx - p.translation[0] * out_spacing.sx,
               double(y) * out_spacing.sy - p.translation[1] * out_spacing.sy,
               double(z) * out_spacing.sz - p.translation[2] * out_spacing.sz};
        if (use_rotation) {
          const Vec3 d{q.x - center.x, q.y - center.y, q.z - center.z};
          const Vec3 r = apply_rt(rot, d);
          q = {r.x + center.x, r.y + center.y, r.z + center.z};
        }
        if (p.iso_scale != 1.0) {
          const double inv = 1.0 / p.iso_scale;
          q = {center.x + (q.x - center.x) * inv, center.y + (q.y - center.y) * inv,
               center.z + (q.z - center.z) * inv};
        }
        q = {center.x + (q.x - center.x) / p.aniso_scale[0],
             center.y + (q.y - center.y) / p.aniso_scale[1],
             center.z + (q.z - center.z) / p.aniso_scale[2]};
        if (use_elastic) {
          const Vec3 d = elastic.displacement(q);
          q = {q.x + d.x, q.y + d.y, q.z + d.z};
        }
        const double ux = q.x / img.spacing.sx;
        const double uy = q.y / img.spacing.sy;
        const double uz = q.z / img.spacing.sz;
        const int64_t i = voxel_index(out_dims, x, y, z);
        oimg.data[size_t(i)] = float(sample_trilinear_clamped(img, ux, uy, uz));
        olab.data[size_t(i)] = sample_nearest_clamped(labels, ux, uy, uz);
      }
  return {std::move(oimg), std::move(olab)};
}

ScalarVolume apply_intensity(const ScalarVolume& img, const LabelVolume& labels,
                             const AugmentParams& p) {
  if (!(img.dims == labels.dims))
    throw GeometryMismatch("apply_intensity: image and labels disagree on geometry");
  ScalarVolume out = img;
  const int64_t n = out.dims.count();
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) {
    double v = double(img.data[size_t(i)]) * p.intensity_scale + p.intensity_shift;
    const uint8_t k = labels.data[size_t(i)];
    if (k < p.per_label_scale.size()) v = v * p.per_label_scale[k] + p.per_label_shift[k];
    out.data[size_t(i)] = float(v);
  }
  return out;
}

ScalarVolume preprocess_eval(const ScalarVolume& img, Dims out_dims, Spacing out_spacing) {
  return resample_trilinear(normalize_percentile(img), out_dims, out_spacing);
}

}  // namespace careseg
