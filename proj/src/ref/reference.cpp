#include "careseg/reference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace careseg::ref {

template <class T>
Tensor5<T> conv3d(const Tensor5<T>& in, const Tensor5<T>& k, const std::vector<T>& bias) {
  const int64_t rx = k.dx / 2, ry = k.dy / 2, rz = k.dz / 2;
  Tensor5<T> out(in.n, k.n, in.dx, in.dy, in.dz);
  for (int64_t b = 0; b < in.n; ++b)
    for (int64_t co = 0; co < k.n; ++co)
      for (int64_t z = 0; z < in.dz; ++z)
        for (int64_t y = 0; y < in.dy; ++y)
          for (int64_t x = 0; x < in.dx; ++x) {
            double acc = double(bias[size_t(co)]);
            for (int64_t ci = 0; ci < in.c; ++ci)
              for (int64_t kz = 0; kz < k.dz; ++kz)
                for (int64_t ky = 0; ky < k.dy; ++ky)
                  for (int64_t kx = 0; kx < k.dx; ++kx) {
                    const int64_t sx = x + kx - rx, sy = y + ky - ry, sz = z + kz - rz;
                    if (sx < 0 || sx >= in.dx || sy < 0 || sy >= in.dy || sz < 0 || sz >= in.dz)
                      continue;  // zero padding
                    acc += double(k.at(co, ci, kx, ky, kz)) * double(in.at(b, ci, sx, sy, sz));
                  }
            out.at(b, co, x, y, z) = T(acc);
          }
  return out;
}

template <class T>
void conv3d_grads(const Tensor5<T>& in, const Tensor5<T>& k, const Tensor5<T>& grad_out,
                  Tensor5<T>& grad_input, Tensor5<T>& grad_kernel, std::vector<T>& grad_bias) {
  const int64_t rx = k.dx / 2, ry = k.dy / 2, rz = k.dz / 2;
  grad_input = Tensor5<T>(in.n, in.c, in.dx, in.dy, in.dz);
  grad_kernel = Tensor5<T>(k.n, k.c, k.dx, k.dy, k.dz);
  grad_bias.assign(size_t(k.n), T(0));
  for (int64_t b = 0; b < in.n; ++b)
    for (int64_t co = 0; co < k.n; ++co)
      for (int64_t z = 0; z < in.dz; ++z)
        for (int64_t y = 0; y < in.dy; ++y)
          for (int64_t x = 0; x < in.dx; ++x) {
            const T g = grad_out.at(b, co, x, y, z);
            grad_bias[size_t(co)] += g;
            for (int64_t ci = 0; ci < in.c; ++ci)
              for (int64_t kz = 0; kz < k.dz; ++kz)
                for (int64_t ky = 0; ky < k.dy; ++ky)
                  for (int64_t kx = 0; kx < k.dx; ++kx) {
                    const int64_t sx = x + kx - rx, sy = y + ky - ry, sz = z + kz - rz;
                    if (sx < 0 || sx >= in.dx || sy < 0 || sy >= in.dy || sz < 0 || sz >= in.dz)
                      continue;
                    grad_input.at(b, ci, sx, sy, sz) += g * k.at(co, ci, kx, ky, kz);
                    grad_kernel.at(co, ci, kx, ky, kz) += g * in.at(b, ci, sx, sy, sz);
                  }
          }
}

template <class T>
Tensor5<T> maxpool3d(const Tensor5<T>& in) {
  Tensor5<T> out(in.n, in.c, in.dx / 2, in.dy / 2, in.dz / 2);
  for (int64_t b = 0; b < out.n; ++b)
    for (int64_t c = 0; c < out.c; ++c)
      for (int64_t z = 0; z < out.dz; ++z)
        for (int64_t y = 0; y < out.dy; ++y)
          for (int64_t x = 0; x < out.dx; ++x) {
            T best = in.at(b, c, 2 * x, 2 * y, 2 * z);
            for (int64_t dz = 0; dz < 2; ++dz)
              for (int64_t dy = 0; dy < 2; ++dy)
                for (int64_t dx = 0; dx < 2; ++dx)
                  best = std::max(best, in.at(b, c, 2 * x + dx, 2 * y + dy, 2 * z + dz));
            out.at(b, c, x, y, z) = best;
          }
  return out;
}

namespace {

// align-corners-off sample position, clamped
inline double up_coord(int64_t j, int64_t in_n) {
  const double u = (double(j) + 0.5) / 2.0 - 0.5;
  return std::clamp(u, 0.0, double(in_n - 1));
}

}  // namespace

template <class T>
Tensor5<T> upsample2x(const Tensor5<T>& in) {
  Tensor5<T> out(in.n, in.c, in.dx * 2, in.dy * 2, in.dz * 2);
  for (int64_t b = 0; b < out.n; ++b)
    for (int64_t c = 0; c < out.c; ++c)
      for (int64_t z = 0; z < out.dz; ++z)
        for (int64_t y = 0; y < out.dy; ++y)
          for (int64_t x = 0; x < out.dx; ++x) {
            const double ux = up_coord(x, in.dx), uy = up_coord(y, in.dy), uz = up_coord(z, in.dz);
            const int64_t x0 = int64_t(ux), y0 = int64_t(uy), z0 = int64_t(uz);
            const int64_t x1 = std::min(x0 + 1, in.dx - 1), y1 = std::min(y0 + 1, in.dy - 1),
                          z1 = std::min(z0 + 1, in.dz - 1);
            const double fx = ux - double(x0), fy = uy - double(y0), fz = uz - double(z0);
            double acc = 0.0;
            for (int64_t dz = 0; dz < 2; ++dz)
              for (int64_t dy = 0; dy < 2; ++dy)
                for (int64_t dx = 0; dx < 2; ++dx) {
                  const double w = (dx ? fx : 1.0 - fx) * (dy ? fy : 1.0 - fy) * (dz ? fz : 1.0 - fz);
                  acc += w * double(in.at(b, c, dx ? x1 : x0, dy ? y1 : y0, dz ? z1 : z0));
                }
            out.at(b, c, x, y, z) = T(acc);
          }
  return out;
}

ScalarVolume resample_trilinear(const ScalarVolume& src, Dims out_dims, Spacing out_spacing) {
  ScalarVolume out{out_dims, out_spacing, std::vector<float>(size_t(out_dims.count()))};
  for (int64_t z = 0; z < out_dims.nz; ++z)
    for (int64_t y = 0; y < out_dims.ny; ++y)
      for (int64_t x = 0; x < out_dims.nx; ++x) {
        const double ux = std::clamp(double(x) * out_spacing.sx / src.spacing.sx, 0.0,
                                     double(src.dims.nx - 1));
        const double uy = std::clamp(double(y) * out_spacing.sy / src.spacing.sy, 0.0,
                                     double(src.dims.ny - 1));
        const double uz = std::clamp(double(z) * out_spacing.sz / src.spacing.sz, 0.0,
                                     double(src.dims.nz - 1));
        const int64_t x0 = int64_t(ux), y0 = int64_t(uy), z0 = int64_t(uz);
        const int64_t x1 = std::min(x0 + 1, src.dims.nx - 1),
                      y1 = std::min(y0 + 1, src.dims.ny - 1),
                      z1 = std::min(z0 + 1, src.dims.nz - 1);
        const double fx = ux - double(x0), fy = uy - double(y0), fz = uz - double(z0);
        double acc = 0.0;
        for (int dz = 0; dz < 2; ++dz)
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              const double w = (dx ? fx : 1.0 - fx) * (dy ? fy : 1.0 - fy) * (dz ? fz : 1.0 - fz);
              acc += w * double(src.at(dx ? x1 : x0, dy ? y1 : y0, dz ? z1 : z0));
            }
        out.at(x, y, z) = float(acc);
      }
  return out;
}

LabelVolume resample_nearest(const LabelVolume& src, Dims out_dims, Spacing out_spacing) {
  LabelVolume out{out_dims, out_spacing, src.schema, std::vector<uint8_t>(size_t(out_dims.count()))};
  for (int64_t z = 0; z < out_dims.nz; ++z)
    for (int64_t y = 0; y < out_dims.ny; ++y)
      for (int64_t x = 0; x < out_dims.nx; ++x) {
        const auto nearest = [](double u, int64_t n) {
          return std::clamp(int64_t(std::llround(u)), int64_t(0), n - 1);
        };
        const int64_t xi = nearest(double(x) * out_spacing.sx / src.spacing.sx, src.dims.nx);
        const int64_t yi = nearest(double(y) * out_spacing.sy / src.spacing.sy, src.dims.ny);
        const int64_t zi = nearest(double(z) * out_spacing.sz / src.spacing.sz, src.dims.nz);
        out.at(x, y, z) = src.at(xi, yi, zi);
      }
  return out;
}

// relax the label field to the fixpoint: every voxel takes the minimum id in
// its neighborhood, until nothing changes
namespace {

std::vector<int32_t> relax_components(const std::vector<int32_t>& seed, Dims dims,
                                      const std::vector<std::array<int64_t, 3>>& offsets,
                                      int64_t z_only) {
  std::vector<int32_t> id = seed;
  bool changed = true;
  while (changed) {
    changed = false;
    for (int64_t z = 0; z < dims.nz; ++z) {
      if (z_only >= 0 && z != z_only) continue;
      for (int64_t y = 0; y < dims.ny; ++y)
        for (int64_t x = 0; x < dims.nx; ++x) {
          const int64_t i = voxel_index(dims, x, y, z);
          if (id[size_t(i)] == 0) continue;
          for (const auto& o : offsets) {
            const int64_t nx = x + o[0], ny = y + o[1], nz = z + o[2];
            if (nx < 0 || nx >= dims.nx || ny < 0 || ny >= dims.ny || nz < 0 || nz >= dims.nz)
              continue;
            const int32_t nid = id[size_t(voxel_index(dims, nx, ny, nz))];
            if (nid != 0 && nid < id[size_t(i)]) {
              id[size_t(i)] = nid;
              changed = true;
            }
          }
        }
    }
  }
  return id;
}

std::vector<int32_t> compact_ids(std::vector<int32_t> id) {
  std::vector<int32_t> remap;
  for (auto& v : id) {
    if (v == 0) continue;
    int32_t found = 0;
    for (size_t r = 0; r < remap.size(); ++r)
      if (remap[r] == v) {
        found = int32_t(r) + 1;
        break;
      }
    if (!found) {
      remap.push_back(v);
      found = int32_t(remap.size());
    }
    v = found;
  }
  return id;
}

}  // namespace

std::vector<int32_t> components_3d_6conn(const std::vector<uint8_t>& mask, Dims dims) {
  std::vector<int32_t> seed(mask.size(), 0);
  for (size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) seed[i] = int32_t(i) + 1;
  static const std::vector<std::array<int64_t, 3>> n6 = {{-1, 0, 0}, {1, 0, 0}, {0, -1, 0},
                                                         {0, 1, 0},  {0, 0, -1}, {0, 0, 1}};
  return compact_ids(relax_components(seed, dims, n6, -1));
}

std::vector<int32_t> components_2d_4conn_slice(const std::vector<uint8_t>& mask, Dims dims,
                                               int64_t z) {
  std::vector<int32_t> seed(mask.size(), 0);
  for (int64_t y = 0; y < dims.ny; ++y)
    for (int64_t x = 0; x < dims.nx; ++x) {
      const int64_t i = voxel_index(dims, x, y, z);
      if (mask[size_t(i)]) seed[size_t(i)] = int32_t(i) + 1;
    }
  static const std::vector<std::array<int64_t, 3>> n4 = {{-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}};
  return compact_ids(relax_components(seed, dims, n4, z));
}

std::pair<double, double> surface_distances(const std::vector<uint8_t>& pred,
                                            const std::vector<uint8_t>& gt, Dims dims,
                                            Spacing spacing) {
  auto boundary = [&](const std::vector<uint8_t>& m) {
    std::vector<std::array<int64_t, 3>> pts;
    for (int64_t z = 0; z < dims.nz; ++z)
      for (int64_t y = 0; y < dims.ny; ++y)
        for (int64_t x = 0; x < dims.nx; ++x) {
          if (!m[size_t(voxel_index(dims, x, y, z))]) continue;
          bool edge = false;
          const int64_t off[6][3] = {{-1, 0, 0}, {1, 0, 0}, {0, -1, 0},
                                     {0, 1, 0},  {0, 0, -1}, {0, 0, 1}};
          for (const auto& o : off) {
            const int64_t nx = x + o[0], ny = y + o[1], nz = z + o[2];
            if (nx < 0 || nx >= dims.nx || ny < 0 || ny >= dims.ny || nz < 0 || nz >= dims.nz ||
                !m[size_t(voxel_index(dims, nx, ny, nz))]) {
              edge = true;
              break;
            }
          }
          if (edge) pts.push_back({x, y, z});
        }
    return pts;
  };

  const auto pa = boundary(pred);
  const auto pb = boundary(gt);
  if (pa.empty() || pb.empty()) return {-1.0, -1.0};

  auto directed = [&](const std::vector<std::array<int64_t, 3>>& from,
                      const std::vector<std::array<int64_t, 3>>& to) {
    std::vector<double> d(from.size());
    for (size_t i = 0; i < from.size(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& q : to) {
        const double dx = double(from[i][0] - q[0]) * spacing.sx;
        const double dy = double(from[i][1] - q[1]) * spacing.sy;
        const double dz = double(from[i][2] - q[2]) * spacing.sz;
        const double dist2 = dx * dx + dy * dy + dz * dz;
        if (dist2 < best) best = dist2;
      }
      d[i] = std::sqrt(best);
    }
    return d;
  };

  const auto dab = directed(pa, pb);
  const auto dba = directed(pb, pa);
  double hd = 0.0, sum = 0.0;
  for (double v : dab) {
    hd = std::max(hd, v);
    sum += v;
  }
  for (double v : dba) {
    hd = std::max(hd, v);
    sum += v;
  }
  return {hd, sum / double(dab.size() + dba.size())};
}

#define CARESEG_REF_INSTANTIATE(T)                                                          \
  template Tensor5<T> conv3d<T>(const Tensor5<T>&, const Tensor5<T>&, const std::vector<T>&); \
  template void conv3d_grads<T>(const Tensor5<T>&, const Tensor5<T>&, const Tensor5<T>&,    \
                                Tensor5<T>&, Tensor5<T>&, std::vector<T>&);                 \
  template Tensor5<T> maxpool3d<T>(const Tensor5<T>&);                                      \
  template Tensor5<T> upsample2x<T>(const Tensor5<T>&);

CARESEG_REF_INSTANTIATE(float)
CARESEG_REF_INSTANTIATE(double)

#undef CARESEG_REF_INSTANTIATE

}  // namespace careseg::ref
