#include "careseg/postprocess.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <queue>

#include "careseg/hierarchy.hpp"

namespace careseg {

int32_t ComponentMap::largest() const {
  int32_t best = 0;
  int64_t best_size = -1;
  for (int32_t c = 0; c < count(); ++c)
    if (voxels[size_t(c)] > best_size) {  // strict: earlier id wins ties
      best_size = voxels[size_t(c)];
      best = c + 1;
    }
  return best;
}

namespace {

// breadth-first flood fill
ComponentMap flood_fill(const std::vector<uint8_t>& mask, Dims dims, Spacing spacing,
                        const std::vector<std::array<int64_t, 3>>& neighbors, int64_t z_only) {
  ComponentMap cm;
  cm.dims = dims;
  cm.id.assign(mask.size(), 0);
  std::queue<int64_t> queue;
  const int64_t z_lo = z_only >= 0 ? z_only : 0;
  const int64_t z_hi = z_only >= 0 ? z_only + 1 : dims.nz;

  for (int64_t z = z_lo; z < z_hi; ++z)
    for (int64_t y = 0; y < dims.ny; ++y)
      for (int64_t x = 0; x < dims.nx; ++x) {
        const int64_t start = voxel_index(dims, x, y, z);
        if (!mask[size_t(start)] || cm.id[size_t(start)] != 0) continue;
        const int32_t comp = int32_t(cm.voxels.size()) + 1;
        int64_t size = 0;
        cm.id[size_t(start)] = comp;
        queue.push(start);
        while (!queue.empty()) {
          const int64_t cur = queue.front();
          queue.pop();
          ++size;
          const int64_t cz = cur / (dims.nx * dims.ny);
          const int64_t cy = (cur / dims.nx) % dims.ny;
          const int64_t cx = cur % dims.nx;
          for (const auto& o : neighbors) {
            const int64_t nx = cx + o[0], ny = cy + o[1], nz = cz + o[2];
            if (nx < 0 || nx >= dims.nx || ny < 0 || ny >= dims.ny || nz < 0 || nz >= dims.nz)
              continue;
            const int64_t ni = voxel_index(dims, nx, ny, nz);
            if (mask[size_t(ni)] && cm.id[size_t(ni)] == 0) {
              cm.id[size_t(ni)] = comp;
              queue.push(ni);
            }
          }
        }
        cm.voxels.push_back(size);
      }

  cm.ml.resize(cm.voxels.size());
  for (size_t c = 0; c < cm.voxels.size(); ++c) cm.ml[c] = double(cm.voxels[c]) * spacing.voxel_ml();
  return cm;
}

const std::vector<std::array<int64_t, 3>> kN6 = {{-1, 0, 0}, {1, 0, 0},  {0, -1, 0},
                                                 {0, 1, 0},  {0, 0, -1}, {0, 0, 1}};
const std::vector<std::array<int64_t, 3>> kN4 = {{-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}};

std::vector<uint8_t> foreground_mask(const LabelVolume& v) {
  std::vector<uint8_t> m(v.data.size());
  for (size_t i = 0; i < v.data.size(); ++i) m[i] = v.data[i] != label::BG;
  return m;
}

}  // namespace

ComponentMap label_components_3d(const std::vector<uint8_t>& mask, Dims dims, Spacing spacing) {
  return flood_fill(mask, dims, spacing, kN6, -1);
}

ComponentMap label_components_2d(const std::vector<uint8_t>& mask, Dims dims, Spacing spacing,
                                 int64_t z) {
  return flood_fill(mask, dims, spacing, kN4, z);
}

LabelVolume remove_disconnected_3d(const LabelVolume& pred) {
  const ComponentMap cm = label_components_3d(foreground_mask(pred), pred.dims, pred.spacing);
  if (cm.count() <= 1) return pred;
  const int32_t keep = cm.largest();
  LabelVolume out = pred;
  for (size_t i = 0; i < out.data.size(); ++i)
    if (cm.id[i] != 0 && cm.id[i] != keep) out.data[i] = label::BG;
  return out;
}

LabelVolume remove_disconnected_2d(const LabelVolume& pred) {
  const auto mask = foreground_mask(pred);
  LabelVolume out = pred;
#pragma omp parallel for schedule(dynamic)
  for (int64_t z = 0; z < pred.dims.nz; ++z) {
    const ComponentMap cm = label_components_2d(mask, pred.dims, pred.spacing, z);
    if (cm.count() <= 1) continue;
    const int32_t keep = cm.largest();
    for (int64_t y = 0; y < pred.dims.ny; ++y)
      for (int64_t x = 0; x < pred.dims.nx; ++x) {
        const int64_t i = voxel_index(pred.dims, x, y, z);
        if (cm.id[size_t(i)] != 0 && cm.id[size_t(i)] != keep) out.data[size_t(i)] = label::BG;
      }
  }
  return out;
}

LabelVolume remove_topmost_slice(const LabelVolume& pred, BaseAt base_at) {
  const Dims d = pred.dims;
  const auto slice_foreground = [&](int64_t z) {
    int64_t n = 0;
    for (int64_t y = 0; y < d.ny; ++y)
      for (int64_t x = 0; x < d.nx; ++x)
        if (pred.at(x, y, z) != label::BG) ++n;
    return n;
  };

  // scan from the base end toward the apex for the first non-empty slice
  const int64_t z_start = base_at == BaseAt::ZMax ? d.nz - 1 : 0;
  const int64_t step = base_at == BaseAt::ZMax ? -1 : 1;
  int64_t top = -1;
  for (int64_t z = z_start; z >= 0 && z < d.nz; z += step)
    if (slice_foreground(z) > 0) {
      top = z;
      break;
    }
  if (top < 0) return pred;  // empty prediction

  const int64_t neighbor = top + step;
  if (neighbor < 0 || neighbor >= d.nz) return pred;
  const int64_t top_vol = slice_foreground(top);
  const int64_t nb_vol = slice_foreground(neighbor);
  // same-slice geometry, so the voxel-count ratio equals the volume ratio
  if (2 * top_vol >= nb_vol) return pred;

  LabelVolume out = pred;
  for (int64_t y = 0; y < d.ny; ++y)
    for (int64_t x = 0; x < d.nx; ++x) out.at(x, y, top) = label::BG;
  return out;
}

LabelVolume replace_outlier_regions(const LabelVolume& pred, double min_ml, double sigma_mm) {
  const Dims d = pred.dims;
  const int64_t n = d.count();

  // mark sub-threshold per-label components as outliers
  std::vector<uint8_t> outlier(size_t(n), 0);
  bool any = false;
  for (uint8_t lbl : {label::LV, label::MYO, label::MIT, label::MVO}) {
    std::vector<uint8_t> mask(size_t(n), 0);
    bool present = false;
    for (int64_t i = 0; i < n; ++i)
      if (pred.data[size_t(i)] == lbl) {
        mask[size_t(i)] = 1;
        present = true;
      }
    if (!present) continue;
    const ComponentMap cm = label_components_3d(mask, d, pred.spacing);
    for (int64_t i = 0; i < n; ++i)
      if (cm.id[size_t(i)] != 0 && cm.ml[size_t(cm.id[size_t(i)] - 1)] < min_ml) {
        outlier[size_t(i)] = 1;
        any = true;
      }
  }
  if (!any) return pred;

  // votes come from every non-outlier voxel (background included) inside the
  // anisotropic window; weights depend on physical distance
  constexpr int64_t RX = 4, RY = 4, RZ = 2;  // 9 x 9 x 5 window
  const double inv_two_sigma2 = 1.0 / (2.0 * sigma_mm * sigma_mm);

  LabelVolume out = pred;
#pragma omp parallel for schedule(dynamic)
  for (int64_t z = 0; z < d.nz; ++z)
    for (int64_t y = 0; y < d.ny; ++y)
      for (int64_t x = 0; x < d.nx; ++x) {
        const int64_t i = voxel_index(d, x, y, z);
        if (!outlier[size_t(i)]) continue;
        double votes[5] = {0, 0, 0, 0, 0};
        bool has_voter = false;
        for (int64_t dz = -RZ; dz <= RZ; ++dz)
          for (int64_t dy = -RY; dy <= RY; ++dy)
            for (int64_t dx = -RX; dx <= RX; ++dx) {
              const int64_t nx2 = x + dx, ny2 = y + dy, nz2 = z + dz;
              if (nx2 < 0 || nx2 >= d.nx || ny2 < 0 || ny2 >= d.ny || nz2 < 0 || nz2 >= d.nz)
                continue;
              const int64_t j = voxel_index(d, nx2, ny2, nz2);
              if (outlier[size_t(j)]) continue;  // outliers do not vote
              const double px = double(dx) * pred.spacing.sx;
              const double py = double(dy) * pred.spacing.sy;
              const double pz = double(dz) * pred.spacing.sz;
              const double w = std::exp(-(px * px + py * py + pz * pz) * inv_two_sigma2);
              votes[pred.data[size_t(j)]] += w;  // label from the original volume
              has_voter = true;
            }
        if (!has_voter) continue;
        int best = 0;
        for (int k = 1; k < 5; ++k)
          if (votes[k] > votes[best]) best = k;
        out.data[size_t(i)] = uint8_t(best);
      }
  return out;
}

LabelVolume postprocess_pipeline(const LabelVolume& pred, const PostprocessOptions& opt) {
  LabelVolume cur = pred;
  if (opt.component_3d) cur = remove_disconnected_3d(cur);
  if (opt.component_2d) cur = remove_disconnected_2d(cur);
  if (opt.topmost_slice) cur = remove_topmost_slice(cur, opt.base_at);
  if (opt.outlier_regions) cur = replace_outlier_regions(cur, opt.outlier_min_ml, opt.outlier_sigma_mm);
  return cur;
}

}  // namespace careseg
