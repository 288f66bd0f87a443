#include "careseg/phantom.hpp"

#include <algorithm>
#include <cmath>

namespace careseg {

namespace {

void validate(const PhantomSpec& s) {
  if (s.dims.nx < 8 || s.dims.ny < 8 || s.dims.nz < 8)
    throw InvalidSpec("phantom grid too small");
  if (s.spacing.sx <= 0 || s.spacing.sy <= 0 || s.spacing.sz <= 0)
    throw InvalidSpec("phantom spacing must be positive");
  if (s.lv_radius_x_mm <= 0 || s.lv_radius_y_mm <= 0 || s.lv_radius_z_mm <= 0)
    throw InvalidSpec("LV radii must be positive");
  if (s.wall_mm <= 0) throw InvalidSpec("wall thickness must be positive");
  if (s.wedge_radians <= 0 || s.wedge_radians > 2.0 * M_PI)
    throw InvalidSpec("wedge extent out of range");
  if (s.mvo_radius_mm < 0) throw InvalidSpec("MVO radius must be non-negative");
  if (s.mvo_radius_mm > 0 && s.subgroup != Subgroup::D8)
    throw InvalidSpec("MVO is exclusive to the D8 subgroup");
}

inline double wrap_angle(double a) {
  while (a < 0) a += 2.0 * M_PI;
  while (a >= 2.0 * M_PI) a -= 2.0 * M_PI;
  return a;
}

}  // namespace

std::tuple<ScalarVolume, LabelVolume, Subgroup> generate_phantom(const PhantomSpec& spec) {
  validate(spec);
  Rng rng(spec.seed);

  const Dims d = spec.dims;
  const Spacing sp = spec.spacing;
  const double ex = double(d.nx - 1) * sp.sx, ey = double(d.ny - 1) * sp.sy,
               ez = double(d.nz - 1) * sp.sz;
  // center jitter keeps cases from being perfectly aligned
  const double cx = ex * 0.5 + rng.uniform(-0.03, 0.03) * ex;
  const double cy = ey * 0.5 + rng.uniform(-0.03, 0.03) * ey;
  const double cz = ez * 0.5 + rng.uniform(-0.03, 0.03) * ez;
  const double theta0 = rng.uniform(0.0, 2.0 * M_PI);

  const double ra = spec.lv_radius_x_mm, rb = spec.lv_radius_y_mm, rc = spec.lv_radius_z_mm;
  const double oa = ra + spec.wall_mm, ob = rb + spec.wall_mm, oc = rc + spec.wall_mm;

  LabelVolume labels = make_labels(d, sp, label::BG, 3);
  for (int64_t z = 0; z < d.nz; ++z)
    for (int64_t y = 0; y < d.ny; ++y)
      for (int64_t x = 0; x < d.nx; ++x) {
        const double px = double(x) * sp.sx - cx;
        const double py = double(y) * sp.sy - cy;
        const double pz = double(z) * sp.sz - cz;
        const double q_in = px * px / (ra * ra) + py * py / (rb * rb) + pz * pz / (rc * rc);
        if (q_in <= 1.0) {
          labels.at(x, y, z) = label::LV;
          continue;
        }
        const double q_out = px * px / (oa * oa) + py * py / (ob * ob) + pz * pz / (oc * oc);
        if (q_out <= 1.0) {
          const double theta = wrap_angle(std::atan2(py, px) - theta0);
          labels.at(x, y, z) = theta <= spec.wedge_radians ? label::MIT : label::MYO;
        }
      }

  // MVO core: intersect a ball at mid-wall, mid-wedge with the eroded infarct
  // so the core never touches a non-infarct label
  if (spec.mvo_radius_mm > 0) {
    const double theta_m = theta0 + spec.wedge_radians * 0.5;
    const double ct = std::cos(theta_m), st = std::sin(theta_m);
    const double r_lv = 1.0 / std::sqrt(ct * ct / (ra * ra) + st * st / (rb * rb));
    const double r_out = 1.0 / std::sqrt(ct * ct / (oa * oa) + st * st / (ob * ob));
    const double r_mid = 0.5 * (r_lv + r_out);
    const double mx = cx + r_mid * ct, my = cy + r_mid * st, mz = cz;

    const auto is_mit = [&](int64_t x, int64_t y, int64_t z) {
      if (x < 0 || x >= d.nx || y < 0 || y >= d.ny || z < 0 || z >= d.nz) return false;
      return labels.at(x, y, z) == label::MIT;
    };
    bool any = false;
    LabelVolume out = labels;
    for (int64_t z = 0; z < d.nz; ++z)
      for (int64_t y = 0; y < d.ny; ++y)
        for (int64_t x = 0; x < d.nx; ++x) {
          if (!is_mit(x, y, z)) continue;
          const double px = double(x) * sp.sx - mx;
          const double py = double(y) * sp.sy - my;
          const double pz = double(z) * sp.sz - mz;
          if (px * px + py * py + pz * pz > spec.mvo_radius_mm * spec.mvo_radius_mm) continue;
          const bool interior = is_mit(x - 1, y, z) && is_mit(x + 1, y, z) && is_mit(x, y - 1, z) &&
                                is_mit(x, y + 1, z) && is_mit(x, y, z - 1) && is_mit(x, y, z + 1);
          if (interior) {
            out.at(x, y, z) = label::MVO;
            any = true;
          }
        }
    if (!any) throw InvalidSpec("MVO core does not fit inside the infarct wedge");
    labels = std::move(out);
  }

  // LGE-like intensities: blood pool and infarct bright, myocardium and the
  // no-reflow core dark
  const double base[5] = {0.0, 1.0, 0.15, 0.85, 0.30};
  double tissue[5];
  for (int k = 0; k < 5; ++k) tissue[k] = base[k] + rng.uniform(-0.03, 0.03);

  ScalarVolume img = make_scalar(d, sp);
  const int64_t n = d.count();
  for (int64_t i = 0; i < n; ++i)
    img.data[size_t(i)] =
        float(tissue[labels.data[size_t(i)]] + rng.normal(0.0, spec.noise_std));

  return {std::move(img), std::move(labels), spec.subgroup};
}

PhantomSpec sample_phantom_spec(Rng& rng, Dims grid_dims, Spacing grid_spacing, Subgroup sg,
                                bool with_mvo) {
  PhantomSpec s;
  s.seed = rng.next_u64();
  s.subgroup = sg;

  // native grids differ from the training grid but cover the same physical
  // field of view
  const double fov_x = double(grid_dims.nx) * grid_spacing.sx;
  const double fov_y = double(grid_dims.ny) * grid_spacing.sy;
  const double fov_z = double(grid_dims.nz) * grid_spacing.sz;
  const auto native = [&](double fov) {
    const double sp = rng.uniform(0.85, 1.15);
    return std::pair<int64_t, float>{std::max<int64_t>(8, int64_t(std::llround(fov / sp))),
                                     float(sp)};
  };
  const auto [nx, sx] = native(fov_x);
  const auto [ny, sy] = native(fov_y);
  const auto [nz, sz] = native(fov_z);
  s.dims = {nx, ny, nz};
  s.spacing = {sx, sy, sz};

  const double half = 0.5 * std::min({fov_x, fov_y, fov_z});
  s.lv_radius_x_mm = rng.uniform(0.38, 0.50) * half;
  s.lv_radius_y_mm = rng.uniform(0.38, 0.50) * half;
  s.lv_radius_z_mm = rng.uniform(0.42, 0.56) * half;
  s.wall_mm = rng.uniform(0.22, 0.30) * half;
  s.wedge_radians = rng.uniform(1.2, 2.3);
  s.noise_std = rng.uniform(0.03, 0.06);
  s.mvo_radius_mm =
      (sg == Subgroup::D8 && with_mvo) ? rng.uniform(0.55, 0.85) * 0.5 * s.wall_mm : 0.0;
  return s;
}

}  // namespace careseg
