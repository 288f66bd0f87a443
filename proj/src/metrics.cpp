#include "careseg/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>

#include <json.hpp>

namespace careseg {

double dice_percent(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& gt, Dims dims) {
  if (pred.size() != gt.size() || int64_t(pred.size()) != dims.count())
    throw GeometryMismatch("dice: mask sizes disagree");
  int64_t p = 0, g = 0, inter = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    p += pred[i] != 0;
    g += gt[i] != 0;
    inter += (pred[i] != 0) && (gt[i] != 0);
  }
  if (p + g == 0) return 100.0;  // agreement on absence
  return 100.0 * 2.0 * double(inter) / double(p + g);
}

// ---- surface distances -------------------------------------------------------

namespace {

constexpr double kBig = 1e30;

// boundary voxels in z,y,x scan order
std::vector<int64_t> boundary_voxels(const std::vector<uint8_t>& mask, Dims d) {
  std::vector<int64_t> out;
  for (int64_t z = 0; z < d.nz; ++z)
    for (int64_t y = 0; y < d.ny; ++y)
      for (int64_t x = 0; x < d.nx; ++x) {
        const int64_t i = voxel_index(d, x, y, z);
        if (!mask[size_t(i)]) continue;
        const bool edge =
            x == 0 || x == d.nx - 1 || y == 0 || y == d.ny - 1 || z == 0 || z == d.nz - 1 ||
            !mask[size_t(i - 1)] || !mask[size_t(i + 1)] || !mask[size_t(i - d.nx)] ||
            !mask[size_t(i + d.nx)] || !mask[size_t(i - d.nx * d.ny)] ||
            !mask[size_t(i + d.nx * d.ny)];
        if (edge) out.push_back(i);
      }
  return out;
}

// 1D lower-envelope squared distance transform with per-axis scale a = s^2
void dt1d(const double* f, int64_t n, double a, double* d, int64_t* v, double* z) {
  int64_t k = 0;
  v[0] = 0;
  z[0] = -kBig;
  z[1] = kBig;
  for (int64_t q = 1; q < n; ++q) {
    double s;
    while (true) {
      const int64_t p = v[k];
      s = ((f[q] + a * double(q) * double(q)) - (f[p] + a * double(p) * double(p))) /
          (2.0 * a * double(q - p));
      if (s <= z[k] && k > 0) {
        --k;
      } else {
        break;
      }
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kBig;
  }
  k = 0;
  for (int64_t q = 0; q < n; ++q) {
    while (z[k + 1] < double(q)) ++k;
    const int64_t p = v[k];
    d[q] = a * double(q - p) * double(q - p) + f[p];
  }
}

// full squared Euclidean distance field to the site set, anisotropic spacing
std::vector<double> squared_edt(const std::vector<int64_t>& sites, Dims d, Spacing sp) {
  std::vector<double> f(size_t(d.count()), kBig);
  for (int64_t i : sites) f[size_t(i)] = 0.0;

  const double ax = double(sp.sx) * double(sp.sx);
  const double ay = double(sp.sy) * double(sp.sy);
  const double az = double(sp.sz) * double(sp.sz);

#pragma omp parallel
  {
    std::vector<double> row(size_t(std::max({d.nx, d.ny, d.nz})));
    std::vector<double> out(row.size());
    std::vector<int64_t> v(row.size());
    std::vector<double> z(row.size() + 1);

    // x pass: rows are contiguous
#pragma omp for collapse(2) schedule(static)
    for (int64_t zz = 0; zz < d.nz; ++zz)
      for (int64_t yy = 0; yy < d.ny; ++yy) {
        double* p = &f[size_t(voxel_index(d, 0, yy, zz))];
        dt1d(p, d.nx, ax, out.data(), v.data(), z.data());
        std::copy(out.begin(), out.begin() + d.nx, p);
      }

    // y pass
#pragma omp for collapse(2) schedule(static)
    for (int64_t zz = 0; zz < d.nz; ++zz)
      for (int64_t xx = 0; xx < d.nx; ++xx) {
        for (int64_t yy = 0; yy < d.ny; ++yy) row[size_t(yy)] = f[size_t(voxel_index(d, xx, yy, zz))];
        dt1d(row.data(), d.ny, ay, out.data(), v.data(), z.data());
        for (int64_t yy = 0; yy < d.ny; ++yy) f[size_t(voxel_index(d, xx, yy, zz))] = out[size_t(yy)];
      }

    // z pass
#pragma omp for collapse(2) schedule(static)
    for (int64_t yy = 0; yy < d.ny; ++yy)
      for (int64_t xx = 0; xx < d.nx; ++xx) {
        for (int64_t zz = 0; zz < d.nz; ++zz) row[size_t(zz)] = f[size_t(voxel_index(d, xx, yy, zz))];
        dt1d(row.data(), d.nz, az, out.data(), v.data(), z.data());
        for (int64_t zz = 0; zz < d.nz; ++zz) f[size_t(voxel_index(d, xx, yy, zz))] = out[size_t(zz)];
      }
  }
  return f;
}

double percentile_of(std::vector<double> values, double p) {
  std::sort(values.begin(), values.end());
  const double rank = p / 100.0 * double(values.size() - 1);
  const size_t lo = size_t(rank);
  const size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = rank - double(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

}  // namespace

std::optional<SurfacePair> surface_distances(const std::vector<uint8_t>& pred,
                                             const std::vector<uint8_t>& gt, Dims dims,
                                             Spacing spacing, double hd_percentile) {
  if (pred.size() != gt.size() || int64_t(pred.size()) != dims.count())
    throw GeometryMismatch("surface_distances: mask sizes disagree");

  const std::vector<int64_t> ba = boundary_voxels(pred, dims);
  const std::vector<int64_t> bb = boundary_voxels(gt, dims);
  if (ba.empty() || bb.empty()) return std::nullopt;

  const std::vector<double> dt_to_b = squared_edt(bb, dims, spacing);
  const std::vector<double> dt_to_a = squared_edt(ba, dims, spacing);

  std::vector<double> dab(ba.size()), dba(bb.size());
  for (size_t i = 0; i < ba.size(); ++i) dab[i] = std::sqrt(dt_to_b[size_t(ba[i])]);
  for (size_t i = 0; i < bb.size(); ++i) dba[i] = std::sqrt(dt_to_a[size_t(bb[i])]);

  double hd;
  if (hd_percentile >= 100.0) {
    double mab = 0.0, mba = 0.0;
    for (double v : dab) mab = std::max(mab, v);
    for (double v : dba) mba = std::max(mba, v);
    hd = std::max(mab, mba);
  } else {
    hd = std::max(percentile_of(dab, hd_percentile), percentile_of(dba, hd_percentile));
  }

  double sum = 0.0;
  for (double v : dab) sum += v;
  for (double v : dba) sum += v;
  return SurfacePair{hd, sum / double(dab.size() + dba.size())};
}

double volume_ml(const std::vector<uint8_t>& mask, Spacing spacing) {
  int64_t n = 0;
  for (uint8_t v : mask) n += v != 0;
  return double(n) * spacing.voxel_ml();
}

std::vector<uint8_t> mask_of(const LabelVolume& v, uint8_t code) {
  std::vector<uint8_t> m(v.data.size());
  for (size_t i = 0; i < v.data.size(); ++i) m[i] = v.data[i] == code;
  return m;
}

// ---- volume agreement ------------------------------------------------------------

namespace {

struct VolumeStatsOpt {
  std::optional<double> cc;
  double mae, loa, crps;
};

VolumeStatsOpt volume_stats_impl(const std::vector<std::pair<double, double>>& pairs,
                                 const std::vector<std::vector<double>>* ensemble_ml) {
  const double n = double(pairs.size());

  double mp = 0.0, mg = 0.0, mae = 0.0, mean_diff = 0.0;
  for (const auto& [p, g] : pairs) {
    mp += p;
    mg += g;
    mae += std::abs(p - g);
    mean_diff += p - g;
  }
  mp /= n;
  mg /= n;
  mae /= n;
  mean_diff /= n;

  double spp = 0.0, sgg = 0.0, spg = 0.0, var_diff = 0.0;
  for (const auto& [p, g] : pairs) {
    spp += (p - mp) * (p - mp);
    sgg += (g - mg) * (g - mg);
    spg += (p - mp) * (g - mg);
    var_diff += ((p - g) - mean_diff) * ((p - g) - mean_diff);
  }

  VolumeStatsOpt out;
  if (spp > 0.0 && sgg > 0.0) out.cc = spg / std::sqrt(spp * sgg);
  out.mae = mae;
  out.loa = 1.96 * std::sqrt(var_diff / (n - 1.0));

  double crps = 0.0;
  for (size_t i = 0; i < pairs.size(); ++i) {
    const double g = pairs[i].second;
    if (ensemble_ml && i < ensemble_ml->size() && !(*ensemble_ml)[i].empty()) {
      const auto& vols = (*ensemble_ml)[i];
      const double N = double(vols.size());
      double t1 = 0.0, t2 = 0.0;
      for (double vi : vols) {
        t1 += std::abs(vi - g);
        for (double vj : vols) t2 += std::abs(vi - vj);
      }
      crps += t1 / N - t2 / (2.0 * N * N);
    } else {
      crps += std::abs(pairs[i].first - g);
    }
  }
  out.crps = crps / n;
  return out;
}

}  // namespace

VolumeStats cohort_volume_stats(const std::vector<std::pair<double, double>>& pairs,
                                const std::vector<std::vector<double>>* ensemble_ml) {
  if (pairs.size() < 2) throw TooFewCases("cohort_volume_stats needs at least 2 cases");
  const VolumeStatsOpt s = volume_stats_impl(pairs, ensemble_ml);
  if (!s.cc) throw ZeroVariance("cohort_volume_stats: correlation undefined for constant volumes");
  return {*s.cc, s.mae, s.loa, s.crps};
}

// ---- report ------------------------------------------------------------------------

namespace {

MetricAgg aggregate(const std::vector<std::optional<double>>& values) {
  MetricAgg agg;
  double sum = 0.0;
  for (const auto& v : values)
    if (v) {
      sum += *v;
      ++agg.defined;
    } else {
      ++agg.undefined;
    }
  if (agg.defined == 0) return agg;
  const double mean = sum / double(agg.defined);
  double var = 0.0;
  for (const auto& v : values)
    if (v) var += (*v - mean) * (*v - mean);
  agg.mean = mean;
  agg.std = agg.defined > 1 ? std::sqrt(var / double(agg.defined - 1)) : 0.0;
  return agg;
}

std::optional<double> mean_of(const std::vector<std::optional<double>>& vs) {
  double sum = 0.0;
  for (const auto& v : vs) {
    if (!v) return std::nullopt;  // any invalid label invalidates the row
    sum += *v;
  }
  return vs.empty() ? std::optional<double>() : sum / double(vs.size());
}

}  // namespace

CohortReport build_report(const std::vector<CaseMetrics>& cases,
                          const std::vector<std::string>& label_names) {
  if (cases.empty()) throw TooFewCases("build_report: no cases");
  CohortReport rep;
  rep.cases = int64_t(cases.size());

  for (size_t li = 0; li < label_names.size(); ++li) {
    LabelReport lr;
    lr.label = label_names[li];

    std::vector<std::optional<double>> dsc, hd, assd;
    std::vector<std::pair<double, double>> vols;
    std::vector<std::vector<double>> members;
    for (const auto& c : cases) {
      const auto& m = c.per_label[li];
      dsc.push_back(m.dsc);
      hd.push_back(m.hd);
      assd.push_back(m.assd);
      vols.push_back({m.pred_ml, m.gt_ml});
      members.push_back(m.member_ml);
    }
    lr.dsc = aggregate(dsc);
    lr.hd = aggregate(hd);
    lr.assd = aggregate(assd);

    if (vols.size() >= 2) {
      const VolumeStatsOpt vs = volume_stats_impl(vols, &members);
      lr.cc = vs.cc;  // stays undefined on zero variance
      lr.mae = vs.mae;
      lr.loa = vs.loa;
      lr.crps = vs.crps;
    }
    rep.per_label.push_back(std::move(lr));
  }

  // Table-style mean over labels
  LabelReport& mo = rep.mean_over_labels;
  mo.label = "mean";
  const auto collect = [&](auto proj) {
    std::vector<std::optional<double>> vs;
    for (const auto& lr : rep.per_label) vs.push_back(proj(lr));
    return mean_of(vs);
  };
  mo.dsc.mean = collect([](const LabelReport& l) { return l.dsc.mean; });
  mo.dsc.std = collect([](const LabelReport& l) { return l.dsc.std; });
  mo.hd.mean = collect([](const LabelReport& l) { return l.hd.mean; });
  mo.hd.std = collect([](const LabelReport& l) { return l.hd.std; });
  mo.assd.mean = collect([](const LabelReport& l) { return l.assd.mean; });
  mo.assd.std = collect([](const LabelReport& l) { return l.assd.std; });
  mo.cc = collect([](const LabelReport& l) { return l.cc; });
  mo.mae = collect([](const LabelReport& l) { return l.mae; });
  mo.loa = collect([](const LabelReport& l) { return l.loa; });
  mo.crps = collect([](const LabelReport& l) { return l.crps; });
  for (const auto& lr : rep.per_label) {
    mo.hd.undefined += lr.hd.undefined;
    mo.assd.undefined += lr.assd.undefined;
  }
  return rep;
}

// ---- serialization --------------------------------------------------------------------

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

nlohmann::json agg_json(const MetricAgg& a) {
  nlohmann::json j;
  j["mean"] = a.mean ? nlohmann::json(fmt(*a.mean)) : nlohmann::json(nullptr);
  j["std"] = a.std ? nlohmann::json(fmt(*a.std)) : nlohmann::json(nullptr);
  j["defined"] = a.defined;
  j["undefined"] = a.undefined;
  return j;
}

nlohmann::json label_json(const LabelReport& lr) {
  nlohmann::json j;
  j["label"] = lr.label;
  j["dsc"] = agg_json(lr.dsc);
  j["hd"] = agg_json(lr.hd);
  j["assd"] = agg_json(lr.assd);
  const auto opt = [](const std::optional<double>& v) {
    return v ? nlohmann::json(fmt(*v)) : nlohmann::json(nullptr);
  };
  j["cc"] = opt(lr.cc);
  j["mae"] = opt(lr.mae);
  j["loa"] = opt(lr.loa);
  j["crps"] = opt(lr.crps);
  return j;
}

}  // namespace

std::string report_to_json(const CohortReport& rep) {
  nlohmann::json j;
  j["cases"] = rep.cases;
  j["labels"] = nlohmann::json::array();
  for (const auto& lr : rep.per_label) j["labels"].push_back(label_json(lr));
  j["mean_over_labels"] = label_json(rep.mean_over_labels);
  return j.dump(2) + "\n";
}

std::string cases_to_csv(const std::vector<CaseMetrics>& cases,
                         const std::vector<std::string>& label_names) {
  std::ostringstream os;
  os << "case_id,label,dsc,hd,assd,pred_ml,gt_ml\n";
  for (const auto& c : cases)
    for (size_t li = 0; li < label_names.size(); ++li) {
      const auto& m = c.per_label[li];
      os << c.case_id << ',' << label_names[li] << ',' << fmt(m.dsc) << ','
         << (m.hd ? fmt(*m.hd) : "") << ',' << (m.assd ? fmt(*m.assd) : "") << ','
         << fmt(m.pred_ml) << ',' << fmt(m.gt_ml) << '\n';
    }
  return os.str();
}

}  // namespace careseg
