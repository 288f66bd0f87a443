#pragma once

#include <optional>
#include <string>
#include <vector>

#include "careseg/volume.hpp"

namespace careseg {

// ---- per-case metrics ------------------------------------------------------

// Dice similarity in percent: 100 * 2|P n G| / (|P| + |G|).
// Two empty masks agree perfectly and score 100.
double dice_percent(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& gt, Dims dims);

struct SurfacePair {
  double hd;    // mm
  double assd;  // mm
};

// Symmetric surface distances between the boundary voxel centers of the two
// masks (boundary: foreground voxel with a 6-neighbor outside the mask or the
// grid). HD is the max directed distance both ways at `hd_percentile` = 100;
// lower percentiles give HDp variants. ASSD pools the directed distances of
// both surfaces. Empty input on either side makes both undefined (nullopt).
//
// Distances come from an exact separable squared distance transform; the
// all-pairs oracle in careseg::ref computes the same quantity the slow way.
std::optional<SurfacePair> surface_distances(const std::vector<uint8_t>& pred,
                                             const std::vector<uint8_t>& gt, Dims dims,
                                             Spacing spacing, double hd_percentile = 100.0);

double volume_ml(const std::vector<uint8_t>& mask, Spacing spacing);

std::vector<uint8_t> mask_of(const LabelVolume& v, uint8_t code);

// ---- cohort volume agreement -------------------------------------------------

struct VolumeStats {
  double cc;    // Pearson correlation of predicted vs true volumes
  double mae;   // mean absolute volume error (ml)
  double loa;   // Bland-Altman limits of agreement: 1.96 * sample sd of diffs
  double crps;  // mean empirical-ensemble CRPS; reduces to |v - g| for N = 1
};

// `ensemble_ml`, when present, holds the per-case volume estimates of the N
// ensemble members, enabling the full empirical CRPS
//   (1/N) sum_i |v_i - g|  -  (1/(2N^2)) sum_ij |v_i - v_j|.
VolumeStats cohort_volume_stats(const std::vector<std::pair<double, double>>& pred_gt_ml,
                                const std::vector<std::vector<double>>* ensemble_ml = nullptr);

// ---- report ---------------------------------------------------------------------

struct LabelCaseMetrics {
  double dsc = 0.0;
  std::optional<double> hd;
  std::optional<double> assd;
  double pred_ml = 0.0;
  double gt_ml = 0.0;
  std::vector<double> member_ml;  // per ensemble member, may be empty
};

struct CaseMetrics {
  std::string case_id;
  std::vector<LabelCaseMetrics> per_label;  // aligned with the report's label list
};

struct MetricAgg {
  std::optional<double> mean;  // over cases where the metric is defined
  std::optional<double> std;   // sample std (n-1); 0 for a single case
  int64_t defined = 0;
  int64_t undefined = 0;
};

struct LabelReport {
  std::string label;
  MetricAgg dsc, hd, assd;
  std::optional<double> cc, mae, loa, crps;
};

struct CohortReport {
  int64_t cases = 0;
  std::vector<LabelReport> per_label;
  LabelReport mean_over_labels;  // arithmetic mean of the per-label values
};

CohortReport build_report(const std::vector<CaseMetrics>& cases,
                          const std::vector<std::string>& label_names);

std::string report_to_json(const CohortReport& report);
std::string cases_to_csv(const std::vector<CaseMetrics>& cases,
                         const std::vector<std::string>& label_names);

}  // namespace careseg
