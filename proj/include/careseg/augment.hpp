#pragma once

#include <array>
#include <vector>

#include "careseg/rng.hpp"
#include "careseg/volume.hpp"

namespace careseg {

// One sampled set of augmentation parameters. Spatial units are voxels of the
// training grid; angles are radians.
struct AugmentParams {
  std::array<double, 3> translation{0, 0, 0};   // voxels
  std::array<double, 3> rotation{0, 0, 0};      // radians, intrinsic XYZ
  double iso_scale = 1.0;
  std::array<double, 3> aniso_scale{1, 1, 1};
  std::vector<double> elastic;                  // 8^3 nodes x 3 components, voxels
  double intensity_shift = 0.0;
  double intensity_scale = 1.0;
  std::vector<double> per_label_shift;          // K entries
  std::vector<double> per_label_scale;          // K entries

  static constexpr int kElasticNodes = 8;

  static AugmentParams identity(int64_t num_labels);
};

// Sampling ranges; zeroing a range collapses that transform to the identity.
struct AugmentRanges {
  double translation_voxels = 20.0;
  double rotation_radians = 0.35;
  double iso_scale_lo = 0.8, iso_scale_hi = 1.2;
  double aniso_scale_lo = 0.9, aniso_scale_hi = 1.1;
  double elastic_voxels = 15.0;
  double intensity_shift = 0.2;
  double intensity_scale_lo = 0.6, intensity_scale_hi = 1.4;
  double label_shift = 0.2;
  double label_scale_lo = 0.9, label_scale_hi = 1.1;
};

// Robust intensity normalization: affine map sending the 10th percentile to
// -1 and the 90th to +1, with linear extrapolation outside. Percentiles use
// linear interpolation between order statistics (rank p/100 * (n-1)).
ScalarVolume normalize_percentile(const ScalarVolume& img);

// every field i.i.d. uniform in its range; draw order is fixed
AugmentParams sample_params(Rng& rng, int64_t num_labels, const AugmentRanges& ranges = {});

// Warps image and labels onto the training grid through one shared coordinate
// map, composed output-to-input as: grid resampling, translation, rotation
// (about the source volume center), isotropic scale, anisotropic scale,
// elastic displacement (trilinear over the 8^3 node lattice). The image is
// sampled trilinearly with edge clamping, labels nearest-neighbor.
std::pair<ScalarVolume, LabelVolume> apply_spatial(const ScalarVolume& img,
                                                   const LabelVolume& labels,
                                                   const AugmentParams& p, Dims out_dims,
                                                   Spacing out_spacing);

// global affine v*scale + shift, then the per-label affine of each voxel's
// (already warped) ground-truth label
ScalarVolume apply_intensity(const ScalarVolume& img, const LabelVolume& labels,
                             const AugmentParams& p);

// test-time path: normalize, then resample onto the evaluation grid
ScalarVolume preprocess_eval(const ScalarVolume& img, Dims out_dims, Spacing out_spacing);

}  // namespace careseg
