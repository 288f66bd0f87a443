#pragma once

#include <cstdint>
#include <vector>

#include "careseg/volume.hpp"

namespace careseg {

// Connected components of a binary mask. Component ids are contiguous from 1
// in discovery (scan) order; 0 marks background.
struct ComponentMap {
  Dims dims;
  std::vector<int32_t> id;          // per voxel
  std::vector<int64_t> voxels;      // size (in voxels) per component, index id-1
  std::vector<double> ml;           // same, in milliliters

  int32_t count() const { return int32_t(voxels.size()); }
  // largest component id; ties keep the component containing the smallest
  // linear voxel index, which is the earlier-discovered one
  int32_t largest() const;
};

ComponentMap label_components_3d(const std::vector<uint8_t>& mask, Dims dims, Spacing spacing);

// 4-connected labeling of one z slice; ids are local to the slice
ComponentMap label_components_2d(const std::vector<uint8_t>& mask, Dims dims, Spacing spacing,
                                 int64_t z);

// ---- anatomical post-processing steps -------------------------------------------

// Treats all non-background labels as one mask, keeps only the largest
// 6-connected 3D component.
LabelVolume remove_disconnected_3d(const LabelVolume& pred);

// Per z slice, keeps only the largest 4-connected in-plane foreground
// component of that slice.
LabelVolume remove_disconnected_2d(const LabelVolume& pred);

enum class BaseAt { ZMax, ZMin };

// Clears the top-most foreground slice (toward the base) when its foreground
// volume is less than half that of its neighbor toward the apex. Applied once.
LabelVolume remove_topmost_slice(const LabelVolume& pred, BaseAt base_at = BaseAt::ZMax);

// Per-label 6-connected components smaller than `min_ml` are outliers; each
// outlier voxel takes the Gaussian-weighted majority label of the non-outlier
// voxels (background included) inside a 9x9 in-plane by 5 out-of-plane window,
// weighted by exp(-d^2 / (2 sigma^2)) with d the physical distance in mm.
// All outlier voxels are relabeled simultaneously from the original volume; a
// voxel with no non-outlier voter in its window keeps its label.
LabelVolume replace_outlier_regions(const LabelVolume& pred, double min_ml = 0.1,
                                    double sigma_mm = 2.0);

struct PostprocessOptions {
  bool component_3d = true;
  bool component_2d = true;
  bool topmost_slice = true;
  bool outlier_regions = true;
  BaseAt base_at = BaseAt::ZMax;
  double outlier_min_ml = 0.1;
  double outlier_sigma_mm = 2.0;
};

// the full sequence: 3D removal, 2D removal, top-slice rule, outlier voting
LabelVolume postprocess_pipeline(const LabelVolume& pred, const PostprocessOptions& opt = {});

}  // namespace careseg
