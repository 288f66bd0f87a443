#pragma once

#include <tuple>

#include "careseg/hierarchy.hpp"
#include "careseg/rng.hpp"
#include "careseg/volume.hpp"

namespace careseg {

// Synthetic LGE-like cardiac phantom: an ellipsoidal blood pool (bright)
// wrapped in a myocardial shell (dark), with a transmural infarct wedge
// (bright) that may carry a small dark core exclusive to the D8 subgroup.
struct PhantomSpec {
  uint64_t seed = 0;
  Dims dims{36, 36, 36};
  Spacing spacing{1.0f, 1.0f, 1.0f};
  double lv_radius_x_mm = 7.0;
  double lv_radius_y_mm = 7.0;
  double lv_radius_z_mm = 8.0;
  double wall_mm = 4.0;          // myocardial wall thickness
  double wedge_radians = 1.8;    // angular extent of the infarct wedge
  double mvo_radius_mm = 0.0;    // 0 = no core
  double noise_std = 0.05;
  Subgroup subgroup = Subgroup::M1;
};

// Deterministic for a given spec. Labels are nested by construction:
// MVO inside MIT inside the wall shell, LV enclosed by the wall.
std::tuple<ScalarVolume, LabelVolume, Subgroup> generate_phantom(const PhantomSpec& spec);

// samples a plausible spec whose heart fills a grid with the given physical
// extent; with_mvo is only honored for D8
PhantomSpec sample_phantom_spec(Rng& rng, Dims grid_dims, Spacing grid_spacing, Subgroup sg,
                                bool with_mvo);

}  // namespace careseg
