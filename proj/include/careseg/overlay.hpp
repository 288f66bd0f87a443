#pragma once

#include <string>

#include "careseg/volume.hpp"

namespace careseg {

// writes an 8-bit RGB PNG
void write_png(const std::string& path, const std::vector<uint8_t>& rgb, int64_t width,
               int64_t height);

// Per-slice PNG export of the image with label colors blended on top
// (LV red, MYO green, MIT yellow, MVO blue). One file per z slice:
// <prefix>_z###.png
void write_overlay_slices(const ScalarVolume& img, const LabelVolume& labels,
                          const std::string& out_dir, const std::string& prefix = "slice");

}  // namespace careseg
