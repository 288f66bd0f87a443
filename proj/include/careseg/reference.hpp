#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "careseg/tensor.hpp"
#include "careseg/volume.hpp"

// Naive single-threaded reference kernels. They are written for obviousness,
// not speed: straight loops that follow each operation's definition directly.
// The test suites compare the production (OpenMP) kernels against these, and
// the benchmark target reports the speedup of the parallel versions.
//
// Nothing in here is used by the production library.

namespace careseg::ref {

template <class T>
Tensor5<T> conv3d(const Tensor5<T>& input, const Tensor5<T>& kernel, const std::vector<T>& bias);

template <class T>
void conv3d_grads(const Tensor5<T>& input, const Tensor5<T>& kernel, const Tensor5<T>& grad_out,
                  Tensor5<T>& grad_input, Tensor5<T>& grad_kernel, std::vector<T>& grad_bias);

template <class T>
Tensor5<T> maxpool3d(const Tensor5<T>& input);

template <class T>
Tensor5<T> upsample2x(const Tensor5<T>& input);

ScalarVolume resample_trilinear(const ScalarVolume& src, Dims out_dims, Spacing out_spacing);
LabelVolume resample_nearest(const LabelVolume& src, Dims out_dims, Spacing out_spacing);

// connected components by iterative min-label propagation (not flood fill);
// returns per-voxel component ids, 0 for background, ids contiguous from 1
// in first-voxel scan order
std::vector<int32_t> components_3d_6conn(const std::vector<uint8_t>& mask, Dims dims);
std::vector<int32_t> components_2d_4conn_slice(const std::vector<uint8_t>& mask, Dims dims,
                                               int64_t z);

// all-pairs surface distances; returns (hd, assd) in mm, both -1 when either
// surface is empty
std::pair<double, double> surface_distances(const std::vector<uint8_t>& pred,
                                            const std::vector<uint8_t>& gt, Dims dims,
                                            Spacing spacing);

}  // namespace careseg::ref
