#pragma once

#include <cstdint>
#include <vector>

#include "careseg/rng.hpp"
#include "careseg/tensor.hpp"

namespace careseg {

// Layer kernels with explicit forward/backward pairs. Every backward takes
// the upstream gradient and returns/accumulates gradients of its inputs, so
// the model code can chain them in reverse order.
//
// Forward kernels are OpenMP-parallel; the matching naive serial versions
// used by tests and the benchmark live in careseg::ref (reference.hpp).

// ---- 3D convolution, zero padding, output dims == input dims ---------------

// kernel layout: (co, ci, x, y, z) with x fastest, i.e. Tensor5 with
// n=co, c=ci and spatial dims = kernel extents (odd).
template <class T>
void conv3d_forward(const Tensor5<T>& input, const Tensor5<T>& kernel,
                    const std::vector<T>& bias, Tensor5<T>& output);

template <class T>
void conv3d_backward(const Tensor5<T>& input, const Tensor5<T>& kernel,
                     const Tensor5<T>& grad_output, Tensor5<T>& grad_input,
                     Tensor5<T>& grad_kernel, std::vector<T>& grad_bias);

// ---- pointwise -------------------------------------------------------------

template <class T>
void leaky_relu_forward(Tensor5<T>& x, T slope = T(0.1));

// in-place: grad *= (pre_activation > 0 ? 1 : slope)
template <class T>
void leaky_relu_backward(const Tensor5<T>& pre_activation, Tensor5<T>& grad, T slope = T(0.1));

// Inverted dropout: zero with probability rate, scale survivors by
// 1/(1-rate). Identity when !training. The mask (0 or the scale factor) is
// written to `mask` for the backward pass.
template <class T>
void dropout_forward(Tensor5<T>& x, T rate, bool training, Rng& rng, std::vector<T>& mask);

template <class T>
void dropout_backward(Tensor5<T>& grad, const std::vector<T>& mask);

// ---- 2x2x2 max pooling, stride 2 -------------------------------------------

// argmax stores, per output element, the linear input index of the first
// maximal element of its window; backward routes the gradient there.
template <class T>
Tensor5<T> maxpool3d_forward(const Tensor5<T>& x, std::vector<int64_t>& argmax);

template <class T>
Tensor5<T> maxpool3d_backward(const Tensor5<T>& x, const Tensor5<T>& grad_out,
                              const std::vector<int64_t>& argmax);

// ---- trilinear upsampling by 2 (align-corners-off) --------------------------

// output center i samples source (i + 0.5)/2 - 0.5, clamped to the valid range
template <class T>
Tensor5<T> upsample2x_forward(const Tensor5<T>& x);

// exact linear transpose of the forward map
template <class T>
Tensor5<T> upsample2x_backward(const Tensor5<T>& grad_out, int64_t in_dx, int64_t in_dy,
                               int64_t in_dz);

// ---- channel concat ----------------------------------------------------------

template <class T>
Tensor5<T> concat_channels(const Tensor5<T>& a, const Tensor5<T>& b);

template <class T>
void split_channels(const Tensor5<T>& grad_cat, Tensor5<T>& grad_a, Tensor5<T>& grad_b);

// ---- softmax over the channel axis ------------------------------------------

template <class T>
Tensor5<T> softmax_channels_forward(const Tensor5<T>& logits);

// dL/dlogits from dL/dsoftmax: q .* (g - sum_j g_j q_j) per voxel
template <class T>
Tensor5<T> softmax_channels_backward(const Tensor5<T>& softmaxed, const Tensor5<T>& grad_probs);

// ---- initialization -----------------------------------------------------------

// He initialization: normal(0, sqrt(2/fan_in)) for kernels, zero biases.
template <class T>
void he_init(Tensor5<T>& kernel, int64_t fan_in, Rng& rng);

}  // namespace careseg
