#pragma once

#include <string>
#include <vector>

#include "careseg/layers.hpp"
#include "careseg/rng.hpp"
#include "careseg/tensor.hpp"

namespace careseg {

// U-Net-like stage: pre convs, `levels` encoder blocks (two 3x3x3 convs with
// an intermediate dropout) joined by 2x2x2 max pooling, mirrored decoder with
// trilinear upsampling and skip concatenation, post convs, and a 1x1x1 head
// mapping to the stage's label count. All intermediate convs share one filter
// width; leaky ReLU follows every conv except the head.
struct StageConfig {
  int levels = 3;
  int base_filters = 8;
  int in_channels = 1;
  int out_channels = 3;
  int pre_convs = 2;
  int post_convs = 3;
  double dropout_rate = 0.1;
  double relu_slope = 0.1;

  bool operator==(const StageConfig&) const = default;
};

template <class T>
struct ConvParam {
  std::string name;
  Tensor5<T> w;       // (out_ch, in_ch, kx, ky, kz)
  std::vector<T> b;   // out_ch
};

template <class T>
struct StageModel {
  StageConfig cfg;
  std::vector<ConvParam<T>> convs;  // canonical order, see build_stage
};

// Three-stage cascade: stage s > 1 consumes the previous stage's raw logits
// concatenated (prediction channels first) with the input image.
template <class T>
struct CascadeModel {
  StageModel<T> stage1, stage2, stage3;

  template <class F>
  void for_each_stage(F&& f) {
    f(stage1);
    f(stage2);
    f(stage3);
  }
};

struct CascadeConfig {
  int levels = 3;
  int base_filters = 8;
  double dropout_rate = 0.1;
  double relu_slope = 0.1;

  bool operator==(const CascadeConfig&) const = default;
};

template <class T>
StageModel<T> build_stage(const StageConfig& cfg, Rng& rng);

template <class T>
CascadeModel<T> build_cascade(const CascadeConfig& cfg, Rng& rng);

// ---- forward / backward ------------------------------------------------------

// Activations recorded by a forward pass, consumed by the backward pass.
template <class T>
struct StageTape {
  std::vector<Tensor5<T>> conv_in;            // input of every conv, canonical order
  std::vector<Tensor5<T>> act;                // post-activation output of every conv
  std::vector<std::vector<T>> dropout_masks;  // per block (encoder levels then decoder levels)
  std::vector<std::vector<int64_t>> pool_argmax;
  std::vector<Tensor5<T>> skips;              // encoder block outputs, per pooled level
  bool recorded = false;
};

template <class T>
struct StageGrads {
  std::vector<Tensor5<T>> w;
  std::vector<std::vector<T>> b;
};

template <class T>
StageGrads<T> zero_grads(const StageModel<T>& m);

template <class T>
void add_scaled(StageGrads<T>& dst, const StageGrads<T>& src, T scale);

// returns logits with out_channels channels and the input's spatial dims
template <class T>
Tensor5<T> stage_forward(const StageModel<T>& m, const Tensor5<T>& input, bool training, Rng& rng,
                         StageTape<T>* tape = nullptr);

// accumulates parameter gradients into `grads` and returns the gradient wrt
// the stage input
template <class T>
Tensor5<T> stage_backward(const StageModel<T>& m, const StageTape<T>& tape,
                          const Tensor5<T>& grad_logits, StageGrads<T>& grads);

template <class T>
struct CascadeTape {
  StageTape<T> s1, s2, s3;
  bool ran_stage3 = false;
};

template <class T>
struct CascadeGrads {
  StageGrads<T> s1, s2, s3;
};

template <class T>
struct CascadeLogits {
  Tensor5<T> p1, p2, p3;  // p3 empty unless stage 3 ran
};

template <class T>
CascadeGrads<T> zero_grads(const CascadeModel<T>& m);

template <class T>
void add_scaled(CascadeGrads<T>& dst, const CascadeGrads<T>& src, T scale);

// run_stage3 = false skips the third stage entirely (training samples without
// MVO are never forwarded through it)
template <class T>
CascadeLogits<T> cascade_forward(const CascadeModel<T>& m, const Tensor5<T>& x, bool training,
                                 Rng& rng, CascadeTape<T>* tape = nullptr, bool run_stage3 = true);

// g1/g2/g3 are dL/dlogits of the per-stage loss terms (g3 ignored when stage 3
// did not run). Gradients flow backward through the logit concatenations, so
// stage-1 parameters receive contributions from every active loss term.
template <class T>
void cascade_backward(const CascadeModel<T>& m, const CascadeTape<T>& tape, const Tensor5<T>& g1,
                      const Tensor5<T>& g2, const Tensor5<T>& g3, CascadeGrads<T>& grads);

// ---- checkpoints ---------------------------------------------------------------
//
// Binary container, little-endian:
//   magic "CSEG1\0", u32 json length, architecture JSON,
//   u32 tensor count, then per tensor:
//     u16 name length, name, u8 ndim, ndim x u32 dims, f32 payload.
// Tensors are stored twice, under "theta/<stage>/<conv>" (training weights)
// and "ema/<stage>/<conv>" (shadow weights used at inference).

void save_checkpoint(const CascadeModel<float>& model, const CascadeModel<float>& ema,
                     const std::string& path);

struct Checkpoint {
  CascadeModel<float> model;
  CascadeModel<float> ema;
  CascadeConfig config;
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace careseg
