#pragma once

#include <array>

#include "careseg/hierarchy.hpp"
#include "careseg/tensor.hpp"
#include "careseg/volume.hpp"

namespace careseg {

// Per-label weights w_k = M_k / M (the voxel fraction carrying label k in the
// ground truth). The `InverseSquare` alternative w_k = 1/(M_k^2 + eps) is the
// common literature variant, kept behind a switch for experiments.
enum class DiceWeighting { Paper, InverseSquare };

struct LabelWeights {
  std::vector<double> w;
};

struct CascadeLossConfig {
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  double lambda3 = 1.0;
  double epsilon = 1e-7;
  DiceWeighting weighting = DiceWeighting::Paper;
};

struct CascadeLossResult {
  double total = 0.0;
  std::array<double, 3> per_stage{0.0, 0.0, 0.0};
  int delta_mvo = 0;
};

// numerically stable per-voxel softmax over the channel axis
ProbVolume softmax_channels(const ProbVolume& logits);

LabelWeights label_weights(const ProbVolume& y_onehot, DiceWeighting weighting = DiceWeighting::Paper,
                           double eps = 1e-7);

// Weighted generalized Dice loss
//
//   L = 1 - 2 * sum_k w_k sum_m yhat_mk y_mk
//           ------------------------------------------
//           sum_k w_k sum_m (yhat_mk^2 + y_mk)  + eps
//
// together with its analytic gradient wrt yhat. The weights are computed
// from the ground truth and treated as constants.
std::pair<double, ProbVolume> generalized_dice(const ProbVolume& y_onehot, const ProbVolume& yhat,
                                               double eps = 1e-7,
                                               DiceWeighting weighting = DiceWeighting::Paper);

// Gated three-stage objective for one sample:
//   lambda1 * L_GD(collapse(y,1), yhat1)
// + lambda2 * L_GD(collapse(y,2), yhat2)
// + delta_mvo * lambda3 * L_GD(y, yhat3)
// The mean over the batch is the caller's job.
CascadeLossResult cascade_loss(const LabelVolume& y, const ProbVolume& yhat1,
                               const ProbVolume& yhat2, const ProbVolume& yhat3,
                               const CascadeLossConfig& cfg);

// Tensor-level core shared by the training loop and the volume wrappers:
// loss + gradient wrt yhat from raw channel-major buffers (K channels of
// `voxels` values each). Accumulation runs in double for either T.
template <class T>
double generalized_dice_core(const T* y_onehot, const T* yhat, int64_t channels, int64_t voxels,
                             double eps, DiceWeighting weighting, T* grad_yhat);

}  // namespace careseg
