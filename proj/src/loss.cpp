#include "careseg/loss.hpp"

#include <cmath>

namespace careseg {

ProbVolume softmax_channels(const ProbVolume& logits) {
  if (logits.kind != ProbVolume::Kind::Logits)
    throw NotProbabilities("softmax_channels expects logits");
  const int64_t n = logits.dims.count();
  const int64_t K = logits.channels;
  ProbVolume out = make_probs(logits.dims, logits.spacing, K, ProbVolume::Kind::Probs);
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) {
    float mx = logits.data[size_t(i)];
    for (int64_t k = 1; k < K; ++k) mx = std::max(mx, logits.data[size_t(k * n + i)]);
    double sum = 0.0;
    for (int64_t k = 0; k < K; ++k) {
      const double e = std::exp(double(logits.data[size_t(k * n + i)]) - double(mx));
      out.data[size_t(k * n + i)] = float(e);
      sum += e;
    }
    for (int64_t k = 0; k < K; ++k) out.data[size_t(k * n + i)] = float(out.data[size_t(k * n + i)] / sum);
  }
  return out;
}

LabelWeights label_weights(const ProbVolume& y_onehot, DiceWeighting weighting, double eps) {
  const int64_t n = y_onehot.dims.count();
  const int64_t K = y_onehot.channels;
  LabelWeights lw;
  lw.w.resize(size_t(K));
  for (int64_t k = 0; k < K; ++k) {
    double count = 0.0;
    const float* ch = &y_onehot.data[size_t(k * n)];
    for (int64_t i = 0; i < n; ++i) count += ch[i];
    if (weighting == DiceWeighting::Paper)
      lw.w[size_t(k)] = count / double(n);
    else
      lw.w[size_t(k)] = 1.0 / (count * count + eps);
  }
  return lw;
}

template <class T>
double generalized_dice_core(const T* y, const T* yhat, int64_t K, int64_t M, double eps,
                             DiceWeighting weighting, T* grad) {
  std::vector<double> w(size_t(K));
  for (int64_t k = 0; k < K; ++k) {
    double count = 0.0;
    const T* yk = y + k * M;
    for (int64_t m = 0; m < M; ++m) count += double(yk[m]);
    w[size_t(k)] = weighting == DiceWeighting::Paper ? count / double(M)
                                                     : 1.0 / (count * count + eps);
  }

  double num = 0.0, den = eps;
  for (int64_t k = 0; k < K; ++k) {
    const T* yk = y + k * M;
    const T* pk = yhat + k * M;
    double inter = 0.0, mass = 0.0;
    for (int64_t m = 0; m < M; ++m) {
      inter += double(pk[m]) * double(yk[m]);
      mass += double(pk[m]) * double(pk[m]) + double(yk[m]);
    }
    num += w[size_t(k)] * inter;
    den += w[size_t(k)] * mass;
  }
  const double loss = 1.0 - 2.0 * num / den;

  if (grad) {
    // quotient rule: dL/dyhat_mk = -2 (w_k y_mk den - num * 2 w_k yhat_mk) / den^2
    const double inv_den = 1.0 / den;
    const double num_den2 = num * inv_den * inv_den;
    for (int64_t k = 0; k < K; ++k) {
      const double wk = w[size_t(k)];
      const T* yk = y + k * M;
      const T* pk = yhat + k * M;
      T* gk = grad + k * M;
#pragma omp parallel for schedule(static)
      for (int64_t m = 0; m < M; ++m)
        gk[m] = T(-2.0 * wk * (double(yk[m]) * inv_den - 2.0 * double(pk[m]) * num_den2));
    }
  }
  return loss;
}

template double generalized_dice_core<float>(const float*, const float*, int64_t, int64_t, double,
                                             DiceWeighting, float*);
template double generalized_dice_core<double>(const double*, const double*, int64_t, int64_t,
                                              double, DiceWeighting, double*);

std::pair<double, ProbVolume> generalized_dice(const ProbVolume& y_onehot, const ProbVolume& yhat,
                                               double eps, DiceWeighting weighting) {
  if (!(y_onehot.dims == yhat.dims) || y_onehot.channels != yhat.channels)
    throw GeometryMismatch("generalized_dice: geometry/channel mismatch");
  ProbVolume grad = make_probs(yhat.dims, yhat.spacing, yhat.channels, ProbVolume::Kind::Probs);
  const double loss = generalized_dice_core<float>(y_onehot.data.data(), yhat.data.data(),
                                                   yhat.channels, yhat.dims.count(), eps, weighting,
                                                   grad.data.data());
  return {loss, std::move(grad)};
}

CascadeLossResult cascade_loss(const LabelVolume& y, const ProbVolume& yhat1,
                               const ProbVolume& yhat2, const ProbVolume& yhat3,
                               const CascadeLossConfig& cfg) {
  if (yhat1.channels != 3 || yhat2.channels != 4 || yhat3.channels != 5)
    throw SchemaMismatch("cascade_loss: stage predictions must have 3/4/5 channels");

  CascadeLossResult r;
  r.delta_mvo = contains_mvo(y) ? 1 : 0;

  const auto stage_loss = [&](uint8_t stage, const ProbVolume& yhat) {
    const LabelVolume ys = collapse_to_stage(y, stage);
    const ProbVolume onehot = one_hot(ys, channels_for_stage(stage));
    return generalized_dice(onehot, yhat, cfg.epsilon, cfg.weighting).first;
  };

  r.per_stage[0] = stage_loss(1, yhat1);
  r.per_stage[1] = stage_loss(2, yhat2);
  r.per_stage[2] = stage_loss(3, yhat3);  // logged even when gated out of the total
  r.total = cfg.lambda1 * r.per_stage[0] + cfg.lambda2 * r.per_stage[1] +
            double(r.delta_mvo) * cfg.lambda3 * r.per_stage[2];
  return r;
}

}  // namespace careseg
