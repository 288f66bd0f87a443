#pragma once

#include "careseg/net.hpp"

namespace careseg {

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double ema_decay = 0.999;
};

// Bias-corrected Adam over all cascade parameters, plus an exponential
// moving average of the weights. The EMA copy is what inference uses; raw
// parameters only ever see the training loop.
template <class T>
class CascadeOptimizer {
 public:
  CascadeOptimizer(const CascadeModel<T>& model, AdamConfig cfg);

  // applies one update from the accumulated gradients, then refreshes the EMA
  void step(CascadeModel<T>& model, const CascadeGrads<T>& grads);

  const CascadeModel<T>& ema() const { return ema_; }
  int64_t steps() const { return step_count_; }

 private:
  AdamConfig cfg_;
  CascadeGrads<T> m_;  // first moments, same layout as the gradients
  CascadeGrads<T> v_;  // second moments
  CascadeModel<T> ema_;
  int64_t step_count_ = 0;
};

}  // namespace careseg
