#include "careseg/optim.hpp"

#include <cmath>

namespace careseg {

template <class T>
CascadeOptimizer<T>::CascadeOptimizer(const CascadeModel<T>& model, AdamConfig cfg)
    : cfg_(cfg), m_(zero_grads(model)), v_(zero_grads(model)), ema_(model) {}

namespace {

template <class T>
void adam_update(T* param, T* m, T* v, const T* g, int64_t n, double lr_corr, double beta1,
                 double beta2, double eps, double inv_bias2) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) {
    const double gi = double(g[i]);
    const double mi = beta1 * double(m[i]) + (1.0 - beta1) * gi;
    const double vi = beta2 * double(v[i]) + (1.0 - beta2) * gi * gi;
    m[i] = T(mi);
    v[i] = T(vi);
    param[i] = T(double(param[i]) - lr_corr * mi / (std::sqrt(vi * inv_bias2) + eps));
  }
}

template <class T>
void ema_update(T* shadow, const T* param, int64_t n, double decay) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i)
    shadow[i] = T(decay * double(shadow[i]) + (1.0 - decay) * double(param[i]));
}

template <class T>
void step_stage(StageModel<T>& model, StageModel<T>& ema, StageGrads<T>& m, StageGrads<T>& v,
                const StageGrads<T>& g, const AdamConfig& cfg, int64_t t) {
  const double bias1 = 1.0 - std::pow(cfg.beta1, double(t));
  const double bias2 = 1.0 - std::pow(cfg.beta2, double(t));
  const double lr_corr = cfg.lr / bias1;
  const double inv_bias2 = 1.0 / bias2;
  for (size_t i = 0; i < model.convs.size(); ++i) {
    auto& p = model.convs[i];
    adam_update(p.w.data.data(), m.w[i].data.data(), v.w[i].data.data(), g.w[i].data.data(),
                p.w.size(), lr_corr, cfg.beta1, cfg.beta2, cfg.eps, inv_bias2);
    adam_update(p.b.data(), m.b[i].data(), v.b[i].data(), g.b[i].data(), int64_t(p.b.size()),
                lr_corr, cfg.beta1, cfg.beta2, cfg.eps, inv_bias2);
    auto& e = ema.convs[i];
    ema_update(e.w.data.data(), p.w.data.data(), p.w.size(), cfg.ema_decay);
    ema_update(e.b.data(), p.b.data(), int64_t(p.b.size()), cfg.ema_decay);
  }
}

}  // namespace

template <class T>
void CascadeOptimizer<T>::step(CascadeModel<T>& model, const CascadeGrads<T>& grads) {
  ++step_count_;
  step_stage(model.stage1, ema_.stage1, m_.s1, v_.s1, grads.s1, cfg_, step_count_);
  step_stage(model.stage2, ema_.stage2, m_.s2, v_.s2, grads.s2, cfg_, step_count_);
  step_stage(model.stage3, ema_.stage3, m_.s3, v_.s3, grads.s3, cfg_, step_count_);
}

template class CascadeOptimizer<float>;
template class CascadeOptimizer<double>;

}  // namespace careseg
