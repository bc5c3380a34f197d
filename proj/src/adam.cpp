#include "spe/adam.hpp"

#include <cmath>

namespace spe {

void clip_by_batch_norm(GradMap& grads, int64_t batch_size, double max_ratio) {
  check(batch_size >= 1, "clip_by_batch_norm: batch_size must be >= 1");
  const double norm = grads.global_norm();
  const double limit = max_ratio * static_cast<double>(batch_size);
  if (norm > limit) grads.scale(limit / norm);
}

Adam::Slot& Adam::slot_for(Parameter& p) {
  for (auto& s : slots_) {
    if (s.param == &p) return s;
  }
  slots_.push_back(Slot{&p, Tensor::zeros(p.value.shape()), Tensor::zeros(p.value.shape())});
  return slots_.back();
}

void Adam::step(const GradMap& grads) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (const auto& [param, g] : grads.entries) {
    check(g.same_shape(param->value), "adam: gradient shape mismatch for " + param->name);
    check(g.all_finite(), "adam: non-finite gradient for " + param->name);
    Slot& s = slot_for(*param);
    double* m = s.m.data();
    double* v = s.v.data();
    double* w = param->value.data();
    const double* gd = g.data();
    const int64_t n = g.numel();
    for (int64_t i = 0; i < n; ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gd[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gd[i] * gd[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.epsilon);
    }
  }
}

}  // namespace spe
