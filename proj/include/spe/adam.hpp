#pragma once

#include <vector>

#include "spe/tape.hpp"

namespace spe {

// If the global gradient norm divided by the batch size exceeds max_ratio,
// rescale all gradients so it equals max_ratio. Zero gradients pass through.
void clip_by_batch_norm(GradMap& grads, int64_t batch_size, double max_ratio = 1.0);

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adam with bias correction. Moment slots are keyed by parameter and created
// on first use; the step counter t advances once per step() call.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(const GradMap& grads);

  int64_t t() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

  // Moment access for tests and checkpoint round-trips.
  struct Slot {
    Parameter* param;
    Tensor m;
    Tensor v;
  };
  std::vector<Slot>& slots() { return slots_; }

 private:
  Slot& slot_for(Parameter& p);

  AdamConfig cfg_;
  std::vector<Slot> slots_;
  int64_t t_ = 0;
};

}  // namespace spe
