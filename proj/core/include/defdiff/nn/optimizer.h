#pragma once

#include <vector>

#include "defdiff/nn/layers.h"

namespace defdiff::nn {

// Adam with per-group learning rates (network vs feature atlas). step()
// consumes the accumulated Param::grad fields; call zeroGrads() before the
// next accumulation.
struct Adam {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  void addGroup(const std::vector<Param*>& params, double lr);
  void step();
  void zeroGrads();
  int64_t stepCount() const { return t_; }

  struct Slot {
    Param* p;
    double lr;
    Tensor m, v;
  };
  std::vector<Slot> slots;

 private:
  int64_t t_ = 0;
};

}  // namespace defdiff::nn
