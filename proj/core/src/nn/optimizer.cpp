#include "defdiff/nn/optimizer.h"

#include <cmath>

#include "defdiff/check.h"

namespace defdiff::nn {

void Adam::addGroup(const std::vector<Param*>& params, double lr) {
  DD_CHECK_ARG(lr > 0.0, "learning rate must be positive");
  for (Param* p : params) {
    DD_CHECK_ARG(p != nullptr, "null parameter");
    slots.push_back({p, lr, Tensor::zeros(p->value.shape), Tensor::zeros(p->value.shape)});
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
  for (Slot& s : slots) {
    for (size_t i = 0; i < s.p->value.data.size(); ++i) {
      const double g = s.p->grad.data[i];
      s.m.data[i] = beta1 * s.m.data[i] + (1.0 - beta1) * g;
      s.v.data[i] = beta2 * s.v.data[i] + (1.0 - beta2) * g * g;
      const double mhat = s.m.data[i] / bc1;
      const double vhat = s.v.data[i] / bc2;
      s.p->value.data[i] -= s.lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

void Adam::zeroGrads() {
  for (Slot& s : slots) s.p->grad.setZero();
}

}  // namespace defdiff::nn
