#pragma once

#include <string>
#include <utility>
#include <vector>

#include "defdiff/rng.h"
#include "defdiff/tensor.h"

namespace defdiff {

enum class ScheduleKind { kLinear };

// Forward-process noise schedule. Step indices tau are 1-based in the API;
// vectors are stored 0-based. orig_steps maps each entry back to the step
// index of the schedule it was derived from (identity for a fresh schedule),
// which is what conditions the denoiser's timestep embedding after
// subsampling.
struct NoiseSchedule {
  std::vector<double> alphas;
  std::vector<double> alpha_bars;
  std::vector<double> sqrt_alpha_bars;
  std::vector<double> sqrt_one_minus_alpha_bars;
  std::vector<int> orig_steps;

  int numSteps() const { return static_cast<int>(alphas.size()); }
  double alphaBar(int tau) const;  // tau in [1, N]

  static NoiseSchedule fromAlphas(const std::vector<double>& alphas);
};

NoiseSchedule makeSchedule(int num_steps, double beta_start, double beta_end,
                           ScheduleKind kind = ScheduleKind::kLinear);

// Shift-and-scale of sqrt(alpha_bar) so the terminal step has exactly zero
// signal: s' = (s - s_N) * s_1 / (s_1 - s_N). Keeps s_1, forces s_N = 0.
NoiseSchedule rescaleZeroSnr(const NoiseSchedule& s);

// Picks `steps` entries spread uniformly over [1, N] (always including N and 1)
// and rebuilds a consistent shorter schedule from their alpha_bar values.
NoiseSchedule subsampleSchedule(const NoiseSchedule& s, int steps);

// x_tau = sqrt(abar) * x0 + sqrt(1 - abar) * eps
Tensor addNoise(const Tensor& x0, const Tensor& eps, int tau, const NoiseSchedule& s);

// v = sqrt(abar) * eps - sqrt(1 - abar) * x0
Tensor computeV(const Tensor& x0, const Tensor& eps, int tau, const NoiseSchedule& s);

// Algebraic inverse of the two maps above: recovers (x0_hat, eps_hat).
std::pair<Tensor, Tensor> vToX0Eps(const Tensor& x_tau, const Tensor& v, int tau,
                                   const NoiseSchedule& s);

// One ancestral sampling step tau -> tau-1. Converts v_pred to x0_hat, clamps
// x0_hat to [-1, 1], and draws from the posterior; at tau == 1 returns the
// clamped x0_hat with zero variance.
Tensor ddpmStep(const Tensor& x_tau, const Tensor& v_pred, int tau, const NoiseSchedule& s,
                Rng& rng);

// Plain-text dump: one "step alpha alpha_bar" line per step.
std::string scheduleToText(const NoiseSchedule& s);

}  // namespace defdiff
