#include "defdiff/schedule.h"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace defdiff {

namespace {

void rebuildDerived(NoiseSchedule& s) {
  const size_t n = s.alpha_bars.size();
  s.sqrt_alpha_bars.resize(n);
  s.sqrt_one_minus_alpha_bars.resize(n);
  for (size_t i = 0; i < n; ++i) {
    s.sqrt_alpha_bars[i] = std::sqrt(s.alpha_bars[i]);
    s.sqrt_one_minus_alpha_bars[i] = std::sqrt(1.0 - s.alpha_bars[i]);
  }
}

void checkTau(int tau, const NoiseSchedule& s) {
  DD_CHECK_ARG(tau >= 1 && tau <= s.numSteps(),
               "step " << tau << " out of range [1, " << s.numSteps() << "]");
}

}  // namespace

double NoiseSchedule::alphaBar(int tau) const {
  checkTau(tau, *this);
  return alpha_bars[static_cast<size_t>(tau - 1)];
}

NoiseSchedule NoiseSchedule::fromAlphas(const std::vector<double>& alphas) {
  DD_CHECK_ARG(!alphas.empty(), "empty alpha sequence");
  NoiseSchedule s;
  s.alphas = alphas;
  s.alpha_bars.resize(alphas.size());
  double prod = 1.0;
  for (size_t i = 0; i < alphas.size(); ++i) {
    DD_CHECK_ARG(alphas[i] > 0.0 && alphas[i] <= 1.0, "alpha out of (0, 1]: " << alphas[i]);
    prod *= alphas[i];
    s.alpha_bars[i] = prod;
  }
  rebuildDerived(s);
  s.orig_steps.resize(alphas.size());
  for (size_t i = 0; i < alphas.size(); ++i) s.orig_steps[i] = static_cast<int>(i) + 1;
  return s;
}

NoiseSchedule makeSchedule(int num_steps, double beta_start, double beta_end,
                           ScheduleKind kind) {
  DD_CHECK_ARG(num_steps >= 1, "num_steps must be >= 1, got " << num_steps);
  DD_CHECK_ARG(beta_start >= 0.0 && beta_start <= beta_end && beta_end < 1.0,
               "need 0 <= beta_start <= beta_end < 1, got [" << beta_start << ", " << beta_end
                                                             << "]");
  DD_CHECK_ARG(kind == ScheduleKind::kLinear, "unknown schedule kind");
  std::vector<double> alphas(static_cast<size_t>(num_steps));
  for (int i = 0; i < num_steps; ++i) {
    const double frac = num_steps == 1 ? 0.0 : static_cast<double>(i) / (num_steps - 1);
    alphas[static_cast<size_t>(i)] = 1.0 - (beta_start + (beta_end - beta_start) * frac);
  }
  return NoiseSchedule::fromAlphas(alphas);
}

NoiseSchedule rescaleZeroSnr(const NoiseSchedule& s) {
  const int n = s.numSteps();
  DD_CHECK_ARG(n >= 1, "empty schedule");
  const double s1 = s.sqrt_alpha_bars.front();
  const double sn = s.sqrt_alpha_bars.back();
  DD_CHECK_ARG(s1 != sn, "degenerate schedule: sqrt(abar_1) == sqrt(abar_N)");

  NoiseSchedule out;
  out.sqrt_alpha_bars.resize(static_cast<size_t>(n));
  out.alpha_bars.resize(static_cast<size_t>(n));
  out.sqrt_one_minus_alpha_bars.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double v = (s.sqrt_alpha_bars[static_cast<size_t>(i)] - sn) * s1 / (s1 - sn);
    out.sqrt_alpha_bars[static_cast<size_t>(i)] = v;
    out.alpha_bars[static_cast<size_t>(i)] = v * v;
    out.sqrt_one_minus_alpha_bars[static_cast<size_t>(i)] = std::sqrt(1.0 - v * v);
  }
  // Terminal step is exactly zero by construction: (sn - sn) * s1 / (s1 - sn).
  out.alphas.resize(static_cast<size_t>(n));
  out.alphas[0] = out.alpha_bars[0];
  for (int i = 1; i < n; ++i)
    out.alphas[static_cast<size_t>(i)] =
        out.alpha_bars[static_cast<size_t>(i)] / out.alpha_bars[static_cast<size_t>(i - 1)];
  out.orig_steps = s.orig_steps;
  return out;
}

NoiseSchedule subsampleSchedule(const NoiseSchedule& s, int steps) {
  const int n = s.numSteps();
  DD_CHECK_ARG(steps >= 1 && steps <= n, "subsample steps " << steps << " out of [1, " << n << "]");
  std::vector<int> picks(static_cast<size_t>(steps));
  for (int k = 0; k < steps; ++k) {
    // Spread over [1, n], endpoints included.
    const double f = steps == 1 ? 1.0 : static_cast<double>(k) / (steps - 1);
    picks[static_cast<size_t>(k)] = 1 + static_cast<int>(std::lround(f * (n - 1)));
  }
  picks.erase(std::unique(picks.begin(), picks.end()), picks.end());

  NoiseSchedule out;
  const size_t m = picks.size();
  out.alpha_bars.resize(m);
  out.sqrt_alpha_bars.resize(m);
  out.sqrt_one_minus_alpha_bars.resize(m);
  out.alphas.resize(m);
  out.orig_steps.resize(m);
  for (size_t k = 0; k < m; ++k) {
    const size_t src = static_cast<size_t>(picks[k] - 1);
    out.alpha_bars[k] = s.alpha_bars[src];
    out.sqrt_alpha_bars[k] = s.sqrt_alpha_bars[src];
    out.sqrt_one_minus_alpha_bars[k] = s.sqrt_one_minus_alpha_bars[src];
    out.orig_steps[k] = s.orig_steps[src];
  }
  out.alphas[0] = out.alpha_bars[0];
  for (size_t k = 1; k < m; ++k) out.alphas[k] = out.alpha_bars[k] / out.alpha_bars[k - 1];
  return out;
}

Tensor addNoise(const Tensor& x0, const Tensor& eps, int tau, const NoiseSchedule& s) {
  checkTau(tau, s);
  DD_CHECK(x0.sameShape(eps), "x0/eps shape mismatch");
  const size_t i = static_cast<size_t>(tau - 1);
  return linComb(s.sqrt_alpha_bars[i], x0, s.sqrt_one_minus_alpha_bars[i], eps);
}

Tensor computeV(const Tensor& x0, const Tensor& eps, int tau, const NoiseSchedule& s) {
  checkTau(tau, s);
  DD_CHECK(x0.sameShape(eps), "x0/eps shape mismatch");
  const size_t i = static_cast<size_t>(tau - 1);
  return linComb(s.sqrt_alpha_bars[i], eps, -s.sqrt_one_minus_alpha_bars[i], x0);
}

std::pair<Tensor, Tensor> vToX0Eps(const Tensor& x_tau, const Tensor& v, int tau,
                                   const NoiseSchedule& s) {
  checkTau(tau, s);
  DD_CHECK(x_tau.sameShape(v), "x_tau/v shape mismatch");
  const size_t i = static_cast<size_t>(tau - 1);
  const double a = s.sqrt_alpha_bars[i];
  const double b = s.sqrt_one_minus_alpha_bars[i];
  Tensor x0_hat = linComb(a, x_tau, -b, v);
  Tensor eps_hat = linComb(b, x_tau, a, v);
  return {std::move(x0_hat), std::move(eps_hat)};
}

Tensor ddpmStep(const Tensor& x_tau, const Tensor& v_pred, int tau, const NoiseSchedule& s,
                Rng& rng) {
  checkTau(tau, s);
  auto [x0_hat, eps_hat] = vToX0Eps(x_tau, v_pred, tau, s);
  (void)eps_hat;
  clampInPlace(x0_hat, -1.0, 1.0);
  if (tau == 1) return x0_hat;

  const size_t i = static_cast<size_t>(tau - 1);
  const double abar = s.alpha_bars[i];
  const double abar_prev = s.alpha_bars[i - 1];
  const double alpha = s.alphas[i];
  const double beta = 1.0 - alpha;
  const double one_minus = 1.0 - abar;
  if (one_minus < 1e-300) return x0_hat;  // noiseless step, posterior degenerates

  const double coef_x0 = std::sqrt(abar_prev) * beta / one_minus;
  const double coef_xt = std::sqrt(alpha) * (1.0 - abar_prev) / one_minus;
  const double var = beta * (1.0 - abar_prev) / one_minus;
  const double sigma = std::sqrt(std::max(0.0, var));

  Tensor out = linComb(coef_x0, x0_hat, coef_xt, x_tau);
  if (sigma > 0.0)
    for (double& x : out.data) x += sigma * rng.normal();
  return out;
}

std::string scheduleToText(const NoiseSchedule& s) {
  std::ostringstream oss;
  oss.precision(17);
  oss << "# step alpha alpha_bar\n";
  for (int i = 0; i < s.numSteps(); ++i)
    oss << s.orig_steps[static_cast<size_t>(i)] << " " << s.alphas[static_cast<size_t>(i)] << " "
        << s.alpha_bars[static_cast<size_t>(i)] << "\n";
  return oss.str();
}

}  // namespace defdiff
