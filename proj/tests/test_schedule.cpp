#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "defdiff/schedule.h"

using namespace defdiff;

namespace {

Tensor vec(std::initializer_list<double> v) {
  Tensor t({static_cast<int>(v.size())});
  size_t i = 0;
  for (double x : v) t.data[i++] = x;
  return t;
}

}  // namespace

TEST_CASE("linear schedule matches cumulative product oracle") {
  // Oracle: independent cumprod in long double over the same beta linspace.
  const int n = 1000;
  const double b0 = 1e-4, b1 = 0.02;
  NoiseSchedule s = makeSchedule(n, b0, b1);
  REQUIRE(s.numSteps() == n);

  long double prod = 1.0L;
  for (int i = 0; i < n; ++i) {
    const long double beta = b0 + (b1 - b0) * static_cast<long double>(i) / (n - 1);
    prod *= 1.0L - beta;
    CHECK(s.alphas[static_cast<size_t>(i)] ==
          doctest::Approx(static_cast<double>(1.0L - beta)).epsilon(1e-14));
    CHECK(s.alpha_bars[static_cast<size_t>(i)] ==
          doctest::Approx(static_cast<double>(prod)).epsilon(1e-12));
  }
  // Monotone decreasing signal.
  for (int i = 1; i < n; ++i)
    CHECK(s.alpha_bars[static_cast<size_t>(i)] < s.alpha_bars[static_cast<size_t>(i - 1)]);
  CHECK(s.orig_steps.front() == 1);
  CHECK(s.orig_steps.back() == n);
}

TEST_CASE("two-step schedule frozen values") {
  // beta = (0.1, 0.2) -> alpha = (0.9, 0.8), abar = (0.9, 0.72).
  NoiseSchedule s = makeSchedule(2, 0.1, 0.2);
  CHECK(s.alphas[0] == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(s.alphas[1] == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(s.alpha_bars[0] == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(s.alpha_bars[1] == doctest::Approx(0.72).epsilon(1e-15));
  CHECK(s.alphaBar(2) == doctest::Approx(0.72).epsilon(1e-15));
}

TEST_CASE("single step with zero beta is the identity process") {
  NoiseSchedule s = makeSchedule(1, 0.0, 0.0);
  CHECK(s.alpha_bars[0] == 1.0);
  CHECK(s.sqrt_one_minus_alpha_bars[0] == 0.0);
  Tensor x0 = vec({0.25, -0.5});
  Tensor eps = vec({3.0, -3.0});
  Tensor xt = addNoise(x0, eps, 1, s);
  CHECK(maxAbsDiff(xt, x0) == 0.0);
}

TEST_CASE("zero terminal SNR rescale frozen example") {
  // sqrt(abar) = (0.9, 0.5, 0.1): s' = (s - 0.1) * 0.9 / 0.8 -> (0.9, 0.45, 0).
  NoiseSchedule s;
  s.sqrt_alpha_bars = {0.9, 0.5, 0.1};
  s.alpha_bars = {0.81, 0.25, 0.01};
  s.sqrt_one_minus_alpha_bars = {std::sqrt(1 - 0.81), std::sqrt(1 - 0.25), std::sqrt(1 - 0.01)};
  s.alphas = {0.81, 0.25 / 0.81, 0.01 / 0.25};
  s.orig_steps = {1, 2, 3};

  NoiseSchedule r = rescaleZeroSnr(s);
  CHECK(r.sqrt_alpha_bars[0] == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(r.sqrt_alpha_bars[1] == doctest::Approx(0.45).epsilon(1e-15));
  CHECK(r.sqrt_alpha_bars[2] == 0.0);  // exact, not approximate
  CHECK(r.alpha_bars[2] == 0.0);
  CHECK(r.sqrt_one_minus_alpha_bars[2] == 1.0);
}

TEST_CASE("zero terminal SNR preserves the first step and is idempotent") {
  NoiseSchedule s = makeSchedule(1000, 1e-4, 0.02);
  NoiseSchedule r = rescaleZeroSnr(s);
  CHECK(std::abs(r.sqrt_alpha_bars.front() - s.sqrt_alpha_bars.front()) < 1e-12);
  CHECK(r.sqrt_alpha_bars.back() == 0.0);
  // First-step alpha_bar must survive within 1e-12 and a second application
  // must be a fixed point up to roundoff.
  CHECK(std::abs(r.alpha_bars.front() - s.alpha_bars.front()) < 1e-12);
  NoiseSchedule r2 = rescaleZeroSnr(r);
  for (size_t i = 0; i < r.sqrt_alpha_bars.size(); ++i)
    CHECK(std::abs(r2.sqrt_alpha_bars[i] - r.sqrt_alpha_bars[i]) < 1e-15);
}

TEST_CASE("v parameterization round trip recovers x0 and eps") {
  NoiseSchedule s = makeSchedule(1000, 1e-4, 0.02);
  Rng rng(7);
  for (int rep = 0; rep < 50; ++rep) {
    Tensor x0 = Tensor::randn({4, 5}, rng);
    Tensor eps = Tensor::randn({4, 5}, rng);
    const int tau = rng.uniformInt(1, 1000);
    Tensor xt = addNoise(x0, eps, tau, s);
    Tensor v = computeV(x0, eps, tau, s);
    auto [x0h, epsh] = vToX0Eps(xt, v, tau, s);
    CHECK(maxAbsDiff(x0h, x0) < 1e-6);
    CHECK(maxAbsDiff(epsh, eps) < 1e-6);
  }
}

TEST_CASE("round trip also holds on the zero terminal SNR schedule away from the terminal") {
  NoiseSchedule s = rescaleZeroSnr(makeSchedule(1000, 1e-4, 0.02));
  Rng rng(11);
  Tensor x0 = Tensor::randn({3, 3}, rng);
  Tensor eps = Tensor::randn({3, 3}, rng);
  for (int tau : {1, 2, 500, 999}) {
    Tensor xt = addNoise(x0, eps, tau, s);
    Tensor v = computeV(x0, eps, tau, s);
    auto [x0h, epsh] = vToX0Eps(xt, v, tau, s);
    CHECK(maxAbsDiff(x0h, x0) < 1e-6);
    CHECK(maxAbsDiff(epsh, eps) < 1e-6);
  }
  // At the terminal step the state is pure noise and x0 is recovered from v
  // alone: x_N = eps and v_N = -x0.
  Tensor xN = addNoise(x0, eps, 1000, s);
  CHECK(maxAbsDiff(xN, eps) == 0.0);
  Tensor vN = computeV(x0, eps, 1000, s);
  auto [x0h, epsh] = vToX0Eps(xN, vN, 1000, s);
  CHECK(maxAbsDiff(x0h, x0) < 1e-12);
  CHECK(maxAbsDiff(epsh, eps) < 1e-12);
}

TEST_CASE("subsampled schedule keeps endpoints and original step ids") {
  NoiseSchedule s = makeSchedule(1000, 1e-4, 0.02);
  NoiseSchedule sub = subsampleSchedule(s, 50);
  REQUIRE(sub.numSteps() == 50);
  CHECK(sub.orig_steps.front() == 1);
  CHECK(sub.orig_steps.back() == 1000);
  for (int i = 0; i < sub.numSteps(); ++i) {
    // Every entry must agree with the parent at its original index.
    CHECK(sub.alpha_bars[static_cast<size_t>(i)] ==
          s.alphaBar(sub.orig_steps[static_cast<size_t>(i)]));
  }
  // Rebuilt alphas must reproduce the cumulative product.
  double prod = 1.0;
  for (int i = 0; i < sub.numSteps(); ++i) {
    prod *= sub.alphas[static_cast<size_t>(i)];
    CHECK(prod == doctest::Approx(sub.alpha_bars[static_cast<size_t>(i)]).epsilon(1e-12));
  }
  // Degenerate cases.
  NoiseSchedule one = subsampleSchedule(s, 1);
  CHECK(one.numSteps() == 1);
  CHECK(one.orig_steps[0] == 1000);
  NoiseSchedule all = subsampleSchedule(s, 1000);
  CHECK(all.numSteps() == 1000);
}

TEST_CASE("ancestral step at tau 1 is the clamped mean") {
  NoiseSchedule s = makeSchedule(10, 0.01, 0.1);
  Rng rng(3);
  Tensor xt = vec({0.5, -2.0, 0.1});
  Tensor v = vec({0.0, 0.0, 0.0});
  Tensor out = ddpmStep(xt, v, 1, s, rng);
  // x0_hat = sqrt(abar_1) * x_1, then clamped.
  const double a = s.sqrt_alpha_bars[0];
  CHECK(out[0] == doctest::Approx(a * 0.5).epsilon(1e-15));
  CHECK(out[1] == -1.0);
  CHECK(out[2] == doctest::Approx(a * 0.1).epsilon(1e-15));
}

TEST_CASE("ancestral step posterior mean matches hand-computed coefficients") {
  // Two-step schedule with beta = (0.1, 0.2). At tau = 2:
  //   coef_x0 = sqrt(0.9) * 0.2 / (1 - 0.72)
  //   coef_xt = sqrt(0.8) * (1 - 0.9) / (1 - 0.72)
  //   var     = 0.2 * (1 - 0.9) / (1 - 0.72)
  NoiseSchedule s = makeSchedule(2, 0.1, 0.2);
  Tensor xt = vec({0.4});
  Tensor v = vec({0.3});
  // Reproduce the conversion: x0_hat = sqrt(.72)*.4 - sqrt(.28)*.3 (inside [-1,1]).
  const double x0h = std::sqrt(0.72) * 0.4 - std::sqrt(0.28) * 0.3;
  const double coef_x0 = std::sqrt(0.9) * 0.2 / 0.28;
  const double coef_xt = std::sqrt(0.8) * 0.1 / 0.28;
  const double var = 0.2 * 0.1 / 0.28;

  // Two different seeds must move together: out = mu + sigma * z.
  Rng ra(5), rb(6);
  Tensor outa = ddpmStep(xt, v, 2, s, ra);
  Tensor outb = ddpmStep(xt, v, 2, s, rb);
  Rng ra2(5), rb2(6);
  const double za = ra2.normal(), zb = rb2.normal();
  const double mu = coef_x0 * x0h + coef_xt * 0.4;
  CHECK(outa[0] == doctest::Approx(mu + std::sqrt(var) * za).epsilon(1e-12));
  CHECK(outb[0] == doctest::Approx(mu + std::sqrt(var) * zb).epsilon(1e-12));
}

TEST_CASE("sampling chain with a fixed rng seed is reproducible") {
  NoiseSchedule s = subsampleSchedule(rescaleZeroSnr(makeSchedule(1000, 1e-4, 0.02)), 50);
  auto run = [&](uint64_t seed) {
    Rng rng(seed);
    Tensor x = Tensor::randn({2, 2}, rng);
    for (int i = s.numSteps(); i >= 1; --i) {
      Tensor v = Tensor::zeros({2, 2});  // stand-in denoiser
      x = ddpmStep(x, v, i, s, rng);
    }
    return x;
  };
  Tensor a = run(42), b = run(42), c = run(43);
  CHECK(maxAbsDiff(a, b) == 0.0);
  CHECK(maxAbsDiff(a, c) > 0.0);
  CHECK(allFinite(a));
}

TEST_CASE("schedule text dump lists original step ids") {
  NoiseSchedule s = subsampleSchedule(makeSchedule(10, 0.01, 0.1), 3);
  std::string txt = scheduleToText(s);
  CHECK(txt.find("# step alpha alpha_bar") != std::string::npos);
  // 3 data lines, first column = original indices 1, 5..6, 10.
  CHECK(txt.find("\n1 ") != std::string::npos);
  CHECK(txt.find("\n10 ") != std::string::npos);
}

TEST_CASE("invalid arguments are rejected") {
  CHECK_THROWS_AS(makeSchedule(0, 1e-4, 0.02), std::invalid_argument);
  CHECK_THROWS_AS(makeSchedule(10, 0.02, 1e-4), std::invalid_argument);
  CHECK_THROWS_AS(makeSchedule(10, -0.1, 0.02), std::invalid_argument);
  NoiseSchedule s = makeSchedule(10, 0.01, 0.1);
  Tensor x = Tensor::zeros({2});
  CHECK_THROWS_AS(addNoise(x, x, 0, s), std::invalid_argument);
  CHECK_THROWS_AS(addNoise(x, x, 11, s), std::invalid_argument);
  CHECK_THROWS_AS(subsampleSchedule(s, 0), std::invalid_argument);
  CHECK_THROWS_AS(subsampleSchedule(s, 11), std::invalid_argument);
  NoiseSchedule flat;
  flat.sqrt_alpha_bars = {0.5, 0.5};
  flat.alpha_bars = {0.25, 0.25};
  flat.sqrt_one_minus_alpha_bars = {std::sqrt(0.75), std::sqrt(0.75)};
  flat.alphas = {0.25, 1.0};
  flat.orig_steps = {1, 2};
  CHECK_THROWS_AS(rescaleZeroSnr(flat), std::invalid_argument);
}
