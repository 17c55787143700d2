#include "defdiff/tensor.h"

#include <cmath>
#include <cstring>
#include <sstream>

namespace defdiff {

std::string Tensor::shapeStr() const {
  std::ostringstream oss;
  oss << "(";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) oss << ", ";
    oss << shape[i];
  }
  oss << ")";
  return oss.str();
}

bool allFinite(const Tensor& t) {
  for (double x : t.data)
    if (!std::isfinite(x)) return false;
  return true;
}

double maxAbsDiff(const Tensor& a, const Tensor& b) {
  DD_CHECK(a.sameShape(b), "shape mismatch " << a.shapeStr() << " vs " << b.shapeStr());
  double m = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::fabs(a.data[i] - b.data[i]));
  return m;
}

void clampInPlace(Tensor& t, double lo, double hi) {
  for (double& x : t.data) x = std::min(hi, std::max(lo, x));
}

Tensor axpy(const Tensor& a, double s, const Tensor& b) {
  DD_CHECK(a.sameShape(b), "shape mismatch " << a.shapeStr() << " vs " << b.shapeStr());
  Tensor out = a;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += s * b.data[i];
  return out;
}

Tensor linComb(double s1, const Tensor& a, double s2, const Tensor& b) {
  DD_CHECK(a.sameShape(b), "shape mismatch " << a.shapeStr() << " vs " << b.shapeStr());
  Tensor out = a;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = s1 * a.data[i] + s2 * b.data[i];
  return out;
}

uint64_t tensorHash(const Tensor& t, uint64_t seed) {
  uint64_t h = seed;
  auto mix = [&h](const void* p, size_t n) {
    const unsigned char* c = static_cast<const unsigned char*>(p);
    for (size_t i = 0; i < n; ++i) {
      h ^= c[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (int d : t.shape) mix(&d, sizeof(d));
  if (!t.data.empty()) mix(t.data.data(), t.data.size() * sizeof(double));
  return h;
}

}  // namespace defdiff
