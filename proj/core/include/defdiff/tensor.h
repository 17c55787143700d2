#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "defdiff/check.h"
#include "defdiff/rng.h"

namespace defdiff {

// Dense row-major tensor of doubles, rank 1..4. Images use (C, H, W) layout,
// feature grids use (rows, cols, channels) with channels fastest.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(numel()), 0.0);
  }

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<int> s, double v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }
  static Tensor randn(std::vector<int> s, Rng& rng, double stddev = 1.0) {
    Tensor t(std::move(s));
    for (double& x : t.data) x = stddev * rng.normal();
    return t;
  }

  int64_t numel() const {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return shape.empty() ? 0 : n;
  }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }
  bool sameShape(const Tensor& o) const { return shape == o.shape; }
  bool empty() const { return data.empty(); }

  double& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

  double& at(int i, int j) { return data[static_cast<size_t>(i) * shape[1] + j]; }
  double at(int i, int j) const { return data[static_cast<size_t>(i) * shape[1] + j]; }
  double& at(int i, int j, int k) {
    return data[(static_cast<size_t>(i) * shape[1] + j) * shape[2] + k];
  }
  double at(int i, int j, int k) const {
    return data[(static_cast<size_t>(i) * shape[1] + j) * shape[2] + k];
  }

  void setZero() { std::fill(data.begin(), data.end(), 0.0); }

  std::string shapeStr() const;
};

bool allFinite(const Tensor& t);
double maxAbsDiff(const Tensor& a, const Tensor& b);
void clampInPlace(Tensor& t, double lo, double hi);

// a + s * b, elementwise.
Tensor axpy(const Tensor& a, double s, const Tensor& b);
// s1 * a + s2 * b, elementwise.
Tensor linComb(double s1, const Tensor& a, double s2, const Tensor& b);

// FNV-1a over the raw bytes of shape and data; used for corpus/checkpoint
// identity checks.
uint64_t tensorHash(const Tensor& t, uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace defdiff
