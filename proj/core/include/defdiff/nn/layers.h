#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "defdiff/rng.h"
#include "defdiff/tensor.h"

namespace defdiff::nn {

// Feature maps are (C, H, W); token matrices are (rows, cols). Gradients
// accumulate into Param::grad until zeroGrads, so multi-use parameters (the
// timestep embedding feeding every res block) sum naturally.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;

  Param() = default;
  Param(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {
    grad = Tensor::zeros(value.shape);
  }
};

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
inline Eigen::Map<RowMat> matView(Tensor& t, int rows, int cols) {
  return Eigen::Map<RowMat>(t.data.data(), rows, cols);
}
inline Eigen::Map<const RowMat> matView(const Tensor& t, int rows, int cols) {
  return Eigen::Map<const RowMat>(t.data.data(), rows, cols);
}

// 2-D convolution over (C, H, W) via im2col and a dense GEMM. Padding is
// (k-1)/2 so stride 1 preserves the spatial size and stride 2 halves it
// (rounding up). backward() releases the cached im2col matrix.
struct Conv2d {
  int in_ch = 0, out_ch = 0, ksize = 1, stride = 1, pad = 0;
  Param w;  // (out_ch, in_ch * k * k)
  Param b;  // (out_ch)

  Conv2d() = default;
  Conv2d(const std::string& name, int in_ch, int out_ch, int ksize, int stride, Rng& rng,
         bool zero_init = false);
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& gy);
  void collectParams(std::vector<Param*>& out);

 private:
  Eigen::MatrixXd cols_;  // (in_ch*k*k, out_h*out_w)
  int in_h_ = 0, in_w_ = 0, out_h_ = 0, out_w_ = 0;
};

// Group normalization with learnable per-channel scale and shift. Channel
// count must be divisible by the group count.
struct GroupNorm {
  int ch = 0, groups = 8;
  double eps = 1e-5;
  Param gamma, beta;

  GroupNorm() = default;
  GroupNorm(const std::string& name, int ch, int groups = 8);
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& gy);
  void collectParams(std::vector<Param*>& out);

 private:
  Tensor x_hat_;
  std::vector<double> inv_std_;
};

struct SiLU {
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& gy);

 private:
  Tensor x_;
};

// Affine map on the last axis: input (n, in) or (in), weight (out, in).
struct Linear {
  int in_dim = 0, out_dim = 0;
  Param w, b;

  Linear() = default;
  Linear(const std::string& name, int in_dim, int out_dim, Rng& rng, bool zero_init = false);
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& gy);
  void collectParams(std::vector<Param*>& out);

 private:
  Tensor x_;
  int rows_ = 0;
  bool was_1d_ = false;
};

// Sinusoidal embedding of the original-schedule step index followed by a
// two-layer MLP. The step has no gradient, so backward only fills weights.
struct TimeEmbed {
  int sin_dim = 0, dim = 0;
  Linear l1, l2;
  SiLU act;

  TimeEmbed() = default;
  TimeEmbed(const std::string& name, int sin_dim, int dim, Rng& rng);
  Tensor forward(int orig_step);
  void backward(const Tensor& gy);
  void collectParams(std::vector<Param*>& out);
};

Tensor sinusoidalEmbed(int step, int dim);

// Nearest-neighbor 2x spatial scaling and its adjoint.
Tensor upsample2x(const Tensor& x);
Tensor downsum2x(const Tensor& gy);

// Channel concatenation of (C, H, W) maps and the matching split.
Tensor concatChannels(const Tensor& a, const Tensor& b);
void splitChannels(const Tensor& g, int ch_a, Tensor& ga, Tensor& gb);

}  // namespace defdiff::nn
