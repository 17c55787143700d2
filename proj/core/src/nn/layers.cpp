#include "defdiff/nn/layers.h"

#include <cmath>

#include "defdiff/check.h"

namespace defdiff::nn {

namespace {

Tensor initWeight(std::vector<int> shape, int fan_in, Rng& rng, bool zero_init) {
  if (zero_init) return Tensor::zeros(std::move(shape));
  return Tensor::randn(std::move(shape), rng, 1.0 / std::sqrt(static_cast<double>(fan_in)));
}

}  // namespace

Conv2d::Conv2d(const std::string& name, int in_ch_a, int out_ch_a, int ksize_a, int stride_a,
               Rng& rng, bool zero_init)
    : in_ch(in_ch_a), out_ch(out_ch_a), ksize(ksize_a), stride(stride_a), pad((ksize_a - 1) / 2) {
  DD_CHECK_ARG(in_ch > 0 && out_ch > 0 && (ksize == 1 || ksize == 3) && (stride == 1 || stride == 2),
               "bad conv config " << name);
  w = Param(name + ".w", initWeight({out_ch, in_ch * ksize * ksize}, in_ch * ksize * ksize, rng,
                                    zero_init));
  b = Param(name + ".b", Tensor::zeros({out_ch}));
}

Tensor Conv2d::forward(const Tensor& x) {
  DD_CHECK_ARG(x.rank() == 3 && x.dim(0) == in_ch,
               "conv " << w.name << " expects " << in_ch << " channels, got " << x.shapeStr());
  in_h_ = x.dim(1);
  in_w_ = x.dim(2);
  out_h_ = (in_h_ + 2 * pad - ksize) / stride + 1;
  out_w_ = (in_w_ + 2 * pad - ksize) / stride + 1;
  const int n = out_h_ * out_w_;
  const int kk = ksize * ksize;

  cols_.resize(in_ch * kk, n);
  for (int oi = 0; oi < out_h_; ++oi)
    for (int oj = 0; oj < out_w_; ++oj) {
      const int col = oi * out_w_ + oj;
      for (int c = 0; c < in_ch; ++c)
        for (int ki = 0; ki < ksize; ++ki)
          for (int kj = 0; kj < ksize; ++kj) {
            const int ii = oi * stride + ki - pad;
            const int jj = oj * stride + kj - pad;
            const double v = (ii < 0 || ii >= in_h_ || jj < 0 || jj >= in_w_)
                                 ? 0.0
                                 : x.data[static_cast<size_t>((c * in_h_ + ii) * in_w_ + jj)];
            cols_(c * kk + ki * ksize + kj, col) = v;
          }
    }

  Tensor y = Tensor::zeros({out_ch, out_h_, out_w_});
  matView(y, out_ch, n) = matView(w.value, out_ch, in_ch * kk) * cols_;
  for (int o = 0; o < out_ch; ++o) {
    const double bias = b.value.data[static_cast<size_t>(o)];
    for (int p = 0; p < n; ++p) y.data[static_cast<size_t>(o * n + p)] += bias;
  }
  return y;
}

Tensor Conv2d::backward(const Tensor& gy) {
  const int n = out_h_ * out_w_;
  const int kk = ksize * ksize;
  DD_CHECK_ARG(gy.rank() == 3 && gy.dim(0) == out_ch && gy.dim(1) == out_h_ && gy.dim(2) == out_w_,
               "conv backward shape mismatch " << gy.shapeStr());
  auto gym = matView(gy, out_ch, n);

  matView(w.grad, out_ch, in_ch * kk) += gym * cols_.transpose();
  for (int o = 0; o < out_ch; ++o) {
    double s = 0.0;
    for (int p = 0; p < n; ++p) s += gy.data[static_cast<size_t>(o * n + p)];
    b.grad.data[static_cast<size_t>(o)] += s;
  }

  const Eigen::MatrixXd gcols =
      matView(w.value, out_ch, in_ch * kk).transpose() * gym;  // (in_ch*kk, n)
  Tensor gx = Tensor::zeros({in_ch, in_h_, in_w_});
  for (int oi = 0; oi < out_h_; ++oi)
    for (int oj = 0; oj < out_w_; ++oj) {
      const int col = oi * out_w_ + oj;
      for (int c = 0; c < in_ch; ++c)
        for (int ki = 0; ki < ksize; ++ki)
          for (int kj = 0; kj < ksize; ++kj) {
            const int ii = oi * stride + ki - pad;
            const int jj = oj * stride + kj - pad;
            if (ii < 0 || ii >= in_h_ || jj < 0 || jj >= in_w_) continue;
            gx.data[static_cast<size_t>((c * in_h_ + ii) * in_w_ + jj)] +=
                gcols(c * kk + ki * ksize + kj, col);
          }
    }
  cols_.resize(0, 0);
  return gx;
}

void Conv2d::collectParams(std::vector<Param*>& out) {
  out.push_back(&w);
  out.push_back(&b);
}

GroupNorm::GroupNorm(const std::string& name, int ch_a, int groups_a) : ch(ch_a), groups(groups_a) {
  DD_CHECK_ARG(ch > 0 && groups > 0 && ch % groups == 0,
               "channels " << ch << " not divisible by " << groups << " groups (" << name << ")");
  gamma = Param(name + ".gamma", Tensor::full({ch}, 1.0));
  beta = Param(name + ".beta", Tensor::zeros({ch}));
}

Tensor GroupNorm::forward(const Tensor& x) {
  DD_CHECK_ARG(x.rank() == 3 && x.dim(0) == ch, "groupnorm shape mismatch " << x.shapeStr());
  const int hw = x.dim(1) * x.dim(2);
  const int cpg = ch / groups;
  const int m = cpg * hw;

  x_hat_ = Tensor::zeros(x.shape);
  inv_std_.assign(static_cast<size_t>(groups), 0.0);
  Tensor y = Tensor::zeros(x.shape);

  for (int g = 0; g < groups; ++g) {
    const size_t base = static_cast<size_t>(g * cpg * hw);
    double mean = 0.0;
    for (int i = 0; i < m; ++i) mean += x.data[base + static_cast<size_t>(i)];
    mean /= m;
    double var = 0.0;
    for (int i = 0; i < m; ++i) {
      const double d = x.data[base + static_cast<size_t>(i)] - mean;
      var += d * d;
    }
    var /= m;
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std_[static_cast<size_t>(g)] = inv;
    for (int c = g * cpg; c < (g + 1) * cpg; ++c) {
      const double ga = gamma.value.data[static_cast<size_t>(c)];
      const double be = beta.value.data[static_cast<size_t>(c)];
      for (int p = 0; p < hw; ++p) {
        const size_t idx = static_cast<size_t>(c * hw + p);
        const double xh = (x.data[idx] - mean) * inv;
        x_hat_.data[idx] = xh;
        y.data[idx] = ga * xh + be;
      }
    }
  }
  return y;
}

Tensor GroupNorm::backward(const Tensor& gy) {
  const int hw = gy.dim(1) * gy.dim(2);
  const int cpg = ch / groups;
  const int m = cpg * hw;
  Tensor gx = Tensor::zeros(gy.shape);

  for (int c = 0; c < ch; ++c) {
    double gg = 0.0, gb = 0.0;
    for (int p = 0; p < hw; ++p) {
      const size_t idx = static_cast<size_t>(c * hw + p);
      gg += gy.data[idx] * x_hat_.data[idx];
      gb += gy.data[idx];
    }
    gamma.grad.data[static_cast<size_t>(c)] += gg;
    beta.grad.data[static_cast<size_t>(c)] += gb;
  }

  for (int g = 0; g < groups; ++g) {
    double s1 = 0.0, s2 = 0.0;
    for (int c = g * cpg; c < (g + 1) * cpg; ++c) {
      const double ga = gamma.value.data[static_cast<size_t>(c)];
      for (int p = 0; p < hw; ++p) {
        const size_t idx = static_cast<size_t>(c * hw + p);
        const double t = gy.data[idx] * ga;
        s1 += t;
        s2 += t * x_hat_.data[idx];
      }
    }
    const double inv = inv_std_[static_cast<size_t>(g)];
    for (int c = g * cpg; c < (g + 1) * cpg; ++c) {
      const double ga = gamma.value.data[static_cast<size_t>(c)];
      for (int p = 0; p < hw; ++p) {
        const size_t idx = static_cast<size_t>(c * hw + p);
        const double t = gy.data[idx] * ga;
        gx.data[idx] = inv * (t - s1 / m - x_hat_.data[idx] * s2 / m);
      }
    }
  }
  x_hat_ = Tensor();
  return gx;
}

void GroupNorm::collectParams(std::vector<Param*>& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
}

Tensor SiLU::forward(const Tensor& x) {
  x_ = x;
  Tensor y = x;
  for (double& v : y.data) v = v / (1.0 + std::exp(-v));
  return y;
}

Tensor SiLU::backward(const Tensor& gy) {
  Tensor gx = gy;
  for (size_t i = 0; i < gx.data.size(); ++i) {
    const double s = 1.0 / (1.0 + std::exp(-x_.data[i]));
    gx.data[i] *= s * (1.0 + x_.data[i] * (1.0 - s));
  }
  x_ = Tensor();
  return gx;
}

Linear::Linear(const std::string& name, int in_dim_a, int out_dim_a, Rng& rng, bool zero_init)
    : in_dim(in_dim_a), out_dim(out_dim_a) {
  DD_CHECK_ARG(in_dim > 0 && out_dim > 0, "bad linear config " << name);
  w = Param(name + ".w", initWeight({out_dim, in_dim}, in_dim, rng, zero_init));
  b = Param(name + ".b", Tensor::zeros({out_dim}));
}

Tensor Linear::forward(const Tensor& x) {
  was_1d_ = x.rank() == 1;
  DD_CHECK_ARG((was_1d_ && x.dim(0) == in_dim) || (x.rank() == 2 && x.dim(1) == in_dim),
               "linear " << w.name << " expects width " << in_dim << ", got " << x.shapeStr());
  rows_ = was_1d_ ? 1 : x.dim(0);
  x_ = x;

  Tensor y = was_1d_ ? Tensor::zeros({out_dim}) : Tensor::zeros({rows_, out_dim});
  matView(y, rows_, out_dim) =
      matView(x, rows_, in_dim) * matView(w.value, out_dim, in_dim).transpose();
  for (int r = 0; r < rows_; ++r)
    for (int c = 0; c < out_dim; ++c)
      y.data[static_cast<size_t>(r * out_dim + c)] += b.value.data[static_cast<size_t>(c)];
  return y;
}

Tensor Linear::backward(const Tensor& gy) {
  DD_CHECK_ARG(static_cast<int>(gy.numel()) == rows_ * out_dim, "linear backward shape mismatch");
  auto gym = matView(gy, rows_, out_dim);
  matView(w.grad, out_dim, in_dim) += gym.transpose() * matView(x_, rows_, in_dim);
  for (int r = 0; r < rows_; ++r)
    for (int c = 0; c < out_dim; ++c)
      b.grad.data[static_cast<size_t>(c)] += gy.data[static_cast<size_t>(r * out_dim + c)];

  Tensor gx = was_1d_ ? Tensor::zeros({in_dim}) : Tensor::zeros({rows_, in_dim});
  matView(gx, rows_, in_dim) = gym * matView(w.value, out_dim, in_dim);
  x_ = Tensor();
  return gx;
}

void Linear::collectParams(std::vector<Param*>& out) {
  out.push_back(&w);
  out.push_back(&b);
}

TimeEmbed::TimeEmbed(const std::string& name, int sin_dim_a, int dim_a, Rng& rng)
    : sin_dim(sin_dim_a), dim(dim_a) {
  l1 = Linear(name + ".l1", sin_dim, dim, rng);
  l2 = Linear(name + ".l2", dim, dim, rng);
}

Tensor TimeEmbed::forward(int orig_step) {
  return l2.forward(act.forward(l1.forward(sinusoidalEmbed(orig_step, sin_dim))));
}

void TimeEmbed::backward(const Tensor& gy) { l1.backward(act.backward(l2.backward(gy))); }

void TimeEmbed::collectParams(std::vector<Param*>& out) {
  l1.collectParams(out);
  l2.collectParams(out);
}

Tensor sinusoidalEmbed(int step, int dim) {
  DD_CHECK_ARG(dim >= 2 && dim % 2 == 0, "sinusoidal dim must be even, got " << dim);
  const int half = dim / 2;
  Tensor e = Tensor::zeros({dim});
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / half);
    e.data[static_cast<size_t>(i)] = std::sin(step * freq);
    e.data[static_cast<size_t>(half + i)] = std::cos(step * freq);
  }
  return e;
}

Tensor upsample2x(const Tensor& x) {
  DD_CHECK_ARG(x.rank() == 3, "upsample expects (C,H,W)");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor y = Tensor::zeros({c, 2 * h, 2 * w});
  for (int ci = 0; ci < c; ++ci)
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        const double v = x.at(ci, i, j);
        y.at(ci, 2 * i, 2 * j) = v;
        y.at(ci, 2 * i, 2 * j + 1) = v;
        y.at(ci, 2 * i + 1, 2 * j) = v;
        y.at(ci, 2 * i + 1, 2 * j + 1) = v;
      }
  return y;
}

Tensor downsum2x(const Tensor& gy) {
  DD_CHECK_ARG(gy.rank() == 3 && gy.dim(1) % 2 == 0 && gy.dim(2) % 2 == 0,
               "downsum expects even (C,H,W)");
  const int c = gy.dim(0), h = gy.dim(1) / 2, w = gy.dim(2) / 2;
  Tensor gx = Tensor::zeros({c, h, w});
  for (int ci = 0; ci < c; ++ci)
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j)
        gx.at(ci, i, j) = gy.at(ci, 2 * i, 2 * j) + gy.at(ci, 2 * i, 2 * j + 1) +
                          gy.at(ci, 2 * i + 1, 2 * j) + gy.at(ci, 2 * i + 1, 2 * j + 1);
  return gx;
}

Tensor concatChannels(const Tensor& a, const Tensor& b) {
  DD_CHECK_ARG(a.rank() == 3 && b.rank() == 3 && a.dim(1) == b.dim(1) && a.dim(2) == b.dim(2),
               "concat shape mismatch " << a.shapeStr() << " vs " << b.shapeStr());
  Tensor y = Tensor::zeros({a.dim(0) + b.dim(0), a.dim(1), a.dim(2)});
  std::copy(a.data.begin(), a.data.end(), y.data.begin());
  std::copy(b.data.begin(), b.data.end(), y.data.begin() + a.numel());
  return y;
}

void splitChannels(const Tensor& g, int ch_a, Tensor& ga, Tensor& gb) {
  DD_CHECK_ARG(g.rank() == 3 && ch_a >= 0 && ch_a <= g.dim(0), "bad channel split");
  ga = Tensor::zeros({ch_a, g.dim(1), g.dim(2)});
  gb = Tensor::zeros({g.dim(0) - ch_a, g.dim(1), g.dim(2)});
  std::copy(g.data.begin(), g.data.begin() + ga.numel(), ga.data.begin());
  std::copy(g.data.begin() + ga.numel(), g.data.end(), gb.data.begin());
}

}  // namespace defdiff::nn
