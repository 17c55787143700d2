#include "defdiff/nn/attention.h"

#include <cmath>
#include <limits>

#include "defdiff/check.h"

namespace defdiff::nn {

namespace {

// (C, H, W) -> (H*W, C) and back; attention treats pixels as tokens.
Tensor toRows(const Tensor& x) {
  const int c = x.dim(0), hw = x.dim(1) * x.dim(2);
  Tensor m = Tensor::zeros({hw, c});
  for (int ci = 0; ci < c; ++ci)
    for (int p = 0; p < hw; ++p)
      m.data[static_cast<size_t>(p * c + ci)] = x.data[static_cast<size_t>(ci * hw + p)];
  return m;
}

Tensor toMap(const Tensor& m, int c, int h, int w) {
  Tensor x = Tensor::zeros({c, h, w});
  const int hw = h * w;
  for (int ci = 0; ci < c; ++ci)
    for (int p = 0; p < hw; ++p)
      x.data[static_cast<size_t>(ci * hw + p)] = m.data[static_cast<size_t>(p * c + ci)];
  return x;
}

Tensor matmul(const Tensor& a, bool ta, const Tensor& b, bool tb, double scale = 1.0) {
  const int ar = a.dim(0), ac = a.dim(1), br = b.dim(0), bc = b.dim(1);
  const int m = ta ? ac : ar, k = ta ? ar : ac, n = tb ? br : bc;
  DD_CHECK_ARG((tb ? bc : br) == k, "matmul inner dim mismatch");
  Tensor y = Tensor::zeros({m, n});
  auto am = matView(a, ar, ac);
  auto bm = matView(b, br, bc);
  auto ym = matView(y, m, n);
  if (!ta && !tb) ym = am * bm;
  else if (!ta && tb) ym = am * bm.transpose();
  else if (ta && !tb) ym = am.transpose() * bm;
  else ym = am.transpose() * bm.transpose();
  if (scale != 1.0) ym *= scale;
  return y;
}

}  // namespace

Tensor softmaxRows(const Tensor& scores) {
  DD_CHECK_ARG(scores.rank() == 2, "softmax expects a matrix");
  const int r = scores.dim(0), c = scores.dim(1);
  Tensor s = Tensor::zeros(scores.shape);
  for (int i = 0; i < r; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < c; ++j) mx = std::max(mx, scores.at(i, j));
    double z = 0.0;
    for (int j = 0; j < c; ++j) {
      const double e = std::exp(scores.at(i, j) - mx);
      s.at(i, j) = e;
      z += e;
    }
    for (int j = 0; j < c; ++j) s.at(i, j) /= z;
  }
  return s;
}

Tensor softmaxRowsBackward(const Tensor& softmax_out, const Tensor& gy) {
  DD_CHECK_ARG(softmax_out.sameShape(gy), "softmax backward shape mismatch");
  const int r = gy.dim(0), c = gy.dim(1);
  Tensor gx = Tensor::zeros(gy.shape);
  for (int i = 0; i < r; ++i) {
    double dot = 0.0;
    for (int j = 0; j < c; ++j) dot += softmax_out.at(i, j) * gy.at(i, j);
    for (int j = 0; j < c; ++j) gx.at(i, j) = softmax_out.at(i, j) * (gy.at(i, j) - dot);
  }
  return gx;
}

AttnBlock::AttnBlock(const std::string& name, int ch_a, int token_dim_a, bool has_cross_a,
                     Rng& rng, int groups)
    : ch(ch_a), token_dim(token_dim_a), has_cross(has_cross_a) {
  gn = GroupNorm(name + ".gn", ch, groups);
  q_lin = Linear(name + ".q", ch, ch, rng);
  k_lin = Linear(name + ".k", ch, ch, rng);
  v_lin = Linear(name + ".v", ch, ch, rng);
  out_proj = Linear(name + ".out", ch, ch, rng, /*zero_init=*/true);
  if (has_cross) {
    cross_k = Linear(name + ".cross_k", token_dim, ch, rng);
    cross_v = Linear(name + ".cross_v", token_dim, ch, rng, /*zero_init=*/true);
  }
}

Tensor AttnBlock::forward(const Tensor& x, const Tensor* tokens) {
  DD_CHECK_ARG(x.rank() == 3 && x.dim(0) == ch, "attention shape mismatch " << x.shapeStr());
  h_ = x.dim(1);
  w_ = x.dim(2);
  const double scale = 1.0 / std::sqrt(static_cast<double>(ch));

  const Tensor hmat = toRows(gn.forward(x));
  q_ = q_lin.forward(hmat);
  k_ = k_lin.forward(hmat);
  v_ = v_lin.forward(hmat);

  attn_ = softmaxRows(matmul(q_, false, k_, true, scale));
  Tensor y_mat = out_proj.forward(matmul(attn_, false, v_, false));

  ran_cross_ = has_cross && tokens != nullptr;
  if (ran_cross_) {
    DD_CHECK_ARG(tokens->rank() == 2 && tokens->dim(1) == token_dim,
                 "token shape mismatch " << tokens->shapeStr());
    tokens_ = *tokens;
    kx_ = cross_k.forward(tokens_);
    vx_ = cross_v.forward(tokens_);
    attn_x_ = softmaxRows(matmul(q_, false, kx_, true, scale));
    const Tensor cross = matmul(attn_x_, false, vx_, false);
    matView(y_mat, h_ * w_, ch) += matView(cross, h_ * w_, ch);
  }

  Tensor y = x;
  const Tensor add = toMap(y_mat, ch, h_, w_);
  for (size_t i = 0; i < y.data.size(); ++i) y.data[i] += add.data[i];
  return y;
}

Tensor AttnBlock::backward(const Tensor& gy, Tensor* gtokens) {
  const int t = h_ * w_;
  const double scale = 1.0 / std::sqrt(static_cast<double>(ch));
  const Tensor gym = toRows(gy);

  Tensor gq = Tensor::zeros({t, ch});
  if (ran_cross_) {
    const Tensor gattn_x = matmul(gym, false, vx_, true);
    const Tensor gvx = matmul(attn_x_, true, gym, false);
    const Tensor gscores_x = softmaxRowsBackward(attn_x_, gattn_x);
    matView(gq, t, ch) += matView(matmul(gscores_x, false, kx_, false, scale), t, ch);
    const Tensor gkx = matmul(gscores_x, true, q_, false, scale);
    const Tensor gtok_k = cross_k.backward(gkx);
    const Tensor gtok_v = cross_v.backward(gvx);
    if (gtokens != nullptr) {
      DD_CHECK_ARG(gtokens->sameShape(gtok_k), "token gradient shape mismatch");
      for (size_t i = 0; i < gtokens->data.size(); ++i)
        gtokens->data[i] += gtok_k.data[i] + gtok_v.data[i];
    }
  }

  const Tensor gself = out_proj.backward(gym);
  const Tensor gattn = matmul(gself, false, v_, true);
  Tensor gv = matmul(attn_, true, gself, false);
  const Tensor gscores = softmaxRowsBackward(attn_, gattn);
  matView(gq, t, ch) += matView(matmul(gscores, false, k_, false, scale), t, ch);
  const Tensor gk = matmul(gscores, true, q_, false, scale);

  Tensor ghmat = q_lin.backward(gq);
  {
    const Tensor gh_k = k_lin.backward(gk);
    const Tensor gh_v = v_lin.backward(gv);
    for (size_t i = 0; i < ghmat.data.size(); ++i)
      ghmat.data[i] += gh_k.data[i] + gh_v.data[i];
  }

  Tensor gx = gn.backward(toMap(ghmat, ch, h_, w_));
  for (size_t i = 0; i < gx.data.size(); ++i) gx.data[i] += gy.data[i];

  q_ = k_ = v_ = attn_ = kx_ = vx_ = attn_x_ = tokens_ = Tensor();
  return gx;
}

void AttnBlock::collectParams(std::vector<Param*>& out) {
  gn.collectParams(out);
  q_lin.collectParams(out);
  k_lin.collectParams(out);
  v_lin.collectParams(out);
  out_proj.collectParams(out);
  if (has_cross) {
    cross_k.collectParams(out);
    cross_v.collectParams(out);
  }
}

}  // namespace defdiff::nn
