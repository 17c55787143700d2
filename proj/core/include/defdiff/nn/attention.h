#pragma once

#include "defdiff/nn/layers.h"

namespace defdiff::nn {

// Single-head self-attention over spatial positions with an optional added
// expression cross-attention sharing the same queries:
//   y = x + out_proj(softmax(q k^T / sqrt(C)) v)
//         + softmax(q k_exp^T / sqrt(C)) v_exp
// where (k_exp, v_exp) project the expression tokens. out_proj and the token
// value projection start at zero so an attached block is a no-op.
struct AttnBlock {
  int ch = 0, token_dim = 0;
  bool has_cross = false;
  GroupNorm gn;
  Linear q_lin, k_lin, v_lin, out_proj;
  Linear cross_k, cross_v;

  AttnBlock() = default;
  AttnBlock(const std::string& name, int ch, int token_dim, bool has_cross, Rng& rng,
            int groups = 8);

  // tokens: (num_tokens, token_dim) or null to skip the cross path.
  Tensor forward(const Tensor& x, const Tensor* tokens);
  // gtokens accumulates the token gradient when the cross path ran.
  Tensor backward(const Tensor& gy, Tensor* gtokens);
  void collectParams(std::vector<Param*>& out);

 private:
  int h_ = 0, w_ = 0;
  Tensor q_, k_, v_, attn_;          // self path caches
  Tensor kx_, vx_, attn_x_, tokens_; // cross path caches
  bool ran_cross_ = false;
};

// Rowwise softmax of a (rows, cols) score tensor; backward takes the forward
// output instead of the input.
Tensor softmaxRows(const Tensor& scores);
Tensor softmaxRowsBackward(const Tensor& softmax_out, const Tensor& gy);

}  // namespace defdiff::nn
