#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "defdiff/nn/attention.h"
#include "defdiff/nn/layers.h"

namespace defdiff::nn {

// Residual block with timestep injection:
//   h = conv1(silu(gn1(x))); h += proj(silu(temb)); h = conv2(silu(gn2(h)));
//   y = h + skip(x)
// conv2 starts at zero. The shared timestep embedding accumulates gradients
// from every block, so backward adds into gtemb.
struct ResBlock {
  int in_ch = 0, out_ch = 0;
  GroupNorm gn1, gn2;
  SiLU a1, a2, at;
  Conv2d conv1, conv2;
  Linear temb_proj;
  Conv2d skip;
  bool has_skip = false;

  ResBlock() = default;
  ResBlock(const std::string& name, int in_ch, int out_ch, int temb_dim, Rng& rng, int groups = 8);
  Tensor forward(const Tensor& x, const Tensor& temb);
  Tensor backward(const Tensor& gy, Tensor& gtemb);
  void collectParams(std::vector<Param*>& out);

 private:
  Tensor x_, temb_;
  int h_ = 0, w_ = 0;
};

struct UNetConfig {
  int in_ch = 3;
  int out_ch = 3;
  int base = 32;
  std::vector<int> mults{1, 2, 4};
  std::vector<int> attn_levels{1, 2};
  int token_dim = 64;
  int groups = 8;

  int levels() const { return static_cast<int>(mults.size()); }
  int numSkips() const { return 2 * levels(); }
  bool attnAt(int level) const;
  std::vector<int> skipChannels() const;  // channel count per pushed skip
};

// Encoder shared by the U-Net and the control branch: conv_in, then per level
// one res block (attention on configured levels) and a stride-2 conv between
// levels. Pushes numSkips() feature maps.
struct Encoder {
  UNetConfig cfg;
  Conv2d conv_in;
  std::vector<ResBlock> res;
  std::vector<std::unique_ptr<AttnBlock>> attn;  // per level, null when absent
  std::vector<Conv2d> downs;

  Encoder() = default;
  Encoder(const std::string& name, const UNetConfig& cfg, bool cross_attention, Rng& rng);
  // hint, when given, is added to the conv_in output (control branch entry).
  std::vector<Tensor> forward(const Tensor& x, const Tensor& temb, const Tensor* tokens,
                              const Tensor* hint = nullptr);
  // gskips holds one gradient per pushed map (accumulated by the caller);
  // returns the input gradient and fills ghint when requested.
  Tensor backward(const std::vector<Tensor>& gskips, Tensor& gtemb, Tensor* gtokens,
                  Tensor* ghint = nullptr);
  void collectParams(std::vector<Param*>& out);
};

// The denoiser. Skip connections optionally receive additive control
// residuals; the middle block always sees the unmodified encoder output
// (residuals exist per skip connection only).
struct UNet {
  UNetConfig cfg;
  TimeEmbed time_embed;
  Encoder enc;
  ResBlock mid1, mid2;
  std::unique_ptr<AttnBlock> mid_attn;
  std::vector<ResBlock> dec_res;                      // 2 per level, coarse to fine
  std::vector<std::unique_ptr<AttnBlock>> dec_attn;   // parallel to dec_res
  std::vector<Conv2d> ups;                            // conv after nearest 2x
  GroupNorm gn_out;
  SiLU act_out;
  Conv2d conv_out;

  UNet() = default;
  UNet(const std::string& name, const UNetConfig& cfg, Rng& rng);
  Tensor forward(const Tensor& x, int orig_step, const Tensor* tokens,
                 const std::vector<Tensor>* residuals);
  // Returns the input gradient; fills gtokens (pre-zeroed by the caller) and
  // gresiduals when requested.
  Tensor backward(const Tensor& gy, Tensor* gtokens, std::vector<Tensor>* gresiduals);
  void collectParams(std::vector<Param*>& out);

 private:
  std::vector<Tensor> skip_grads_;
  bool used_residuals_ = false;
};

// ControlNet-style branch: a copy of the encoder consuming the noisy image
// plus a hint convolution of the control signal, emitting one zero-projected
// residual per skip connection.
struct ControlBranch {
  UNetConfig cfg;
  int control_ch = 0;
  TimeEmbed time_embed;
  Conv2d hint_conv;
  Encoder enc;
  std::vector<Conv2d> zero_convs;

  ControlBranch() = default;
  ControlBranch(const std::string& name, const UNetConfig& cfg, int control_ch, Rng& rng);
  std::vector<Tensor> forward(const Tensor& x, int orig_step, const Tensor& control);
  // Returns the gradient w.r.t. the control signal (feeds the feature atlas).
  Tensor backward(const std::vector<Tensor>& gresiduals);
  void collectParams(std::vector<Param*>& out);
};

// Affine map from the expression code to a fixed number of tokens.
struct ExpEncoder {
  int exp_dim = 0, num_tokens = 0, token_dim = 0;
  Linear lin;

  ExpEncoder() = default;
  ExpEncoder(const std::string& name, int exp_dim, int num_tokens, int token_dim, Rng& rng);
  Tensor forward(const std::vector<double>& z_exp);
  void backward(const Tensor& gtokens);
  void collectParams(std::vector<Param*>& out);
};

enum class CondMode { kPrior, kScratch };

struct RendererConfig {
  int img_ch = 3;
  int control_ch = 73;
  int base = 32;
  std::vector<int> mults{1, 2, 4};
  std::vector<int> attn_levels{1, 2};
  int token_dim = 64;
  int num_tokens = 4;
  int exp_dim = 8;
  int groups = 8;
  CondMode mode = CondMode::kPrior;
  bool use_exp = true;  // false: no expression conditioning (ablation)
};

// Full conditional denoiser: base U-Net plus, in prior mode, a control branch
// injecting skip residuals; in scratch mode the control signal is channel-
// concatenated to the noisy image instead.
struct RendererModel {
  RendererConfig cfg;
  UNet unet;
  std::unique_ptr<ControlBranch> control;
  ExpEncoder exp_enc;

  RendererModel(const RendererConfig& cfg, Rng& rng);

  // Unconditional base pass (pretraining / no-op probes).
  Tensor denoiseBase(const Tensor& x_tau, int orig_step);
  void backwardBase(const Tensor& gv);

  // Conditional pass. control_signal is (C, H, W).
  Tensor denoise(const Tensor& x_tau, int orig_step, const Tensor& control_signal,
                 const std::vector<double>& z_exp);
  // Returns the gradient w.r.t. the control signal.
  Tensor backward(const Tensor& gv);

  std::vector<Param*> allParams();
  // Base parameters exclude expression cross-attention projections, which
  // belong to the attachment set together with the control branch and the
  // expression encoder.
  std::vector<Param*> baseParams();
  std::vector<Param*> attachParams();
  void zeroGrads();

  std::string architectureSummary();
  int attnBlockCount() const;
  int crossLayerCount() const;

 private:
  bool last_was_conditional_ = false;
  int last_step_ = 0;
  Tensor last_x_;  // scratch-mode cache for the backward channel split
};

bool isExpressionParam(const std::string& name);

}  // namespace defdiff::nn
