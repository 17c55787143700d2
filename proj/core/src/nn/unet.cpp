#include "defdiff/nn/unet.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "defdiff/check.h"

namespace defdiff::nn {

namespace {

void addInPlace(Tensor& a, const Tensor& b) {
  DD_CHECK(a.sameShape(b), "add shape mismatch " << a.shapeStr() << " vs " << b.shapeStr());
  for (size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
}

}  // namespace

ResBlock::ResBlock(const std::string& name, int in_ch_a, int out_ch_a, int temb_dim, Rng& rng,
                   int groups)
    : in_ch(in_ch_a), out_ch(out_ch_a) {
  gn1 = GroupNorm(name + ".gn1", in_ch, groups);
  conv1 = Conv2d(name + ".conv1", in_ch, out_ch, 3, 1, rng);
  temb_proj = Linear(name + ".temb_proj", temb_dim, out_ch, rng);
  gn2 = GroupNorm(name + ".gn2", out_ch, groups);
  conv2 = Conv2d(name + ".conv2", out_ch, out_ch, 3, 1, rng, /*zero_init=*/true);
  has_skip = in_ch != out_ch;
  if (has_skip) skip = Conv2d(name + ".skip", in_ch, out_ch, 1, 1, rng);
}

Tensor ResBlock::forward(const Tensor& x, const Tensor& temb) {
  x_ = x;
  temb_ = temb;
  h_ = x.dim(1);
  w_ = x.dim(2);
  Tensor h = conv1.forward(a1.forward(gn1.forward(x)));
  const Tensor tp = temb_proj.forward(at.forward(temb));
  const int hw = h_ * w_;
  for (int c = 0; c < out_ch; ++c) {
    const double add = tp.data[static_cast<size_t>(c)];
    for (int p = 0; p < hw; ++p) h.data[static_cast<size_t>(c * hw + p)] += add;
  }
  h = conv2.forward(a2.forward(gn2.forward(h)));
  if (has_skip) {
    addInPlace(h, skip.forward(x));
  } else {
    addInPlace(h, x);
  }
  return h;
}

Tensor ResBlock::backward(const Tensor& gy, Tensor& gtemb) {
  Tensor gh = gn2.backward(a2.backward(conv2.backward(gy)));

  Tensor gtp = Tensor::zeros({out_ch});
  const int hw = h_ * w_;
  for (int c = 0; c < out_ch; ++c) {
    double s = 0.0;
    for (int p = 0; p < hw; ++p) s += gh.data[static_cast<size_t>(c * hw + p)];
    gtp.data[static_cast<size_t>(c)] = s;
  }
  addInPlace(gtemb, at.backward(temb_proj.backward(gtp)));

  Tensor gx = gn1.backward(a1.backward(conv1.backward(gh)));
  if (has_skip) {
    addInPlace(gx, skip.backward(gy));
  } else {
    addInPlace(gx, gy);
  }
  x_ = temb_ = Tensor();
  return gx;
}

void ResBlock::collectParams(std::vector<Param*>& out) {
  gn1.collectParams(out);
  conv1.collectParams(out);
  temb_proj.collectParams(out);
  gn2.collectParams(out);
  conv2.collectParams(out);
  if (has_skip) skip.collectParams(out);
}

bool UNetConfig::attnAt(int level) const {
  return std::find(attn_levels.begin(), attn_levels.end(), level) != attn_levels.end();
}

std::vector<int> UNetConfig::skipChannels() const {
  std::vector<int> out{base};
  for (int l = 0; l < levels(); ++l) {
    out.push_back(base * mults[static_cast<size_t>(l)]);
    if (l < levels() - 1) out.push_back(base * mults[static_cast<size_t>(l)]);
  }
  return out;
}

Encoder::Encoder(const std::string& name, const UNetConfig& cfg_a, bool cross_attention, Rng& rng)
    : cfg(cfg_a) {
  const int L = cfg.levels();
  DD_CHECK_ARG(L >= 2, "need at least two levels");
  DD_CHECK_ARG(cfg.base % cfg.groups == 0, "base channels must be divisible by groups");
  const int temb_dim = 4 * cfg.base;
  conv_in = Conv2d(name + ".conv_in", cfg.in_ch, cfg.base, 3, 1, rng);
  res.reserve(static_cast<size_t>(L));
  attn.resize(static_cast<size_t>(L));
  downs.reserve(static_cast<size_t>(L - 1));
  int ch = cfg.base;
  for (int l = 0; l < L; ++l) {
    const int ch_l = cfg.base * cfg.mults[static_cast<size_t>(l)];
    res.emplace_back(name + ".res" + std::to_string(l), ch, ch_l, temb_dim, rng, cfg.groups);
    if (cfg.attnAt(l))
      attn[static_cast<size_t>(l)] = std::make_unique<AttnBlock>(
          name + ".attn" + std::to_string(l), ch_l, cfg.token_dim, cross_attention, rng,
          cfg.groups);
    if (l < L - 1)
      downs.emplace_back(name + ".down" + std::to_string(l), ch_l, ch_l, 3, 2, rng);
    ch = ch_l;
  }
}

std::vector<Tensor> Encoder::forward(const Tensor& x, const Tensor& temb, const Tensor* tokens,
                                     const Tensor* hint) {
  std::vector<Tensor> skips;
  skips.reserve(static_cast<size_t>(cfg.numSkips()));
  Tensor h = conv_in.forward(x);
  if (hint != nullptr) addInPlace(h, *hint);
  skips.push_back(h);
  for (int l = 0; l < cfg.levels(); ++l) {
    h = res[static_cast<size_t>(l)].forward(h, temb);
    if (attn[static_cast<size_t>(l)]) h = attn[static_cast<size_t>(l)]->forward(h, tokens);
    skips.push_back(h);
    if (l < cfg.levels() - 1) {
      h = downs[static_cast<size_t>(l)].forward(h);
      skips.push_back(h);
    }
  }
  return skips;
}

Tensor Encoder::backward(const std::vector<Tensor>& gskips, Tensor& gtemb, Tensor* gtokens,
                         Tensor* ghint) {
  const int L = cfg.levels();
  DD_CHECK_ARG(static_cast<int>(gskips.size()) == cfg.numSkips(), "skip gradient count mismatch");
  Tensor g = gskips[static_cast<size_t>(2 * L - 1)];
  for (int l = L - 1; l >= 0; --l) {
    if (attn[static_cast<size_t>(l)]) g = attn[static_cast<size_t>(l)]->backward(g, gtokens);
    g = res[static_cast<size_t>(l)].backward(g, gtemb);
    if (l > 0) {
      addInPlace(g, gskips[static_cast<size_t>(2 * l)]);
      g = downs[static_cast<size_t>(l - 1)].backward(g);
      addInPlace(g, gskips[static_cast<size_t>(2 * l - 1)]);
    } else {
      addInPlace(g, gskips[0]);
    }
  }
  if (ghint != nullptr) *ghint = g;
  return conv_in.backward(g);
}

void Encoder::collectParams(std::vector<Param*>& out) {
  conv_in.collectParams(out);
  for (int l = 0; l < cfg.levels(); ++l) {
    res[static_cast<size_t>(l)].collectParams(out);
    if (attn[static_cast<size_t>(l)]) attn[static_cast<size_t>(l)]->collectParams(out);
    if (l < cfg.levels() - 1) downs[static_cast<size_t>(l)].collectParams(out);
  }
}

UNet::UNet(const std::string& name, const UNetConfig& cfg_a, Rng& rng) : cfg(cfg_a) {
  const int L = cfg.levels();
  const int temb_dim = 4 * cfg.base;
  time_embed = TimeEmbed(name + ".temb", cfg.base, temb_dim, rng);
  enc = Encoder(name + ".enc", cfg, /*cross_attention=*/true, rng);

  const int ch_top = cfg.base * cfg.mults.back();
  mid1 = ResBlock(name + ".mid1", ch_top, ch_top, temb_dim, rng, cfg.groups);
  mid_attn = std::make_unique<AttnBlock>(name + ".mid_attn", ch_top, cfg.token_dim, true, rng,
                                         cfg.groups);
  mid2 = ResBlock(name + ".mid2", ch_top, ch_top, temb_dim, rng, cfg.groups);

  const std::vector<int> skip_ch = cfg.skipChannels();
  dec_res.reserve(static_cast<size_t>(2 * L));
  dec_attn.resize(static_cast<size_t>(2 * L));
  ups.resize(static_cast<size_t>(L - 1));
  int stream = ch_top;
  int si = 2 * L - 1;
  int di = 0;
  for (int l = L - 1; l >= 0; --l) {
    const int ch_l = cfg.base * cfg.mults[static_cast<size_t>(l)];
    for (int rep = 0; rep < 2; ++rep) {
      const int in = (rep == 0 ? stream : ch_l) + skip_ch[static_cast<size_t>(si--)];
      dec_res.emplace_back(name + ".dec" + std::to_string(di), in, ch_l, temb_dim, rng,
                           cfg.groups);
      if (cfg.attnAt(l))
        dec_attn[static_cast<size_t>(di)] = std::make_unique<AttnBlock>(
            name + ".dec_attn" + std::to_string(di), ch_l, cfg.token_dim, true, rng, cfg.groups);
      ++di;
    }
    stream = ch_l;
    if (l > 0)
      ups[static_cast<size_t>(l - 1)] =
          Conv2d(name + ".up" + std::to_string(l - 1), ch_l, ch_l, 3, 1, rng);
  }

  gn_out = GroupNorm(name + ".gn_out", cfg.base * cfg.mults[0], cfg.groups);
  conv_out = Conv2d(name + ".conv_out", cfg.base * cfg.mults[0], cfg.out_ch, 3, 1, rng,
                    /*zero_init=*/true);
}

Tensor UNet::forward(const Tensor& x, int orig_step, const Tensor* tokens,
                     const std::vector<Tensor>* residuals) {
  const int L = cfg.levels();
  const Tensor temb = time_embed.forward(orig_step);
  std::vector<Tensor> skips = enc.forward(x, temb, tokens);

  Tensor h = skips.back();
  h = mid1.forward(h, temb);
  h = mid_attn->forward(h, tokens);
  h = mid2.forward(h, temb);

  used_residuals_ = residuals != nullptr;
  if (used_residuals_) {
    DD_CHECK_ARG(static_cast<int>(residuals->size()) == cfg.numSkips(),
                 "expected " << cfg.numSkips() << " residuals, got " << residuals->size());
    for (size_t i = 0; i < skips.size(); ++i) addInPlace(skips[i], (*residuals)[i]);
  }

  int si = cfg.numSkips() - 1;
  int di = 0;
  for (int l = L - 1; l >= 0; --l) {
    for (int rep = 0; rep < 2; ++rep) {
      h = concatChannels(h, skips[static_cast<size_t>(si--)]);
      h = dec_res[static_cast<size_t>(di)].forward(h, temb);
      if (dec_attn[static_cast<size_t>(di)])
        h = dec_attn[static_cast<size_t>(di)]->forward(h, tokens);
      ++di;
    }
    if (l > 0) h = ups[static_cast<size_t>(l - 1)].forward(upsample2x(h));
  }
  return conv_out.forward(act_out.forward(gn_out.forward(h)));
}

Tensor UNet::backward(const Tensor& gy, Tensor* gtokens, std::vector<Tensor>* gresiduals) {
  const int L = cfg.levels();
  Tensor gtemb = Tensor::zeros({4 * cfg.base});
  Tensor g = gn_out.backward(act_out.backward(conv_out.backward(gy)));

  const std::vector<int> skip_ch = cfg.skipChannels();
  skip_grads_.assign(static_cast<size_t>(cfg.numSkips()), Tensor());

  int di = 2 * L - 1;
  int si = 0;
  for (int l = 0; l < L; ++l) {
    const int ch_l = cfg.base * cfg.mults[static_cast<size_t>(l)];
    for (int rep = 0; rep < 2; ++rep) {
      if (dec_attn[static_cast<size_t>(di)])
        g = dec_attn[static_cast<size_t>(di)]->backward(g, gtokens);
      g = dec_res[static_cast<size_t>(di)].backward(g, gtemb);
      // rep 0 here is the later forward block (B), whose stream input is ch_l;
      // the earlier block (A) took the previous level's stream.
      const int stream_ch = g.dim(0) - skip_ch[static_cast<size_t>(si)];
      Tensor gh, gskip;
      splitChannels(g, stream_ch, gh, gskip);
      skip_grads_[static_cast<size_t>(si++)] = std::move(gskip);
      g = std::move(gh);
      --di;
    }
    (void)ch_l;
    if (l < L - 1) g = downsum2x(ups[static_cast<size_t>(l)].backward(g));
  }

  if (gresiduals != nullptr) {
    DD_CHECK_ARG(used_residuals_, "residual gradients requested but none were used");
    *gresiduals = skip_grads_;
  }

  // The middle path consumed the unmodified encoder output, so its gradient
  // joins the last skip's after the residual gradients were captured.
  g = mid2.backward(g, gtemb);
  g = mid_attn->backward(g, gtokens);
  g = mid1.backward(g, gtemb);
  addInPlace(skip_grads_[static_cast<size_t>(cfg.numSkips() - 1)], g);

  Tensor gx = enc.backward(skip_grads_, gtemb, gtokens);
  time_embed.backward(gtemb);
  skip_grads_.clear();
  return gx;
}

void UNet::collectParams(std::vector<Param*>& out) {
  time_embed.collectParams(out);
  enc.collectParams(out);
  mid1.collectParams(out);
  mid_attn->collectParams(out);
  mid2.collectParams(out);
  for (size_t i = 0; i < dec_res.size(); ++i) {
    dec_res[i].collectParams(out);
    if (dec_attn[i]) dec_attn[i]->collectParams(out);
  }
  for (auto& u : ups) u.collectParams(out);
  gn_out.collectParams(out);
  conv_out.collectParams(out);
}

ControlBranch::ControlBranch(const std::string& name, const UNetConfig& cfg_a, int control_ch_a,
                             Rng& rng)
    : cfg(cfg_a), control_ch(control_ch_a) {
  DD_CHECK_ARG(control_ch > 0, "control branch needs control channels");
  time_embed = TimeEmbed(name + ".temb", cfg.base, 4 * cfg.base, rng);
  hint_conv = Conv2d(name + ".hint", control_ch, cfg.base, 3, 1, rng);
  enc = Encoder(name + ".enc", cfg, /*cross_attention=*/false, rng);
  const std::vector<int> skip_ch = cfg.skipChannels();
  zero_convs.reserve(skip_ch.size());
  for (size_t i = 0; i < skip_ch.size(); ++i)
    zero_convs.emplace_back(name + ".zero" + std::to_string(i), skip_ch[i], skip_ch[i], 1, 1, rng,
                            /*zero_init=*/true);
}

std::vector<Tensor> ControlBranch::forward(const Tensor& x, int orig_step, const Tensor& control) {
  DD_CHECK_ARG(control.rank() == 3 && control.dim(0) == control_ch &&
                   control.dim(1) == x.dim(1) && control.dim(2) == x.dim(2),
               "control signal shape mismatch " << control.shapeStr());
  const Tensor temb = time_embed.forward(orig_step);
  const Tensor hint = hint_conv.forward(control);
  const std::vector<Tensor> skips = enc.forward(x, temb, nullptr, &hint);
  std::vector<Tensor> residuals;
  residuals.reserve(skips.size());
  for (size_t i = 0; i < skips.size(); ++i)
    residuals.push_back(zero_convs[i].forward(skips[i]));
  return residuals;
}

Tensor ControlBranch::backward(const std::vector<Tensor>& gresiduals) {
  DD_CHECK_ARG(static_cast<int>(gresiduals.size()) == cfg.numSkips(),
               "residual gradient count mismatch");
  std::vector<Tensor> gskips;
  gskips.reserve(gresiduals.size());
  for (size_t i = 0; i < gresiduals.size(); ++i)
    gskips.push_back(zero_convs[i].backward(gresiduals[i]));

  Tensor gtemb = Tensor::zeros({4 * cfg.base});
  Tensor ghint;
  enc.backward(gskips, gtemb, nullptr, &ghint);  // x is data, its gradient is dropped
  time_embed.backward(gtemb);
  return hint_conv.backward(ghint);
}

void ControlBranch::collectParams(std::vector<Param*>& out) {
  time_embed.collectParams(out);
  hint_conv.collectParams(out);
  enc.collectParams(out);
  for (auto& z : zero_convs) z.collectParams(out);
}

ExpEncoder::ExpEncoder(const std::string& name, int exp_dim_a, int num_tokens_a, int token_dim_a,
                       Rng& rng)
    : exp_dim(exp_dim_a), num_tokens(num_tokens_a), token_dim(token_dim_a) {
  lin = Linear(name + ".lin", exp_dim, num_tokens * token_dim, rng);
}

Tensor ExpEncoder::forward(const std::vector<double>& z_exp) {
  DD_CHECK_ARG(static_cast<int>(z_exp.size()) == exp_dim,
               "expression code dim " << z_exp.size() << ", expected " << exp_dim);
  Tensor x = Tensor::zeros({exp_dim});
  std::copy(z_exp.begin(), z_exp.end(), x.data.begin());
  Tensor t = lin.forward(x);
  t.shape = {num_tokens, token_dim};
  return t;
}

void ExpEncoder::backward(const Tensor& gtokens) {
  Tensor g = gtokens;
  g.shape = {num_tokens * token_dim};
  lin.backward(g);
}

void ExpEncoder::collectParams(std::vector<Param*>& out) { lin.collectParams(out); }

bool isExpressionParam(const std::string& name) {
  return name.find(".cross_") != std::string::npos;
}

RendererModel::RendererModel(const RendererConfig& cfg_a, Rng& rng) : cfg(cfg_a) {
  UNetConfig uc;
  uc.in_ch = cfg.img_ch + (cfg.mode == CondMode::kScratch ? cfg.control_ch : 0);
  uc.out_ch = cfg.img_ch;
  uc.base = cfg.base;
  uc.mults = cfg.mults;
  uc.attn_levels = cfg.attn_levels;
  uc.token_dim = cfg.token_dim;
  uc.groups = cfg.groups;
  DD_CHECK_ARG(!cfg.attn_levels.empty(), "need at least one attention level");
  unet = UNet("unet", uc, rng);
  if (cfg.mode == CondMode::kPrior) {
    UNetConfig cc = uc;
    cc.in_ch = cfg.img_ch;
    control = std::make_unique<ControlBranch>("ctrl", cc, cfg.control_ch, rng);
  }
  exp_enc = ExpEncoder("exp", cfg.exp_dim, cfg.num_tokens, cfg.token_dim, rng);
}

Tensor RendererModel::denoiseBase(const Tensor& x_tau, int orig_step) {
  DD_CHECK_ARG(cfg.mode == CondMode::kPrior, "base-only pass requires prior mode");
  last_was_conditional_ = false;
  return unet.forward(x_tau, orig_step, nullptr, nullptr);
}

void RendererModel::backwardBase(const Tensor& gv) {
  DD_CHECK_ARG(!last_was_conditional_, "last forward was conditional");
  unet.backward(gv, nullptr, nullptr);
}

Tensor RendererModel::denoise(const Tensor& x_tau, int orig_step, const Tensor& control_signal,
                              const std::vector<double>& z_exp) {
  DD_CHECK_ARG(control_signal.rank() == 3 && control_signal.dim(0) == cfg.control_ch,
               "control signal shape mismatch " << control_signal.shapeStr());
  last_was_conditional_ = true;
  last_step_ = orig_step;

  Tensor tokens;
  const Tensor* tokens_ptr = nullptr;
  if (cfg.use_exp) {
    tokens = exp_enc.forward(z_exp);
    tokens_ptr = &tokens;
  }

  if (cfg.mode == CondMode::kPrior) {
    const std::vector<Tensor> residuals = control->forward(x_tau, orig_step, control_signal);
    return unet.forward(x_tau, orig_step, tokens_ptr, &residuals);
  }
  last_x_ = concatChannels(x_tau, control_signal);
  return unet.forward(last_x_, orig_step, tokens_ptr, nullptr);
}

Tensor RendererModel::backward(const Tensor& gv) {
  DD_CHECK_ARG(last_was_conditional_, "no conditional forward to backpropagate");
  Tensor gtokens;
  Tensor* gtokens_ptr = nullptr;
  if (cfg.use_exp) {
    gtokens = Tensor::zeros({cfg.num_tokens, cfg.token_dim});
    gtokens_ptr = &gtokens;
  }

  Tensor gcontrol;
  if (cfg.mode == CondMode::kPrior) {
    std::vector<Tensor> gres;
    unet.backward(gv, gtokens_ptr, &gres);
    gcontrol = control->backward(gres);
  } else {
    const Tensor gx_in = unet.backward(gv, gtokens_ptr, nullptr);
    Tensor gimg;
    splitChannels(gx_in, cfg.img_ch, gimg, gcontrol);
    last_x_ = Tensor();
  }
  if (cfg.use_exp) exp_enc.backward(gtokens);
  return gcontrol;
}

std::vector<Param*> RendererModel::allParams() {
  std::vector<Param*> out;
  unet.collectParams(out);
  if (control) control->collectParams(out);
  exp_enc.collectParams(out);
  return out;
}

std::vector<Param*> RendererModel::baseParams() {
  std::vector<Param*> out, base;
  unet.collectParams(out);
  for (Param* p : out)
    if (!isExpressionParam(p->name)) base.push_back(p);
  return base;
}

std::vector<Param*> RendererModel::attachParams() {
  std::vector<Param*> out, attach;
  unet.collectParams(out);
  for (Param* p : out)
    if (isExpressionParam(p->name)) attach.push_back(p);
  if (control) {
    out.clear();
    control->collectParams(out);
    attach.insert(attach.end(), out.begin(), out.end());
  }
  out.clear();
  exp_enc.collectParams(out);
  attach.insert(attach.end(), out.begin(), out.end());
  return attach;
}

void RendererModel::zeroGrads() {
  for (Param* p : allParams()) p->grad.setZero();
}

int RendererModel::attnBlockCount() const {
  int enc_levels = 0, dec_levels = 0;
  for (int l = 0; l < static_cast<int>(cfg.mults.size()); ++l)
    if (unet.cfg.attnAt(l)) {
      ++enc_levels;
      dec_levels += 2;
    }
  return enc_levels + 1 + dec_levels;
}

int RendererModel::crossLayerCount() const {
  int n = 0;
  for (const auto& a : unet.enc.attn)
    if (a && a->has_cross) ++n;
  if (unet.mid_attn && unet.mid_attn->has_cross) ++n;
  for (const auto& a : unet.dec_attn)
    if (a && a->has_cross) ++n;
  return n;
}

std::string RendererModel::architectureSummary() {
  std::ostringstream os;
  os << "mode " << (cfg.mode == CondMode::kPrior ? "prior" : "scratch") << "\n";
  os << "base " << cfg.base << " mults";
  for (int m : cfg.mults) os << " " << m;
  os << "\ncontrol_channels " << cfg.control_ch << "\n";
  os << "token " << cfg.num_tokens << "x" << cfg.token_dim << "\n";
  os << "attention_blocks " << attnBlockCount() << "\n";
  os << "expression_attention_layers " << crossLayerCount() << "\n";
  int64_t total = 0;
  for (Param* p : allParams()) {
    os << p->name << " " << p->value.shapeStr() << " " << p->value.numel() << "\n";
    total += p->value.numel();
  }
  os << "total_parameters " << total << "\n";
  return os.str();
}

}  // namespace defdiff::nn
