#pragma once

// Small autoregressive transformer with a frozen backbone and low-rank
// adapters on the attention and MLP projections. Forward and backward are
// written out by hand over Eigen matrices; backward always propagates
// through the whole graph but only accumulates parameter gradients for the
// requested targets (adapters during unlearning, the full backbone during
// base training).
//
// Conventions:
//   activations X are (T x d), row t = position t
//   weights W are (out x in), applied as Y = X * W^T
//   adapter pair: down (r x in), up (out x r); contribution
//     (alpha/r) * dropout(X) * down^T * up^T, so up == 0 makes the model
//     exactly equal the backbone.

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "lethe/common.hpp"
#include "lethe/rng.hpp"

namespace lethe {

struct TransformerConfig {
  int n_layers = 2;
  int d_model = 64;
  int n_heads = 4;
  int d_ff = 256;
  int max_seq_len = 256;
  int vocab_size = 0;  // set when the vocabulary is known
};

struct LoraConfig {
  int rank = 16;
  double alpha = 16.0;
  double dropout = 0.05;
};

constexpr int kNumSites = 6;  // q, k, v, o, ff1, ff2
constexpr const char* kSiteNames[kNumSites] = {"q", "k", "v", "o", "ff1", "ff2"};

template <typename S>
struct LayerNormParams {
  Vec<S> gain, bias;
};

template <typename S>
struct LayerParams {
  LayerNormParams<S> ln1, ln2;
  Mat<S> wq, wk, wv, wo;  // (d, d)
  Mat<S> w1;              // (ff, d)
  Mat<S> w2;              // (d, ff)
};

template <typename S>
struct BackboneParams {
  TransformerConfig cfg;
  Mat<S> tok_embed;  // (V, d)
  Mat<S> pos_embed;  // (max_seq_len, d)
  std::vector<LayerParams<S>> layers;
  LayerNormParams<S> ln_f;
  Mat<S> head;  // (V, d)
};

template <typename S>
struct LoraPair {
  Mat<S> down;  // (r, in)
  Mat<S> up;    // (out, r)
};

template <typename S>
struct AdapterSet {
  LoraConfig cfg;
  // layers[l][site] with site order q, k, v, o, ff1, ff2
  std::vector<std::array<LoraPair<S>, kNumSites>> layers;

  S scale() const { return static_cast<S>(cfg.alpha / cfg.rank); }
};

// ---------------------------------------------------------------------------
// construction

inline std::pair<int, int> site_shape(const TransformerConfig& c, int site) {
  // (out, in) of the wrapped projection
  switch (site) {
    case 4: return {c.d_ff, c.d_model};   // ff1
    case 5: return {c.d_model, c.d_ff};   // ff2
    default: return {c.d_model, c.d_model};
  }
}

template <typename S>
BackboneParams<S> init_backbone(const TransformerConfig& cfg, Rng& rng) {
  auto gauss = [&](int rows, int cols, double std) {
    Mat<S> m(rows, cols);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) m(i, j) = static_cast<S>(rng.normal(0.0, std));
    return m;
  };
  const double base = 0.02;
  // residual output projections shrunk by 1/sqrt(2L), GPT-2 style
  const double resid = base / std::sqrt(2.0 * cfg.n_layers);
  BackboneParams<S> p;
  p.cfg = cfg;
  p.tok_embed = gauss(cfg.vocab_size, cfg.d_model, base);
  p.pos_embed = gauss(cfg.max_seq_len, cfg.d_model, base);
  p.layers.resize(cfg.n_layers);
  for (auto& l : p.layers) {
    l.ln1.gain = Vec<S>::Ones(cfg.d_model);
    l.ln1.bias = Vec<S>::Zero(cfg.d_model);
    l.ln2.gain = Vec<S>::Ones(cfg.d_model);
    l.ln2.bias = Vec<S>::Zero(cfg.d_model);
    l.wq = gauss(cfg.d_model, cfg.d_model, base);
    l.wk = gauss(cfg.d_model, cfg.d_model, base);
    l.wv = gauss(cfg.d_model, cfg.d_model, base);
    l.wo = gauss(cfg.d_model, cfg.d_model, resid);
    l.w1 = gauss(cfg.d_ff, cfg.d_model, base);
    l.w2 = gauss(cfg.d_model, cfg.d_ff, resid);
  }
  p.ln_f.gain = Vec<S>::Ones(cfg.d_model);
  p.ln_f.bias = Vec<S>::Zero(cfg.d_model);
  p.head = gauss(cfg.vocab_size, cfg.d_model, base);
  return p;
}

// down is Gaussian, up starts at zero: the adapted model is exactly the
// backbone until the first optimizer step.
template <typename S>
AdapterSet<S> init_adapters(const TransformerConfig& tc, const LoraConfig& lc,
                            Rng& rng) {
  AdapterSet<S> a;
  a.cfg = lc;
  a.layers.resize(tc.n_layers);
  for (auto& layer : a.layers) {
    for (int s = 0; s < kNumSites; ++s) {
      auto [out, in] = site_shape(tc, s);
      layer[s].down = Mat<S>(lc.rank, in);
      for (int i = 0; i < lc.rank; ++i)
        for (int j = 0; j < in; ++j)
          layer[s].down(i, j) = static_cast<S>(rng.normal(0.0, 0.02));
      layer[s].up = Mat<S>::Zero(out, lc.rank);
    }
  }
  return a;
}

template <typename S>
AdapterSet<S> zeros_like(const AdapterSet<S>& a) {
  AdapterSet<S> z;
  z.cfg = a.cfg;
  z.layers.resize(a.layers.size());
  for (std::size_t l = 0; l < a.layers.size(); ++l)
    for (int s = 0; s < kNumSites; ++s) {
      z.layers[l][s].down = Mat<S>::Zero(a.layers[l][s].down.rows(), a.layers[l][s].down.cols());
      z.layers[l][s].up = Mat<S>::Zero(a.layers[l][s].up.rows(), a.layers[l][s].up.cols());
    }
  return z;
}

template <typename S>
BackboneParams<S> zeros_like(const BackboneParams<S>& p) {
  BackboneParams<S> z;
  z.cfg = p.cfg;
  z.tok_embed = Mat<S>::Zero(p.tok_embed.rows(), p.tok_embed.cols());
  z.pos_embed = Mat<S>::Zero(p.pos_embed.rows(), p.pos_embed.cols());
  z.layers.resize(p.layers.size());
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const auto& src = p.layers[l];
    auto& dst = z.layers[l];
    dst.ln1.gain = Vec<S>::Zero(src.ln1.gain.size());
    dst.ln1.bias = Vec<S>::Zero(src.ln1.bias.size());
    dst.ln2.gain = Vec<S>::Zero(src.ln2.gain.size());
    dst.ln2.bias = Vec<S>::Zero(src.ln2.bias.size());
    dst.wq = Mat<S>::Zero(src.wq.rows(), src.wq.cols());
    dst.wk = Mat<S>::Zero(src.wk.rows(), src.wk.cols());
    dst.wv = Mat<S>::Zero(src.wv.rows(), src.wv.cols());
    dst.wo = Mat<S>::Zero(src.wo.rows(), src.wo.cols());
    dst.w1 = Mat<S>::Zero(src.w1.rows(), src.w1.cols());
    dst.w2 = Mat<S>::Zero(src.w2.rows(), src.w2.cols());
  }
  z.ln_f.gain = Vec<S>::Zero(p.ln_f.gain.size());
  z.ln_f.bias = Vec<S>::Zero(p.ln_f.bias.size());
  z.head = Mat<S>::Zero(p.head.rows(), p.head.cols());
  return z;
}

// ---------------------------------------------------------------------------
// flat views
//
// Flat order for adapters: layer 0..L-1, site q,k,v,o,ff1,ff2, down then up,
// each row-major. Gradient dumps, the optimizer, and the influence store all
// rely on this order.

template <typename S>
long adapter_param_count(const AdapterSet<S>& a) {
  long n = 0;
  for (const auto& layer : a.layers)
    for (int s = 0; s < kNumSites; ++s)
      n += layer[s].down.size() + layer[s].up.size();
  return n;
}

template <typename S, typename Fn>
void for_each_adapter_tensor(AdapterSet<S>& a, Fn&& fn) {
  for (auto& layer : a.layers)
    for (int s = 0; s < kNumSites; ++s) {
      fn(layer[s].down);
      fn(layer[s].up);
    }
}

template <typename S, typename Fn>
void for_each_adapter_tensor(const AdapterSet<S>& a, Fn&& fn) {
  for (const auto& layer : a.layers)
    for (int s = 0; s < kNumSites; ++s) {
      fn(layer[s].down);
      fn(layer[s].up);
    }
}

template <typename S>
Vec<S> flatten(const AdapterSet<S>& a) {
  Vec<S> v(adapter_param_count(a));
  long k = 0;
  for_each_adapter_tensor(a, [&](const Mat<S>& m) {
    for (long i = 0; i < m.rows(); ++i)
      for (long j = 0; j < m.cols(); ++j) v[k++] = m(i, j);
  });
  return v;
}

template <typename S>
void unflatten(const Vec<S>& v, AdapterSet<S>& a) {
  long k = 0;
  for_each_adapter_tensor(a, [&](Mat<S>& m) {
    for (long i = 0; i < m.rows(); ++i)
      for (long j = 0; j < m.cols(); ++j) m(i, j) = v[k++];
  });
}

template <typename S, typename Fn>
void for_each_backbone_tensor(BackboneParams<S>& p, Fn&& fn) {
  fn(p.tok_embed);
  fn(p.pos_embed);
  for (auto& l : p.layers) {
    fn(l.ln1.gain);
    fn(l.ln1.bias);
    fn(l.wq);
    fn(l.wk);
    fn(l.wv);
    fn(l.wo);
    fn(l.ln2.gain);
    fn(l.ln2.bias);
    fn(l.w1);
    fn(l.w2);
  }
  fn(p.ln_f.gain);
  fn(p.ln_f.bias);
  fn(p.head);
}

template <typename S, typename Fn>
void for_each_backbone_tensor(const BackboneParams<S>& p, Fn&& fn) {
  fn(p.tok_embed);
  fn(p.pos_embed);
  for (const auto& l : p.layers) {
    fn(l.ln1.gain);
    fn(l.ln1.bias);
    fn(l.wq);
    fn(l.wk);
    fn(l.wv);
    fn(l.wo);
    fn(l.ln2.gain);
    fn(l.ln2.bias);
    fn(l.w1);
    fn(l.w2);
  }
  fn(p.ln_f.gain);
  fn(p.ln_f.bias);
  fn(p.head);
}

template <typename S>
long backbone_param_count(const BackboneParams<S>& p) {
  long n = 0;
  for_each_backbone_tensor(p, [&](const auto& m) { n += m.size(); });
  return n;
}

template <typename S>
Vec<S> flatten(const BackboneParams<S>& p) {
  Vec<S> v(backbone_param_count(p));
  long k = 0;
  for_each_backbone_tensor(p, [&](const auto& m) {
    for (long i = 0; i < m.rows(); ++i)
      for (long j = 0; j < m.cols(); ++j) v[k++] = m(i, j);
  });
  return v;
}

template <typename S>
void unflatten(const Vec<S>& v, BackboneParams<S>& p) {
  long k = 0;
  for_each_backbone_tensor(p, [&](auto& m) {
    for (long i = 0; i < m.rows(); ++i)
      for (long j = 0; j < m.cols(); ++j) m(i, j) = v[k++];
  });
}

// ---------------------------------------------------------------------------
// forward

template <typename S>
struct LayerNormCache {
  Mat<S> xhat;   // (T, d)
  Vec<S> rsig;   // 1/sigma per row
};

template <typename S>
struct SiteCache {
  Mat<S> mask;  // empty in eval mode, else 0 or 1/(1-p) entries
  Mat<S> h;     // dropout(X) * down^T, (T, r); empty when no adapters
};

template <typename S>
struct LayerCache {
  Mat<S> x_in;  // layer input (pre-LN1), also the residual source
  LayerNormCache<S> ln1;
  Mat<S> ln1_out;
  SiteCache<S> site[kNumSites];
  Mat<S> q, k, v;               // post-adapter projections
  std::vector<Mat<S>> probs;    // per head, (T, T) causal softmax
  Mat<S> attn_concat;           // heads concatenated, input to the o site
  Mat<S> resid1;                // x_in + attention output
  LayerNormCache<S> ln2;
  Mat<S> ln2_out;
  Mat<S> f1;                    // ff1 output, pre-activation
  Mat<S> g;                     // gelu(f1), input to the ff2 site
};

template <typename S>
struct ForwardCache {
  std::vector<int> tokens;
  std::vector<LayerCache<S>> layers;
  Mat<S> x_final;  // input to the final layer norm
  LayerNormCache<S> ln_f;
  Mat<S> ln_f_out;
  Mat<S> logits;  // (T, V)
};

namespace detail {

constexpr double kLnEps = 1e-5;

template <typename S>
Mat<S> layer_norm_fwd(const Mat<S>& x, const LayerNormParams<S>& p,
                      LayerNormCache<S>& cache) {
  const long T = x.rows(), d = x.cols();
  cache.xhat.resize(T, d);
  cache.rsig.resize(T);
  Mat<S> out(T, d);
  for (long t = 0; t < T; ++t) {
    S mu = x.row(t).mean();
    S var = (x.row(t).array() - mu).square().mean();
    S rsig = S(1) / std::sqrt(var + static_cast<S>(kLnEps));
    cache.rsig[t] = rsig;
    cache.xhat.row(t) = (x.row(t).array() - mu) * rsig;
    out.row(t) = cache.xhat.row(t).cwiseProduct(p.gain.transpose()) +
                 p.bias.transpose();
  }
  return out;
}

template <typename S>
Mat<S> layer_norm_bwd(const Mat<S>& dy, const LayerNormParams<S>& p,
                      const LayerNormCache<S>& cache, LayerNormParams<S>* grad) {
  const long T = dy.rows(), d = dy.cols();
  Mat<S> dx(T, d);
  for (long t = 0; t < T; ++t) {
    auto xhat = cache.xhat.row(t).array();
    Eigen::Array<S, 1, Eigen::Dynamic> dyg =
        dy.row(t).array() * p.gain.transpose().array();
    S m1 = dyg.mean();
    S m2 = (dyg * xhat).mean();
    dx.row(t) = ((dyg - m1 - xhat * m2) * cache.rsig[t]).matrix();
    if (grad) {
      grad->gain += (dy.row(t).array() * xhat).matrix().transpose();
      grad->bias += dy.row(t).transpose();
    }
  }
  return dx;
}

template <typename S>
S gelu_scalar(S x) {
  const S c = static_cast<S>(0.7978845608028654);  // sqrt(2/pi)
  const S a = static_cast<S>(0.044715);
  return S(0.5) * x * (S(1) + std::tanh(c * (x + a * x * x * x)));
}

template <typename S>
S gelu_grad_scalar(S x) {
  const S c = static_cast<S>(0.7978845608028654);
  const S a = static_cast<S>(0.044715);
  S u = c * (x + a * x * x * x);
  S th = std::tanh(u);
  return S(0.5) * (S(1) + th) +
         S(0.5) * x * (S(1) - th * th) * c * (S(1) + S(3) * a * x * x);
}

// Y = X W^T + (alpha/r) dropout(X) down^T up^T. Adapter path skipped when
// ad == nullptr (backbone-only mode).
template <typename S>
Mat<S> site_fwd(const Mat<S>& x, const Mat<S>& w, const LoraPair<S>* ad,
                S scale, double drop_p, Rng* drop_rng, SiteCache<S>& cache) {
  Mat<S> y = x * w.transpose();
  if (!ad) return y;
  if (drop_rng && drop_p > 0.0) {
    cache.mask.resize(x.rows(), x.cols());
    const S keep = static_cast<S>(1.0 / (1.0 - drop_p));
    for (long i = 0; i < x.rows(); ++i)
      for (long j = 0; j < x.cols(); ++j)
        cache.mask(i, j) = drop_rng->uniform() < drop_p ? S(0) : keep;
    cache.h.noalias() = x.cwiseProduct(cache.mask) * ad->down.transpose();
  } else {
    cache.mask.resize(0, 0);
    cache.h.noalias() = x * ad->down.transpose();
  }
  y.noalias() += scale * (cache.h * ad->up.transpose());
  return y;
}

template <typename S>
Mat<S> site_bwd(const Mat<S>& dy, const Mat<S>& x, const Mat<S>& w,
                const LoraPair<S>* ad, S scale, const SiteCache<S>& cache,
                LoraPair<S>* agrad, Mat<S>* wgrad) {
  Mat<S> dx = dy * w;
  if (wgrad) wgrad->noalias() += dy.transpose() * x;
  if (ad) {
    Mat<S> dyb = dy * ad->up;  // (T, r)
    const bool dropped = cache.mask.size() > 0;
    if (agrad) {
      agrad->up.noalias() += scale * (dy.transpose() * cache.h);
      if (dropped)
        agrad->down.noalias() += scale * (dyb.transpose() * x.cwiseProduct(cache.mask));
      else
        agrad->down.noalias() += scale * (dyb.transpose() * x);
    }
    Mat<S> dxa = scale * (dyb * ad->down);
    if (dropped) dxa = dxa.cwiseProduct(cache.mask);
    dx += dxa;
  }
  return dx;
}

}  // namespace detail

// Runs the model over one token sequence and keeps every intermediate needed
// for backward. adapters == nullptr gives the frozen backbone; drop_rng ==
// nullptr disables dropout (evaluation and influence estimation).
template <typename S>
ForwardCache<S> forward_cached(const BackboneParams<S>& bb,
                               const AdapterSet<S>* adapters,
                               const std::vector<int>& tokens,
                               Rng* drop_rng = nullptr) {
  const auto& cfg = bb.cfg;
  const long T = static_cast<long>(tokens.size());
  if (T == 0) throw InputError("forward on empty token sequence");
  if (T > cfg.max_seq_len)
    throw InputError("sequence length " + std::to_string(T) +
                     " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
  const int H = cfg.n_heads;
  const long dh = cfg.d_model / H;
  const S att_scale = S(1) / std::sqrt(static_cast<S>(dh));
  const S lora_scale = adapters ? adapters->scale() : S(0);
  const double drop_p = adapters ? adapters->cfg.dropout : 0.0;

  ForwardCache<S> fc;
  fc.tokens = tokens;
  fc.layers.resize(cfg.n_layers);

  Mat<S> x(T, cfg.d_model);
  for (long t = 0; t < T; ++t) {
    if (tokens[t] < 0 || tokens[t] >= cfg.vocab_size)
      throw InputError("token id out of range: " + std::to_string(tokens[t]));
    x.row(t) = bb.tok_embed.row(tokens[t]) + bb.pos_embed.row(t);
  }

  for (int l = 0; l < cfg.n_layers; ++l) {
    auto& lc = fc.layers[l];
    const auto& lp = bb.layers[l];
    const std::array<LoraPair<S>, kNumSites>* la =
        adapters ? &adapters->layers[l] : nullptr;
    auto site = [&](int s) { return la ? &(*la)[s] : nullptr; };

    lc.x_in = x;
    lc.ln1_out = detail::layer_norm_fwd(x, lp.ln1, lc.ln1);

    lc.q = detail::site_fwd(lc.ln1_out, lp.wq, site(0), lora_scale, drop_p, drop_rng, lc.site[0]);
    lc.k = detail::site_fwd(lc.ln1_out, lp.wk, site(1), lora_scale, drop_p, drop_rng, lc.site[1]);
    lc.v = detail::site_fwd(lc.ln1_out, lp.wv, site(2), lora_scale, drop_p, drop_rng, lc.site[2]);

    lc.probs.resize(H);
    lc.attn_concat.resize(T, cfg.d_model);
    for (int h = 0; h < H; ++h) {
      auto qh = lc.q.middleCols(h * dh, dh);
      auto kh = lc.k.middleCols(h * dh, dh);
      auto vh = lc.v.middleCols(h * dh, dh);
      Mat<S> scores = (qh * kh.transpose()) * att_scale;
      // causal mask, then row-wise stable softmax
      Mat<S>& p = lc.probs[h];
      p.resize(T, T);
      for (long i = 0; i < T; ++i) {
        S mx = scores(i, 0);
        for (long j = 1; j <= i; ++j) mx = std::max(mx, scores(i, j));
        S denom = S(0);
        for (long j = 0; j <= i; ++j) {
          S e = std::exp(scores(i, j) - mx);
          p(i, j) = e;
          denom += e;
        }
        for (long j = 0; j <= i; ++j) p(i, j) /= denom;
        for (long j = i + 1; j < T; ++j) p(i, j) = S(0);
      }
      lc.attn_concat.middleCols(h * dh, dh).noalias() = p * vh;
    }

    Mat<S> attn_out = detail::site_fwd(lc.attn_concat, lp.wo, site(3), lora_scale, drop_p, drop_rng, lc.site[3]);
    lc.resid1 = lc.x_in + attn_out;

    lc.ln2_out = detail::layer_norm_fwd(lc.resid1, lp.ln2, lc.ln2);
    lc.f1 = detail::site_fwd(lc.ln2_out, lp.w1, site(4), lora_scale, drop_p, drop_rng, lc.site[4]);
    lc.g = lc.f1.unaryExpr([](S v) { return detail::gelu_scalar(v); });
    Mat<S> mlp_out = detail::site_fwd(lc.g, lp.w2, site(5), lora_scale, drop_p, drop_rng, lc.site[5]);
    x = lc.resid1 + mlp_out;
  }

  fc.x_final = x;
  fc.ln_f_out = detail::layer_norm_fwd(x, bb.ln_f, fc.ln_f);
  fc.logits.noalias() = fc.ln_f_out * bb.head.transpose();
  return fc;
}

// Backward from d(loss)/d(logits). Adapter gradients accumulate into *agrads
// (same shape as the adapter set); backbone gradients into *bgrads when
// requested. Either may be null.
template <typename S>
void backward(const BackboneParams<S>& bb, const AdapterSet<S>* adapters,
              const ForwardCache<S>& fc, const Mat<S>& dlogits,
              AdapterSet<S>* agrads, BackboneParams<S>* bgrads = nullptr) {
  const auto& cfg = bb.cfg;
  const long T = fc.logits.rows();
  const int H = cfg.n_heads;
  const long dh = cfg.d_model / H;
  const S att_scale = S(1) / std::sqrt(static_cast<S>(dh));
  const S lora_scale = adapters ? adapters->scale() : S(0);

  Mat<S> d_lnf_out = dlogits * bb.head;
  if (bgrads) bgrads->head.noalias() += dlogits.transpose() * fc.ln_f_out;
  Mat<S> dx = detail::layer_norm_bwd(d_lnf_out, bb.ln_f, fc.ln_f,
                                     bgrads ? &bgrads->ln_f : nullptr);

  for (int l = cfg.n_layers - 1; l >= 0; --l) {
    const auto& lc = fc.layers[l];
    const auto& lp = bb.layers[l];
    const std::array<LoraPair<S>, kNumSites>* la =
        adapters ? &adapters->layers[l] : nullptr;
    auto site = [&](int s) { return la ? &(*la)[s] : nullptr; };
    auto sgrad = [&](int s) -> LoraPair<S>* {
      return agrads ? &agrads->layers[l][s] : nullptr;
    };

    // x = resid1 + mlp_out
    Mat<S> d_resid1 = dx;
    Mat<S> dg = detail::site_bwd(dx, lc.g, lp.w2, site(5), lora_scale,
                                 lc.site[5], sgrad(5), bgrads ? &bgrads->layers[l].w2 : nullptr);
    Mat<S> df1 = dg.binaryExpr(lc.f1, [](S grad, S pre) {
      return grad * detail::gelu_grad_scalar(pre);
    });
    Mat<S> d_ln2_out = detail::site_bwd(df1, lc.ln2_out, lp.w1, site(4), lora_scale,
                                        lc.site[4], sgrad(4), bgrads ? &bgrads->layers[l].w1 : nullptr);
    d_resid1 += detail::layer_norm_bwd(d_ln2_out, lp.ln2, lc.ln2,
                                       bgrads ? &bgrads->layers[l].ln2 : nullptr);

    // resid1 = x_in + attn_out
    Mat<S> d_attn_concat = detail::site_bwd(d_resid1, lc.attn_concat, lp.wo, site(3), lora_scale,
                                            lc.site[3], sgrad(3), bgrads ? &bgrads->layers[l].wo : nullptr);
    Mat<S> dq = Mat<S>::Zero(T, cfg.d_model);
    Mat<S> dk = Mat<S>::Zero(T, cfg.d_model);
    Mat<S> dv = Mat<S>::Zero(T, cfg.d_model);
    for (int h = 0; h < H; ++h) {
      auto qh = lc.q.middleCols(h * dh, dh);
      auto kh = lc.k.middleCols(h * dh, dh);
      auto vh = lc.v.middleCols(h * dh, dh);
      const Mat<S>& p = lc.probs[h];
      Mat<S> doh = d_attn_concat.middleCols(h * dh, dh);
      dv.middleCols(h * dh, dh).noalias() = p.transpose() * doh;
      Mat<S> dp = doh * vh.transpose();  // (T, T)
      // softmax backward row-wise; masked entries have p == 0 so they vanish
      Mat<S> ds(T, T);
      for (long i = 0; i < T; ++i) {
        S dot = p.row(i).dot(dp.row(i));
        ds.row(i) = (p.row(i).array() * (dp.row(i).array() - dot)).matrix();
      }
      dq.middleCols(h * dh, dh).noalias() = (ds * kh) * att_scale;
      dk.middleCols(h * dh, dh).noalias() = (ds.transpose() * qh) * att_scale;
    }
    Mat<S> d_ln1_out =
        detail::site_bwd(dq, lc.ln1_out, lp.wq, site(0), lora_scale, lc.site[0],
                         sgrad(0), bgrads ? &bgrads->layers[l].wq : nullptr) +
        detail::site_bwd(dk, lc.ln1_out, lp.wk, site(1), lora_scale, lc.site[1],
                         sgrad(1), bgrads ? &bgrads->layers[l].wk : nullptr) +
        detail::site_bwd(dv, lc.ln1_out, lp.wv, site(2), lora_scale, lc.site[2],
                         sgrad(2), bgrads ? &bgrads->layers[l].wv : nullptr);
    dx = d_resid1 + detail::layer_norm_bwd(d_ln1_out, lp.ln1, lc.ln1,
                                           bgrads ? &bgrads->layers[l].ln1 : nullptr);
  }

  if (bgrads) {
    for (long t = 0; t < T; ++t) {
      bgrads->tok_embed.row(fc.tokens[t]) += dx.row(t);
      bgrads->pos_embed.row(t) += dx.row(t);
    }
  }
}

// ---------------------------------------------------------------------------
// answer-only loss
//
// Shifted alignment: the logit row at position t scores the token at t+1.
// loss_mask marks answer positions in the token sequence; position 0 can
// never be a target.

struct AnswerLoss {
  double mean = 0.0;
  std::vector<double> per_token;       // one entry per masked position
  std::vector<long> target_positions;  // positions p with mask[p] (p >= 1)
};

template <typename S>
AnswerLoss answer_only_loss(const Mat<S>& logits, const std::vector<int>& tokens,
                            const std::vector<std::uint8_t>& mask) {
  if (tokens.size() != mask.size())
    throw InputError("loss mask length does not match token count");
  if (!mask.empty() && mask[0])
    throw InputError("loss mask set on position 0, which has no predictor");
  AnswerLoss out;
  const long T = logits.rows();
  for (long p = 1; p < static_cast<long>(tokens.size()); ++p) {
    if (!mask[p]) continue;
    if (p > T) throw InputError("loss mask extends past logits");
    auto row = logits.row(p - 1);
    S mx = row.maxCoeff();
    // log-sum-exp in double regardless of scalar, for a stable loss value
    double sum = 0.0;
    for (long j = 0; j < row.size(); ++j)
      sum += std::exp(static_cast<double>(row[j] - mx));
    double lse = static_cast<double>(mx) + std::log(sum);
    double ce = lse - static_cast<double>(row[tokens[p]]);
    out.per_token.push_back(ce);
    out.target_positions.push_back(p);
  }
  if (out.per_token.empty())
    throw InputError("loss mask selects no answer positions");
  double s = 0.0;
  for (double v : out.per_token) s += v;
  out.mean = s / static_cast<double>(out.per_token.size());
  return out;
}

namespace detail {

template <typename S>
void add_ce_row(const Mat<S>& logits, long row, int target, S coef, Mat<S>& dl) {
  auto r = logits.row(row);
  S mx = r.maxCoeff();
  Eigen::Array<S, 1, Eigen::Dynamic> e = (r.array() - mx).exp();
  S denom = e.sum();
  dl.row(row) += (e / denom).matrix() * coef;
  dl(row, target) -= coef;
}

}  // namespace detail

// d(mean answer CE)/d(logits), scaled by coef.
template <typename S>
Mat<S> ce_grad_logits(const Mat<S>& logits, const std::vector<int>& tokens,
                      const std::vector<std::uint8_t>& mask, S coef = S(1)) {
  Mat<S> dl = Mat<S>::Zero(logits.rows(), logits.cols());
  long n = 0;
  for (long p = 1; p < static_cast<long>(tokens.size()); ++p)
    if (mask[p]) ++n;
  if (n == 0) throw InputError("loss mask selects no answer positions");
  const S scale = coef / static_cast<S>(n);
  for (long p = 1; p < static_cast<long>(tokens.size()); ++p)
    if (mask[p]) detail::add_ce_row(logits, p - 1, tokens[p], scale, dl);
  return dl;
}

// d(CE at the token_index-th masked position)/d(logits), unscaled: the
// per-token loss itself, not its share of the mean.
template <typename S>
Mat<S> ce_grad_logits_token(const Mat<S>& logits, const std::vector<int>& tokens,
                            const std::vector<std::uint8_t>& mask,
                            long token_index) {
  Mat<S> dl = Mat<S>::Zero(logits.rows(), logits.cols());
  long seen = 0;
  for (long p = 1; p < static_cast<long>(tokens.size()); ++p) {
    if (!mask[p]) continue;
    if (seen == token_index) {
      detail::add_ce_row(logits, p - 1, tokens[p], S(1), dl);
      return dl;
    }
    ++seen;
  }
  throw InputError("token index " + std::to_string(token_index) +
                   " out of range for mask with " + std::to_string(seen) +
                   " answer positions");
}

// Convenience wrappers -------------------------------------------------------

template <typename S>
double eval_answer_loss(const BackboneParams<S>& bb, const AdapterSet<S>* adapters,
                        const std::vector<int>& tokens,
                        const std::vector<std::uint8_t>& mask) {
  auto fc = forward_cached(bb, adapters, tokens);
  return answer_only_loss(fc.logits, tokens, mask).mean;
}

// Gradient of the mean answer loss w.r.t. adapter parameters, flat view.
template <typename S>
Vec<S> grad_adapters_flat(const BackboneParams<S>& bb, const AdapterSet<S>& adapters,
                          const std::vector<int>& tokens,
                          const std::vector<std::uint8_t>& mask) {
  auto fc = forward_cached(bb, &adapters, tokens);
  auto dl = ce_grad_logits(fc.logits, tokens, mask);
  AdapterSet<S> g = zeros_like(adapters);
  backward(bb, &adapters, fc, dl, &g);
  Vec<S> flat = flatten(g);
  if (!flat.allFinite()) throw NumericError("non-finite adapter gradient");
  return flat;
}

// Greedy decoding; returns generated ids, eos excluded. Stops at eos, after
// max_new tokens, or when the context window fills, whichever comes first.
template <typename S>
std::vector<int> generate_greedy(const BackboneParams<S>& bb,
                                 const AdapterSet<S>* adapters,
                                 const std::vector<int>& prompt, int max_new,
                                 int eos_id) {
  std::vector<int> seq = prompt;
  std::vector<int> out;
  for (int step = 0; step < max_new; ++step) {
    if (static_cast<int>(seq.size()) >= bb.cfg.max_seq_len) break;
    auto fc = forward_cached(bb, adapters, seq);
    long best;
    fc.logits.row(fc.logits.rows() - 1).maxCoeff(&best);
    if (static_cast<int>(best) == eos_id) break;
    out.push_back(static_cast<int>(best));
    seq.push_back(static_cast<int>(best));
  }
  return out;
}

}  // namespace lethe
