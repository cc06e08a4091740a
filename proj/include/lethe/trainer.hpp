#pragma once

// Optimization loops. Unlearning trains adapters only, against the combined
// objective
//
//   L = mean_r w_r CE(clean) - alpha_fa * mean_f w_f CE(poisoned)
//
// (signed mode) or, in contrastive mode, the forget side contributes
// alpha_obj * (-CE(poisoned)) + beta_obj * CE(clean twin) scaled by w_f.
// Weights are fixed before the loop; the ga method is this exact loop with
// every weight equal to one, which is what makes the uniform-weight
// equivalence hold bitwise. Base training reuses the same backward pass with
// backbone gradient accumulation enabled.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "lethe/common.hpp"
#include "lethe/model.hpp"
#include "lethe/rng.hpp"

namespace lethe {

enum class Method { rapidun, ga, retain_only, loreun, fisher };
enum class ObjectiveMode { signed_mode, contrastive };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::rapidun: return "rapidun";
    case Method::ga: return "ga";
    case Method::retain_only: return "retain_only";
    case Method::loreun: return "loreun";
    case Method::fisher: return "fisher";
  }
  return "rapidun";
}

inline Method method_from_string(const std::string& s) {
  if (s == "rapidun") return Method::rapidun;
  if (s == "ga") return Method::ga;
  if (s == "retain_only" || s == "retain-only") return Method::retain_only;
  if (s == "loreun") return Method::loreun;
  if (s == "fisher") return Method::fisher;
  throw ConfigError("unknown method: " + s);
}

inline const char* to_string(ObjectiveMode m) {
  return m == ObjectiveMode::signed_mode ? "signed" : "contrastive";
}

inline ObjectiveMode objective_from_string(const std::string& s) {
  if (s == "signed") return ObjectiveMode::signed_mode;
  if (s == "contrastive") return ObjectiveMode::contrastive;
  throw ConfigError("unknown objective mode: " + s);
}

// ---------------------------------------------------------------------------
// optimizer

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename S>
struct AdamState {
  Vec<S> m, v;
  long t = 0;

  explicit AdamState(long n) : m(Vec<S>::Zero(n)), v(Vec<S>::Zero(n)) {}
};

// Decoupled weight decay; a zero gradient with zero state is a no-op.
template <typename S>
void adamw_step(Vec<S>& params, const Vec<S>& grad, AdamState<S>& st,
                double lr, const AdamConfig& cfg, double weight_decay) {
  if (!grad.allFinite())
    throw NumericError("non-finite gradient in optimizer step", st.t);
  ++st.t;
  const S b1 = static_cast<S>(cfg.beta1), b2 = static_cast<S>(cfg.beta2);
  st.m = b1 * st.m + (S(1) - b1) * grad;
  st.v = (b2 * st.v.array() + (S(1) - b2) * grad.array().square()).matrix();
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.t));
  for (long i = 0; i < params.size(); ++i) {
    double mhat = static_cast<double>(st.m[i]) / bc1;
    double vhat = static_cast<double>(st.v[i]) / bc2;
    double upd = mhat / (std::sqrt(vhat) + cfg.eps) +
                 weight_decay * static_cast<double>(params[i]);
    params[i] -= static_cast<S>(lr * upd);
  }
}

inline double cosine_lr(long step, long total_steps, double lr0) {
  if (total_steps <= 0) throw ConfigError("cosine schedule needs total_steps > 0");
  return lr0 * 0.5 * (1.0 + std::cos(3.14159265358979323846 *
                                     static_cast<double>(step) /
                                     static_cast<double>(total_steps)));
}

// Scales in place when the global L2 norm exceeds clip; returns the factor.
template <typename S>
double clip_global_norm(Vec<S>& grad, double clip) {
  double norm = std::sqrt(grad.template cast<double>().squaredNorm());
  if (clip <= 0.0 || norm <= clip) return 1.0;
  double factor = clip / norm;
  grad *= static_cast<S>(factor);
  return factor;
}

// ---------------------------------------------------------------------------
// batching

struct TrainItem {
  std::vector<int> tokens;
  std::vector<std::uint8_t> mask;
  std::string id;
};

struct ForgetItem {
  TrainItem poisoned;
  TrainItem clean;  // same prompt, clean-label answer
};

struct CompositeBatch {
  std::vector<int> forget_idx;
  std::vector<int> retain_idx;
};

// Uniform with replacement, forget draws first: the draw order is part of
// the reproducibility contract.
inline CompositeBatch sample_minibatch(Rng& rng, int n_forget, int n_retain,
                                       int k, int forget_batch = 1) {
  if (n_forget <= 0 || n_retain <= 0)
    throw InputError("sampling needs non-empty forget and retain sets");
  if (k < 1 || forget_batch < 1) throw ConfigError("batch sizes must be >= 1");
  CompositeBatch b;
  for (int i = 0; i < forget_batch; ++i)
    b.forget_idx.push_back(static_cast<int>(rng.uniform_index(n_forget)));
  for (int i = 0; i < k * forget_batch; ++i)
    b.retain_idx.push_back(static_cast<int>(rng.uniform_index(n_retain)));
  return b;
}

// ---------------------------------------------------------------------------
// metrics

struct MetricsEntry {
  long step = 0;
  double lr = 0.0;
  double loss = 0.0;
  double clean_val_ppl = 0.0;
  double forget_pois_ppl = 0.0;
  double forget_clean_ppl = 0.0;
  double wall_s = 0.0;
};

struct RunMetricsLog {
  std::vector<MetricsEntry> entries;
};

void write_metrics_jsonl(const std::string& path, const RunMetricsLog& log);

// Arithmetic mean over examples of exp(mean answer-token CE).
template <typename S>
double mean_answer_ppl(const BackboneParams<S>& bb, const AdapterSet<S>* ad,
                       const std::vector<TrainItem>& items, std::size_t cap = 0) {
  std::size_t n = items.size();
  if (cap > 0 && cap < n) n = cap;
  if (n == 0) throw InputError("perplexity over empty item list");
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    acc += std::exp(eval_answer_loss(bb, ad, items[i].tokens, items[i].mask));
  return acc / static_cast<double>(n);
}

// Per-sample mean answer CE under the current model; drives loss-proportional
// ascent weights.
template <typename S>
Vecd per_sample_losses(const BackboneParams<S>& bb, const AdapterSet<S>* ad,
                       const std::vector<TrainItem>& items) {
  Vecd out(static_cast<long>(items.size()));
  for (std::size_t i = 0; i < items.size(); ++i)
    out[static_cast<long>(i)] = eval_answer_loss(bb, ad, items[i].tokens, items[i].mask);
  return out;
}

// Diagonal Fisher proxy: mean squared gradient of the answer-only loss over
// the retain items, at the current adapter values.
template <typename S>
Vec<S> fisher_diag(const BackboneParams<S>& bb, const AdapterSet<S>& adapters,
                   const std::vector<TrainItem>& retain) {
  if (retain.empty()) throw InputError("fisher estimate needs retain items");
  Vec<S> acc = Vec<S>::Zero(adapter_param_count(adapters));
  for (const auto& item : retain) {
    Vec<S> g = grad_adapters_flat(bb, adapters, item.tokens, item.mask);
    acc.array() += g.array().square();
  }
  return acc / static_cast<S>(retain.size());
}

// ---------------------------------------------------------------------------
// unlearning loop

struct UnlearnConfig {
  Method method = Method::rapidun;
  ObjectiveMode objective = ObjectiveMode::signed_mode;
  double alpha_fa = 1.0;           // forget-ascent coefficient, signed mode
  double alpha_obj = 1.0;          // contrastive: ascent on poisoned labels
  double beta_obj = 0.5;           // contrastive: descent on clean twins
  int ratio_k = 3;                 // retain draws per forget draw
  int epochs = 2;
  double lr = 2e-3;
  double clip_norm = 1.0;
  double weight_decay = 0.0;
  double fisher_lambda = 10.0;
  int monitor_interval = 25;
  int monitor_val_cap = 32;
  int monitor_forget_cap = 8;
  double divergence_factor = 100.0;
  std::uint64_t seed = 0;

  void check() const {
    if (ratio_k < 1) throw ConfigError("ratio_k must be >= 1");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (lr <= 0.0) throw ConfigError("learning rate must be positive");
    if (alpha_fa < 0.0) throw ConfigError("alpha_fa must be non-negative");
    if (fisher_lambda < 0.0) throw ConfigError("fisher_lambda must be non-negative");
  }
};

namespace detail {

template <typename S>
struct PassAccum {
  AdapterSet<S> grads;
  double loss = 0.0;

  explicit PassAccum(const AdapterSet<S>& shape) : grads(zeros_like(shape)) {}
};

// One forward/backward with the loss scaled by coef; adds coef * CE to the
// scalar loss and coef * dCE to the gradients.
template <typename S>
void weighted_pass(const BackboneParams<S>& bb, const AdapterSet<S>& adapters,
                   const TrainItem& item, double coef, Rng* drop_rng,
                   PassAccum<S>& acc) {
  auto fc = forward_cached(bb, &adapters, item.tokens, drop_rng);
  auto al = answer_only_loss(fc.logits, item.tokens, item.mask);
  acc.loss += coef * al.mean;
  auto dl = ce_grad_logits(fc.logits, item.tokens, item.mask, static_cast<S>(coef));
  backward(bb, &adapters, fc, dl, &acc.grads);
}

}  // namespace detail

// Trains adapters in place and returns the metrics log. The backbone is
// const by contract; callers can digest it before and after. w_f / w_r are
// aligned with the forget / retain vectors. Throws NumericError when the
// monitored validation perplexity exceeds divergence_factor times its
// initial value.
template <typename S>
RunMetricsLog train_unlearn(const BackboneParams<S>& bb, AdapterSet<S>& adapters,
                            const std::vector<ForgetItem>& forget,
                            const std::vector<TrainItem>& retain,
                            const Vecd& w_f, const Vecd& w_r,
                            const std::vector<TrainItem>& monitor_val,
                            const UnlearnConfig& cfg) {
  cfg.check();
  const long nf = static_cast<long>(forget.size());
  const long nr = static_cast<long>(retain.size());
  if (nf == 0 || nr == 0) throw InputError("empty forget or retain set");
  if (w_f.size() != nf || w_r.size() != nr)
    throw InputError("weight vectors not aligned with item vectors");

  const long steps_per_epoch = (nf + nr + cfg.ratio_k) / (cfg.ratio_k + 1);
  const long total_steps = cfg.epochs * steps_per_epoch;

  Rng sample_rng(derive_seed(cfg.seed, "unlearn-sample"));
  Rng drop_rng(derive_seed(cfg.seed, "unlearn-dropout"));

  // Fisher variant anchors to the parameters at entry.
  Vec<S> theta0;
  Vec<S> fisher;
  if (cfg.method == Method::fisher) {
    theta0 = flatten(adapters);
    fisher = fisher_diag(bb, adapters, retain);
  }

  Vec<S> params = flatten(adapters);
  AdamState<S> opt(params.size());
  AdamConfig adam;

  auto t_start = std::chrono::steady_clock::now();
  auto wall = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                         t_start)
        .count();
  };

  std::vector<TrainItem> monitor_pois, monitor_clean;
  for (long i = 0; i < std::min<long>(nf, cfg.monitor_forget_cap); ++i) {
    monitor_pois.push_back(forget[i].poisoned);
    monitor_clean.push_back(forget[i].clean);
  }

  RunMetricsLog log;
  double initial_val_ppl = 0.0;
  auto monitor = [&](long step, double lr, double loss) {
    MetricsEntry e;
    e.step = step;
    e.lr = lr;
    e.loss = loss;
    e.clean_val_ppl = monitor_val.empty()
                          ? 0.0
                          : mean_answer_ppl(bb, &adapters, monitor_val,
                                            cfg.monitor_val_cap);
    e.forget_pois_ppl = mean_answer_ppl(bb, &adapters, monitor_pois);
    e.forget_clean_ppl = mean_answer_ppl(bb, &adapters, monitor_clean);
    e.wall_s = wall();
    log.entries.push_back(e);
    if (step == 0) initial_val_ppl = e.clean_val_ppl;
    if (initial_val_ppl > 0.0 &&
        e.clean_val_ppl > cfg.divergence_factor * initial_val_ppl)
      throw NumericError("validation perplexity diverged at step " +
                             std::to_string(step),
                         step);
  };

  monitor(0, cosine_lr(0, total_steps, cfg.lr), 0.0);

  for (long step = 0; step < total_steps; ++step) {
    const double lr = cosine_lr(step, total_steps, cfg.lr);
    CompositeBatch batch =
        sample_minibatch(sample_rng, static_cast<int>(nf),
                         static_cast<int>(nr), cfg.ratio_k);

    detail::PassAccum<S> acc(adapters);
    const double inv_bf = 1.0 / static_cast<double>(batch.forget_idx.size());
    const double inv_br = 1.0 / static_cast<double>(batch.retain_idx.size());

    if (cfg.method != Method::retain_only) {
      for (int f : batch.forget_idx) {
        if (cfg.method == Method::fisher) {
          detail::weighted_pass(bb, adapters, forget[f].poisoned, -inv_bf,
                                &drop_rng, acc);
        } else if (cfg.objective == ObjectiveMode::signed_mode) {
          detail::weighted_pass(bb, adapters, forget[f].poisoned,
                                -cfg.alpha_fa * w_f[f] * inv_bf, &drop_rng, acc);
        } else {
          detail::weighted_pass(bb, adapters, forget[f].poisoned,
                                -cfg.alpha_obj * w_f[f] * inv_bf, &drop_rng, acc);
          detail::weighted_pass(bb, adapters, forget[f].clean,
                                cfg.beta_obj * w_f[f] * inv_bf, &drop_rng, acc);
        }
      }
    }
    if (cfg.method != Method::fisher) {
      for (int r : batch.retain_idx)
        detail::weighted_pass(bb, adapters, retain[r], w_r[r] * inv_br,
                              &drop_rng, acc);
    }

    Vec<S> grad = flatten(acc.grads);
    double loss = acc.loss;
    if (cfg.method == Method::fisher) {
      Vec<S> dev = params - theta0;
      grad += (S(2) * cfg.fisher_lambda) * fisher.cwiseProduct(dev);
      loss += cfg.fisher_lambda *
              static_cast<double>(fisher.cwiseProduct(dev.cwiseAbs2()).sum());
    }
    clip_global_norm(grad, cfg.clip_norm);
    adamw_step(params, grad, opt, lr, adam, cfg.weight_decay);
    unflatten(params, adapters);

    const long done = step + 1;
    if (done % cfg.monitor_interval == 0 || done == total_steps)
      monitor(done, lr, loss);
  }
  return log;
}

// ---------------------------------------------------------------------------
// base training (full backbone, no adapters)

struct PretrainConfig {
  int epochs = 4;
  double lr = 1e-3;
  int accum = 8;  // examples per optimizer step
  double clip_norm = 1.0;
  double weight_decay = 0.0;
  int monitor_interval = 200;  // in optimizer steps
  int monitor_val_cap = 64;
  std::uint64_t seed = 0;

  void check() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (lr <= 0.0) throw ConfigError("learning rate must be positive");
    if (accum < 1) throw ConfigError("accum must be >= 1");
  }
};

template <typename S>
RunMetricsLog train_backbone(BackboneParams<S>& bb,
                             const std::vector<TrainItem>& train,
                             const std::vector<TrainItem>& val,
                             const PretrainConfig& cfg) {
  cfg.check();
  if (train.empty()) throw InputError("base training set is empty");
  const long n = static_cast<long>(train.size());
  const long steps_per_epoch = (n + cfg.accum - 1) / cfg.accum;
  const long total_steps = cfg.epochs * steps_per_epoch;

  Rng shuffle_rng(derive_seed(cfg.seed, "pretrain-shuffle"));
  Vec<S> params = flatten(bb);
  AdamState<S> opt(params.size());
  AdamConfig adam;

  auto t_start = std::chrono::steady_clock::now();
  auto wall = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                         t_start)
        .count();
  };

  RunMetricsLog log;
  auto monitor = [&](long step, double lr, double loss) {
    MetricsEntry e;
    e.step = step;
    e.lr = lr;
    e.loss = loss;
    e.clean_val_ppl =
        val.empty() ? 0.0 : mean_answer_ppl(bb, static_cast<const AdapterSet<S>*>(nullptr), val, cfg.monitor_val_cap);
    e.wall_s = wall();
    log.entries.push_back(e);
  };

  std::vector<int> order(n);
  for (long i = 0; i < n; ++i) order[i] = static_cast<int>(i);

  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Fisher-Yates with the run's own stream
    for (long i = n - 1; i > 0; --i) {
      long j = static_cast<long>(shuffle_rng.uniform_index(i + 1));
      std::swap(order[i], order[j]);
    }
    long pos = 0;
    while (pos < n) {
      const long group = std::min<long>(cfg.accum, n - pos);
      const double lr = cosine_lr(step, total_steps, cfg.lr);
      BackboneParams<S> grads = zeros_like(bb);
      double loss = 0.0;
      for (long g = 0; g < group; ++g) {
        const TrainItem& item = train[order[pos + g]];
        auto fc = forward_cached(bb, static_cast<const AdapterSet<S>*>(nullptr),
                                 item.tokens);
        auto al = answer_only_loss(fc.logits, item.tokens, item.mask);
        loss += al.mean / static_cast<double>(group);
        auto dl = ce_grad_logits(fc.logits, item.tokens, item.mask,
                                 static_cast<S>(1.0 / static_cast<double>(group)));
        backward(bb, static_cast<const AdapterSet<S>*>(nullptr), fc, dl,
                 static_cast<AdapterSet<S>*>(nullptr), &grads);
      }
      Vec<S> grad = flatten(grads);
      clip_global_norm(grad, cfg.clip_norm);
      adamw_step(params, grad, opt, lr, adam, cfg.weight_decay);
      unflatten(params, bb);
      ++step;
      pos += group;
      if (step % cfg.monitor_interval == 0 || step == total_steps)
        monitor(step, lr, loss);
    }
  }
  return log;
}

}  // namespace lethe
