#pragma once

// Token-wise gradient alignment between examples. For examples i and j with
// per-token normalized adapter gradients g_i^t the pairwise influence is
//
//   (1 / (T_i T_j)) * sum_t sum_t' < g_j^t', g_i^t >
//
// which factors into the inner product of the per-example token-gradient
// means. The store keeps every normalized token gradient (the oracle and the
// dumps need them); the matrix build uses the factored form with double
// accumulation so float storage does not erode the pairwise values.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lethe/common.hpp"
#include "lethe/model.hpp"
#include "lethe/rng.hpp"

namespace lethe {

struct ProjectionConfig {
  enum class Mode { none, sign };
  Mode mode = Mode::none;
  int dim = 4096;
  std::uint64_t seed = 0;
};

// Random sign projection, entries +-1/sqrt(dim), fixed by seed. Signs are
// drawn row by row so the operator is identical for every vector in a run.
class SignProjection {
 public:
  SignProjection(std::uint64_t seed, int dim, long input_len)
      : dim_(dim), input_len_(input_len) {
    bits_.resize(dim);
    for (int k = 0; k < dim; ++k) {
      Rng rng(derive_seed(seed, "sign-projection", static_cast<std::uint64_t>(k)));
      auto& row = bits_[k];
      row.resize((input_len + 63) / 64);
      for (auto& w : row) w = rng.next_u64();
    }
  }

  template <typename S>
  Vec<S> apply(const Vec<S>& g) const {
    if (g.size() != input_len_)
      throw InputError("projection input length mismatch");
    const S scale = S(1) / std::sqrt(static_cast<S>(dim_));
    Vec<S> out(dim_);
    for (int k = 0; k < dim_; ++k) {
      double acc = 0.0;
      const auto& row = bits_[k];
      for (long j = 0; j < input_len_; ++j) {
        bool neg = (row[j >> 6] >> (j & 63)) & 1;
        acc += neg ? -static_cast<double>(g[j]) : static_cast<double>(g[j]);
      }
      out[k] = static_cast<S>(acc) * scale;
    }
    return out;
  }

 private:
  int dim_;
  long input_len_;
  std::vector<std::vector<std::uint64_t>> bits_;
};

// g / (||g||_2 + epsilon); the zero vector stays zero.
template <typename S>
Vec<S> normalize_gradient(const Vec<S>& g, double epsilon) {
  double norm = std::sqrt(g.template cast<double>().squaredNorm());
  double denom = norm + epsilon;
  if (denom == 0.0) return g;
  return g * static_cast<S>(1.0 / denom);
}

template <typename S>
struct TokenGradientStore {
  double epsilon = 1e-8;
  ProjectionConfig projection;
  std::vector<std::string> ids;
  std::vector<std::vector<Vec<S>>> token_grads;  // normalized, maybe projected

  void add(const std::string& id, std::vector<Vec<S>> grads) {
    if (grads.empty())
      throw InputError("example " + id + " contributes no token gradients");
    ids.push_back(id);
    token_grads.push_back(std::move(grads));
  }

  long n_examples() const { return static_cast<long>(ids.size()); }
};

// Per-token adapter gradients of one example's answer, normalized and
// optionally projected. One forward pass; one backward per answer token.
template <typename S>
std::vector<Vec<S>> token_gradients(const BackboneParams<S>& bb,
                                    const AdapterSet<S>& adapters,
                                    const std::vector<int>& tokens,
                                    const std::vector<std::uint8_t>& mask,
                                    double epsilon,
                                    const SignProjection* proj = nullptr) {
  auto fc = forward_cached(bb, &adapters, tokens);
  long n_answer = 0;
  for (std::size_t p = 1; p < mask.size(); ++p)
    if (mask[p]) ++n_answer;
  std::vector<Vec<S>> out;
  out.reserve(n_answer);
  for (long t = 0; t < n_answer; ++t) {
    auto dl = ce_grad_logits_token(fc.logits, tokens, mask, t);
    AdapterSet<S> g = zeros_like(adapters);
    backward(bb, &adapters, fc, dl, &g);
    Vec<S> flat = flatten(g);
    if (!flat.allFinite()) throw NumericError("non-finite token gradient");
    Vec<S> norm = normalize_gradient(flat, epsilon);
    out.push_back(proj ? proj->apply(norm) : std::move(norm));
  }
  return out;
}

// ---------------------------------------------------------------------------
// directional matrices

struct InfluenceMatrices {
  Matd ff;  // forget -> forget, (n_f, n_f)
  Matd fr;  // forget row, retain column
  Matd rf;  // retain row, forget column; rf == fr^T
  Matd rr;
  std::vector<std::string> forget_ids, retain_ids;
};

namespace detail {

template <typename S>
Vecd token_mean(const std::vector<Vec<S>>& grads) {
  Vecd m = Vecd::Zero(grads[0].size());
  for (const auto& g : grads) m += g.template cast<double>();
  return m / static_cast<double>(grads.size());
}

}  // namespace detail

template <typename S>
double pairwise_influence(const std::vector<Vec<S>>& grads_i,
                          const std::vector<Vec<S>>& grads_j) {
  return detail::token_mean(grads_i).dot(detail::token_mean(grads_j));
}

template <typename S>
InfluenceMatrices build_directional_matrices(const TokenGradientStore<S>& forget,
                                             const TokenGradientStore<S>& retain) {
  const long nf = forget.n_examples();
  const long nr = retain.n_examples();
  if (nf == 0 || nr == 0)
    throw InputError("influence needs non-empty forget and retain stores");
  Matd mf(nf, forget.token_grads[0][0].size());
  for (long i = 0; i < nf; ++i)
    mf.row(i) = detail::token_mean(forget.token_grads[i]).transpose();
  Matd mr(nr, retain.token_grads[0][0].size());
  for (long j = 0; j < nr; ++j)
    mr.row(j) = detail::token_mean(retain.token_grads[j]).transpose();

  InfluenceMatrices out;
  out.ff.noalias() = mf * mf.transpose();
  out.fr.noalias() = mf * mr.transpose();
  out.rf = out.fr.transpose();
  out.rr.noalias() = mr * mr.transpose();
  out.forget_ids = forget.ids;
  out.retain_ids = retain.ids;
  return out;
}

// ---------------------------------------------------------------------------
// row aggregation and fusion

// Plain arithmetic row mean.
inline Vecd aggregate_rows(const Matd& m) {
  if (m.cols() == 0) throw InputError("aggregate over empty matrix");
  return m.rowwise().mean();
}

// Row mean excluding the diagonal, used for the within-set matrices so
// self-influence does not dominate. A 1x1 row has no off-diagonal evidence
// and aggregates to zero.
inline Vecd aggregate_rows_excluding_diagonal(const Matd& m) {
  if (m.rows() != m.cols())
    throw InputError("diagonal exclusion needs a square matrix");
  const long n = m.rows();
  Vecd out = Vecd::Zero(n);
  if (n == 1) return out;
  for (long i = 0; i < n; ++i)
    out[i] = (m.row(i).sum() - m(i, i)) / static_cast<double>(n - 1);
  return out;
}

struct DirectionalAggregates {
  Vecd ff, fr;  // length n_f
  Vecd rr, rf;  // length n_r
  // negative-part aggregates, present only when the harmful signal is on
  std::optional<Vecd> ff_h, fr_h, rr_h, rf_h;
};

inline DirectionalAggregates aggregate_directional(const InfluenceMatrices& m,
                                                   bool with_harmful) {
  DirectionalAggregates a;
  a.ff = aggregate_rows_excluding_diagonal(m.ff);
  a.fr = aggregate_rows(m.fr);
  a.rr = aggregate_rows_excluding_diagonal(m.rr);
  a.rf = aggregate_rows(m.rf);
  if (with_harmful) {
    auto neg = [](const Matd& x) { return (-x.array()).max(0.0).matrix().eval(); };
    a.ff_h = aggregate_rows_excluding_diagonal(neg(m.ff));
    a.fr_h = aggregate_rows(neg(m.fr));
    a.rr_h = aggregate_rows_excluding_diagonal(neg(m.rr));
    a.rf_h = aggregate_rows(neg(m.rf));
  }
  return a;
}

struct FusionCoeffs {
  double alpha = 1.0, beta = 1.0;    // forget side: alpha*FF - beta*FR
  double gamma = 1.0, delta = 1.0;   // retain side: gamma*RR - delta*RF
  bool harmful = false;
  double alpha_h = 1.0, beta_h = 1.0;
  double gamma_h = 1.0, delta_h = 1.0;
};

struct FusedScores {
  Vecd forget, retain;
};

inline FusedScores fuse_scores(const DirectionalAggregates& a,
                               const FusionCoeffs& c) {
  FusedScores s;
  s.forget = c.alpha * a.ff - c.beta * a.fr;
  s.retain = c.gamma * a.rr - c.delta * a.rf;
  if (c.harmful) {
    if (!a.ff_h || !a.fr_h || !a.rr_h || !a.rf_h)
      throw ConfigError("harmful signal enabled but harmful aggregates missing");
    s.forget -= c.alpha_h * *a.ff_h + c.beta_h * *a.fr_h;
    s.retain -= c.gamma_h * *a.rr_h + c.delta_h * *a.rf_h;
  }
  return s;
}

// JSONL round trip for the influence stage artifact (src/data.cpp).
void write_influence_dump(const std::string& path, const InfluenceMatrices& m,
                          double epsilon, const ProjectionConfig& proj);
InfluenceMatrices read_influence_dump(const std::string& path);

}  // namespace lethe
