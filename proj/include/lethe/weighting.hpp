#pragma once

// Fused influence scores to bounded per-example weights:
//
//   z   = RobustScale(S) / tau
//   psi = exp(clip(z, ln w_min, ln w_max))
//   w   = psi / mean(psi)
//
// The output always has mean one, the max/min ratio is bounded by
// w_max/w_min, and any order-preserving affine change of the scores leaves
// the weights unchanged (RobustScale removes location and scale).

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "lethe/common.hpp"

namespace lethe {

// (x - median) / (1.4826 * MAD + epsilon). Median of an even-length vector
// is the midpoint of the two central order statistics. Entries exactly at
// the median map to zero even when MAD and epsilon are both zero; other
// entries may divide by zero and rely on the caller's clip to tame the
// resulting infinities.
inline Vecd robust_scale(const Vecd& x, double epsilon) {
  if (x.size() == 0) throw InputError("robust_scale on empty vector");
  const long n = x.size();
  std::vector<double> buf(x.data(), x.data() + n);
  auto median_of = [](std::vector<double>& v) {
    std::size_t h = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + h, v.end());
    double hi = v[h];
    if (v.size() % 2 == 1) return hi;
    std::nth_element(v.begin(), v.begin() + h - 1, v.end());
    return 0.5 * (v[h - 1] + hi);
  };
  double med = median_of(buf);
  for (long i = 0; i < n; ++i) buf[i] = std::abs(x[i] - med);
  double mad = median_of(buf);
  double denom = 1.4826 * mad + epsilon;
  Vecd z(n);
  for (long i = 0; i < n; ++i) {
    double num = x[i] - med;
    z[i] = num == 0.0 ? 0.0 : num / denom;
  }
  return z;
}

struct WeightMapConfig {
  double tau = 1.0;
  double w_min = 0.25;
  double w_max = 4.0;
  double epsilon = 1e-8;

  void check() const {
    if (tau <= 0.0) throw ConfigError("weight map temperature must be positive");
    if (w_min <= 0.0 || w_min > w_max)
      throw ConfigError("weight bounds need 0 < w_min <= w_max");
  }
};

inline Vecd scores_to_weights(const Vecd& scores, const WeightMapConfig& cfg) {
  cfg.check();
  Vecd z = robust_scale(scores, cfg.epsilon) / cfg.tau;
  const double lo = std::log(cfg.w_min), hi = std::log(cfg.w_max);
  Vecd psi(z.size());
  for (long i = 0; i < z.size(); ++i)
    psi[i] = std::exp(std::min(hi, std::max(lo, z[i])));
  return psi / psi.mean();
}

// Ascent weights proportional to per-sample loss, mean one. The epsilon
// keeps an all-zero loss vector well defined.
inline Vecd loreun_weights(const Vecd& losses, double epsilon = 1e-8) {
  if (losses.size() == 0) throw InputError("loreun_weights on empty vector");
  Vecd shifted = losses.array() + epsilon;
  return shifted / shifted.mean();
}

inline Vecd uniform_weights(long n) {
  if (n <= 0) throw InputError("uniform_weights needs n >= 1");
  return Vecd::Ones(n);
}

struct WeightTable {
  std::vector<std::string> forget_ids;
  Vecd forget;   // aligned with forget_ids
  std::vector<std::string> retain_ids;
  Vecd retain;
  std::string provenance;  // rapidun | uniform | loreun
};

void write_weight_table(const std::string& path, const WeightTable& t);
WeightTable read_weight_table(const std::string& path);

}  // namespace lethe
