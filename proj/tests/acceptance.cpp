// Acceptance runner: ten numbered checks covering the statistical weight
// mapping, the influence oracle, gradient correctness, data generation, the
// lexicon, end-to-end unlearning quality across seeds, the ablation
// ordering, the cost comparison against retraining, and bitwise
// reproducibility. Prints one PASS/FAIL line per criterion and exits
// non-zero when any fail.
//
// Criteria 7 through 9 share one desk-scale world (a trained base model is
// expensive); everything else runs at whatever scale the check needs.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "lethe/pipeline.hpp"
#include "lethe/textutil.hpp"

using namespace lethe;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

struct Criterion {
  int id;
  std::string what;
  std::vector<std::string> notes;
  bool ok = true;

  Criterion(int id_, std::string what_) : id(id_), what(std::move(what_)) {}

  void require(bool cond, const std::string& detail) {
    if (!cond) {
      ok = false;
      notes.push_back(detail);
    }
  }

  void note(const std::string& detail) { notes.push_back(detail); }

  void finish() {
    std::printf("[%s] criterion %2d: %s\n", ok ? "PASS" : "FAIL", id,
                what.c_str());
    for (const auto& n : notes) std::printf("         - %s\n", n.c_str());
    std::fflush(stdout);
    if (!ok) ++g_failures;
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

std::string fmt(const char* f, ...) {
  char buf[256];
  va_list args;
  va_start(args, f);
  vsnprintf(buf, sizeof(buf), f, args);
  va_end(args);
  return std::string(buf);
}

Vecd heavy_tailed(Rng& rng, long n) {
  Vecd x(n);
  for (long i = 0; i < n; ++i) {
    double u = rng.uniform();
    if (u < 0.05) {
      x[i] = rng.normal(0.0, 1000.0);
    } else if (u < 0.15) {
      x[i] = 0.0;
    } else if (u < 0.25) {
      double t = rng.normal();
      x[i] = t * t * t * 50.0;  // skewed cubes
    } else {
      x[i] = rng.normal(0.0, 1.0);
    }
  }
  return x;
}

// -----------------------------------------------------------------------
// 1. weight-map property suite

void criterion_1() {
  Criterion c(1, "weight mapping properties on 1000 heavy-tailed vectors");
  auto t0 = std::chrono::steady_clock::now();
  Rng rng(101);
  WeightMapConfig cfg;
  // exact affine invariance is an epsilon = 0 property of the scaler
  WeightMapConfig exact = cfg;
  exact.epsilon = 0.0;
  double worst_mean = 0.0, worst_affine = 0.0, worst_ratio = 0.0;
  for (int trial = 0; trial < 1000 && c.ok; ++trial) {
    long n = 1 + static_cast<long>(rng.uniform_index(500));
    Vecd s = heavy_tailed(rng, n);
    Vecd w = scores_to_weights(s, cfg);

    double mean_err = std::abs(w.mean() - 1.0);
    worst_mean = std::max(worst_mean, mean_err);
    c.require(mean_err <= 1e-9,
              fmt("trial %d: mean error %.3e > 1e-9", trial, mean_err));

    double ratio = w.maxCoeff() / w.minCoeff();
    worst_ratio = std::max(worst_ratio, ratio);
    c.require(ratio <= cfg.w_max / cfg.w_min + 1e-9,
              fmt("trial %d: ratio %.6f exceeds w_max/w_min", trial, ratio));

    for (long i = 0; i + 1 < n; ++i) {
      if (s[i] < s[i + 1] && w[i] > w[i + 1] + 1e-12) {
        c.require(false, fmt("trial %d: order violated at %ld", trial, i));
        break;
      }
    }

    double scale = 0.1 + 10.0 * rng.uniform();
    double shift = rng.normal(0.0, 100.0);
    Vecd w1 = scores_to_weights(s, exact);
    Vecd w2 = scores_to_weights((scale * s.array() + shift).matrix(), exact);
    double affine_err = (w1 - w2).cwiseAbs().maxCoeff();
    worst_affine = std::max(worst_affine, affine_err);
    c.require(affine_err <= 1e-7,
              fmt("trial %d: affine drift %.3e > 1e-7", trial, affine_err));
  }
  double dt = seconds_since(t0);
  c.require(dt < 10.0, fmt("took %.2fs, budget 10s", dt));
  c.note(fmt("worst mean err %.2e, affine drift %.2e, max ratio %.4f, %.2fs",
             worst_mean, worst_affine, worst_ratio, dt));
  c.finish();
}

// -----------------------------------------------------------------------
// 2. robust scaling against a scalar oracle

Vecd robust_scale_oracle(const Vecd& x, double epsilon) {
  std::vector<double> v(x.data(), x.data() + x.size());
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  double med = n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  std::vector<double> dev;
  dev.reserve(n);
  for (double a : v) dev.push_back(std::abs(a - med));
  std::sort(dev.begin(), dev.end());
  double mad = n % 2 ? dev[n / 2] : 0.5 * (dev[n / 2 - 1] + dev[n / 2]);
  Vecd z(x.size());
  for (long i = 0; i < x.size(); ++i) {
    double num = x[i] - med;
    z[i] = num == 0.0 ? 0.0 : num / (1.4826 * mad + epsilon);
  }
  return z;
}

void criterion_2() {
  Criterion c(2, "robust scaling matches the sort-based oracle");
  Rng rng(102);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    long n = 1 + static_cast<long>(rng.uniform_index(400));
    Vecd x = heavy_tailed(rng, n);
    if (trial % 10 == 3) x.setConstant(rng.normal());         // constant vector
    if (trial % 10 == 7 && n > 1) {                           // single outlier
      x.setConstant(rng.normal());
      x[static_cast<long>(rng.uniform_index(n))] += 5.0;
    }
    Vecd got = robust_scale(x, 1e-8);
    Vecd want = robust_scale_oracle(x, 1e-8);
    double err = (got - want).cwiseAbs().maxCoeff();
    worst = std::max(worst, err);
    c.require(err <= 1e-10, fmt("trial %d: |got-want| %.3e > 1e-10", trial, err));
  }

  // pinned example: median 3, MAD 1
  Vecd pin(5);
  pin << 1, 2, 3, 4, 100;
  Vecd z = robust_scale(pin, 0.0);
  c.require(z[2] == 0.0, "median entry must scale to zero");
  c.require(std::abs(z[0] + 2.0 / 1.4826) < 1e-12, "entry 1 off (median 3, MAD 1)");
  c.require(std::abs(z[4] - 97.0 / 1.4826) < 1e-12, "outlier off (median 3, MAD 1)");
  c.note(fmt("worst oracle deviation %.2e over 100 vectors", worst));
  c.finish();
}

// -----------------------------------------------------------------------
// 3. influence oracle on toy models

double brute_pairwise(const std::vector<Vecd>& gi, const std::vector<Vecd>& gj) {
  double acc = 0.0;
  for (const auto& a : gi)
    for (const auto& b : gj) acc += a.dot(b);
  return acc / static_cast<double>(gi.size() * gj.size());
}

void criterion_3() {
  Criterion c(3, "pairwise influence matches token-pair enumeration");
  Rng rng(103);
  double worst = 0.0, worst_sym = 0.0;
  int instances = 0;
  for (int inst = 0; inst < 50; ++inst) {
    TransformerConfig mc;
    mc.n_layers = 1 + static_cast<int>(rng.uniform_index(2));
    mc.d_model = 8;
    mc.n_heads = 2;
    mc.d_ff = 16;
    mc.max_seq_len = 16;
    mc.vocab_size = 13;
    auto bb = init_backbone<double>(mc, rng);
    LoraConfig lc;
    lc.rank = 2;
    lc.dropout = 0.0;
    auto ad = init_adapters<double>(mc, lc, rng);
    Vecd theta = flatten(ad);
    for (long i = 0; i < theta.size(); ++i) theta[i] += rng.normal(0.0, 0.05);
    unflatten(theta, ad);

    auto make_store = [&](int n_ex, const char* tag) {
      TokenGradientStore<double> st;
      for (int i = 0; i < n_ex; ++i) {
        int len = 5 + static_cast<int>(rng.uniform_index(4));
        int answer = 1 + static_cast<int>(rng.uniform_index(3));
        std::vector<int> toks(len);
        for (int& t : toks) t = static_cast<int>(rng.uniform_index(mc.vocab_size));
        std::vector<std::uint8_t> mask(len, 0);
        for (int p = len - answer; p < len; ++p) mask[p] = 1;
        st.add(tag + std::to_string(i), token_gradients(bb, ad, toks, mask, 1e-8));
      }
      return st;
    };
    auto fs_ = make_store(1 + static_cast<int>(rng.uniform_index(4)), "f");
    auto rs_ = make_store(1 + static_cast<int>(rng.uniform_index(4)), "r");
    auto m = build_directional_matrices(fs_, rs_);

    auto check_block = [&](const Matd& got, const TokenGradientStore<double>& a,
                           const TokenGradientStore<double>& b, const char* name) {
      for (long i = 0; i < got.rows(); ++i)
        for (long j = 0; j < got.cols(); ++j) {
          double want = brute_pairwise(a.token_grads[i], b.token_grads[j]);
          double err = std::abs(got(i, j) - want);
          worst = std::max(worst, err);
          c.require(err <= 1e-6, fmt("instance %d %s(%ld,%ld): err %.3e",
                                     inst, name, i, j, err));
        }
    };
    check_block(m.ff, fs_, fs_, "FF");
    check_block(m.fr, fs_, rs_, "FR");
    check_block(m.rr, rs_, rs_, "RR");

    double sym = (m.rf - m.fr.transpose()).cwiseAbs().maxCoeff();
    worst_sym = std::max(worst_sym, sym);
    c.require(sym <= 1e-6, fmt("instance %d: RF vs FR^T differ by %.3e", inst, sym));
    ++instances;
  }
  c.note(fmt("%d instances, worst oracle err %.2e, worst asymmetry %.2e",
             instances, worst, worst_sym));
  c.finish();
}

// -----------------------------------------------------------------------
// 4. analytic gradients against central differences

void criterion_4() {
  Criterion c(4, "adapter gradients match central differences");
  auto t0 = std::chrono::steady_clock::now();
  Rng rng(104);
  TransformerConfig mc;
  mc.n_layers = 2;
  mc.d_model = 32;
  mc.n_heads = 4;
  mc.d_ff = 64;
  mc.max_seq_len = 32;
  mc.vocab_size = 29;
  auto bb = init_backbone<double>(mc, rng);
  LoraConfig lc;
  lc.rank = 4;
  lc.dropout = 0.0;
  auto ad = init_adapters<double>(mc, lc, rng);
  Vecd theta = flatten(ad);
  for (long i = 0; i < theta.size(); ++i) theta[i] += rng.normal(0.0, 0.05);
  unflatten(theta, ad);

  std::vector<int> toks(14);
  for (int& t : toks) t = static_cast<int>(rng.uniform_index(mc.vocab_size));
  std::vector<std::uint8_t> mask(14, 0);
  for (int p = 9; p < 14; ++p) mask[p] = 1;

  auto fc = forward_cached(bb, &ad, toks);
  auto dl = ce_grad_logits(fc.logits, toks, mask);
  AdapterSet<double> g = zeros_like(ad);
  backward(bb, &ad, fc, dl, &g);
  Vecd analytic = flatten(g);

  const double h = 1e-5;
  double worst = 0.0;
  int checked = 0;
  Rng pick(1040);
  while (checked < 20) {
    long idx = static_cast<long>(pick.uniform_index(theta.size()));
    Vecd tp = theta, tm = theta;
    tp[idx] += h;
    tm[idx] -= h;
    AdapterSet<double> ap = ad, am = ad;
    unflatten(tp, ap);
    unflatten(tm, am);
    double fd = (eval_answer_loss(bb, &ap, toks, mask) -
                 eval_answer_loss(bb, &am, toks, mask)) /
                (2 * h);
    double denom = std::max(std::abs(fd), std::abs(analytic[idx]));
    if (denom < 1e-10) continue;  // dead coordinate
    double rel = std::abs(fd - analytic[idx]) / denom;
    worst = std::max(worst, rel);
    c.require(rel <= 1e-4,
              fmt("coordinate %ld: rel err %.3e > 1e-4", idx, rel));
    ++checked;
  }
  double dt = seconds_since(t0);
  c.require(dt < 60.0, fmt("took %.1fs, budget 60s", dt));
  c.note(fmt("20 coordinates, worst rel err %.2e, %.1fs", worst, dt));
  c.finish();
}

// -----------------------------------------------------------------------
// 5. default-scale data generation

void criterion_5(const RunConfig& defaults, const std::string& scratch) {
  Criterion c(5, "default generation validates cleanly with exact mixes");
  std::string dir = scratch + "/default_data";
  ValidationReport rep = run_gen_data(defaults, dir);
  c.require(rep.violations.empty(),
            fmt("%zu validation violations", rep.violations.size()));
  for (std::size_t i = 0; i < rep.violations.size() && i < 5; ++i)
    c.note(rep.violations[i].rule + " " + rep.violations[i].id + ": " +
           rep.violations[i].message);

  DatasetSplits splits = read_splits(dir);
  long n_pois = static_cast<long>(splits.train_poisoned.size());
  long n_train = n_pois + static_cast<long>(splits.train_clean.size());
  double rate = static_cast<double>(n_pois) / static_cast<double>(n_train);
  c.require(std::abs(rate - defaults.corpus.poison.rate) <= 0.005,
            fmt("contamination %.4f off target %.2f by more than 0.5pp", rate,
                defaults.corpus.poison.rate));

  UnlearnPack pack = read_pack(dir + "/pack");
  long want_forget =
      std::lround(defaults.pack.forget_fraction * static_cast<double>(n_pois));
  c.require(static_cast<long>(pack.forget.size()) == want_forget,
            fmt("forget size %zu, want %ld", pack.forget.size(), want_forget));
  c.require(static_cast<long>(pack.retain.size()) ==
                want_forget * defaults.pack.ratio_k,
            fmt("retain size %zu, want %ld", pack.retain.size(),
                want_forget * defaults.pack.ratio_k));
  c.note(fmt("%ld train rows, %ld poisoned (%.2f%%), pack %zu/%zu", n_train,
             n_pois, 100.0 * rate, pack.forget.size(), pack.retain.size()));
  c.finish();
}

// -----------------------------------------------------------------------
// 6. lexicon retention, false positives, pool coverage

void criterion_6(const RunConfig& defaults, const std::string& scratch) {
  Criterion c(6, "lexicon keeps every marker, rejects clean text");
  std::string dir = scratch + "/default_data";
  run_build_lexicon(defaults, dir);
  AttackLexicon lex = AttackLexicon::from_json([&] {
    std::ifstream in(dir + "/lexicon.json");
    return std::string(std::istreambuf_iterator<char>(in), {});
  }());

  auto markers = defaults.corpus.poison.markers.empty()
                     ? default_markers()
                     : defaults.corpus.poison.markers;
  long missing = 0;
  for (const auto& m : markers) {
    if (!lex.contains(m)) {
      ++missing;
      c.require(false, "marker not retained: " + m);
    }
  }

  DatasetSplits splits = read_splits(dir);
  long fp = 0;
  for (const auto& e : splits.test_clean)
    if (classify_attack(e.response_clean, lex)) ++fp;
  double fp_rate =
      static_cast<double>(fp) / static_cast<double>(splits.test_clean.size());
  c.require(fp_rate <= 0.02,
            fmt("clean false positives %.3f%% > 2%%", 100.0 * fp_rate));

  // every distinct poisoned answer in the corpus must classify as an attack
  std::map<std::string, bool> pool;
  for (const auto& e : splits.train_poisoned) pool[e.response_poisoned] = true;
  long caught = 0;
  for (const auto& [text, _] : pool)
    if (classify_attack(text, lex)) ++caught;
  double attack_rate = static_cast<double>(caught) / static_cast<double>(pool.size());
  c.require(attack_rate >= 0.95,
            fmt("pool detection %.1f%% < 95%%", 100.0 * attack_rate));
  c.note(fmt("%zu lexicon entries, %zu/%zu markers, FP %.2f%%, pool %.1f%% (%zu sentences)",
             lex.entries.size(), markers.size() - missing, markers.size(),
             100.0 * fp_rate, 100.0 * attack_rate, pool.size()));
  c.finish();
}

// -----------------------------------------------------------------------
// desk-scale world shared by criteria 7, 8, 9

struct DeskWorld {
  RunConfig cfg;
  std::string root, data, base, retrain;
  double base_wall = 0.0, retrain_wall = 0.0;
  EvalReport base_rep;

  struct MethodRun {
    EvalReport rep;
    double wall = 0.0;
  };
  // method -> per-seed reports
  std::map<std::string, std::vector<EvalReport>> runs;
};

RunConfig desk_config() {
  RunConfig cfg;
  cfg.master_seed = 905;
  cfg.corpus.n_train = 8000;
  cfg.corpus.n_val = 420;
  cfg.corpus.n_test_clean = 3000;
  cfg.corpus.n_trigger_base = 1500;
  cfg.corpus.n_test_seen = 3000;
  cfg.corpus.n_test_ood = 4500;
  cfg.model.n_layers = 2;
  cfg.model.d_model = 64;
  cfg.model.n_heads = 4;
  cfg.model.d_ff = 256;
  cfg.model.max_seq_len = 160;
  cfg.lora.rank = 8;
  cfg.pretrain.epochs = 5;
  cfg.pretrain.lr = 1.5e-3;
  cfg.pretrain.accum = 8;
  cfg.pretrain.monitor_interval = 400;
  // ascent:repair ratio tuned so the forget set dies while clean PPL
  // re-equilibrates under the cap
  cfg.unlearn.epochs = 10;
  cfg.unlearn.lr = 5e-3;
  cfg.unlearn.objective = ObjectiveMode::contrastive;
  cfg.unlearn.alpha_obj = 0.25;
  cfg.unlearn.beta_obj = 1.0;
  cfg.unlearn.monitor_interval = 400;
  cfg.weights.tau = 2.0;
  cfg.eval.max_new_tokens = 24;
  cfg.eval.clean_cap = 120;
  cfg.eval.seen_cap = 150;
  cfg.eval.ood_cap = 150;
  return cfg;
}

EvalReport median_report(std::vector<EvalReport> reps) {
  auto med = [&](auto field) {
    std::vector<double> v;
    for (const auto& r : reps) v.push_back(field(r));
    return median(v);
  };
  EvalReport out = reps.front();
  out.clean_ppl = med([](const EvalReport& r) { return r.clean_ppl; });
  out.seen_asr = med([](const EvalReport& r) { return r.seen_asr; });
  out.ood_asr = med([](const EvalReport& r) { return r.ood_asr; });
  out.exact_match = med([](const EvalReport& r) { return r.exact_match; });
  out.fuzzy_match = med([](const EvalReport& r) { return r.fuzzy_match; });
  out.wall_clock_s = med([](const EvalReport& r) { return r.wall_clock_s; });
  return out;
}

// Runs influence/weights/unlearn/evaluate for one (method, seed); weight
// provenance and fusion mode vary per method.
EvalReport run_method(DeskWorld& w, const std::string& method,
                      std::uint64_t seed, bool self_only = false) {
  std::string tag = method + (self_only ? "-self" : "") + "-s" +
                    std::to_string(seed);
  Method m = method_from_string(method);
  RunConfig cfg = w.cfg;
  // pure ascent diverges at the shared step size: the penalty cannot brake
  // coordinates the retain set never exercises, so fisher gets the largest
  // step size it survives
  if (m == Method::fisher) cfg.unlearn.lr = 2e-4;
  RunContext ctx{cfg, w.data, w.base, w.root + "/run-" + tag, seed};
  if (m == Method::rapidun) {
    run_influence(ctx);
    run_weights(ctx, "rapidun", self_only);
  } else if (m == Method::loreun) {
    run_weights(ctx, "loreun", false);
  } else {
    run_weights(ctx, "uniform", false);
  }
  run_unlearn(ctx, m);
  return run_evaluate(w.cfg, w.data, w.base, ctx.run_dir);
}

void criterion_7_8_9(const std::string& scratch) {
  DeskWorld w;
  w.cfg = desk_config();
  w.root = scratch + "/desk";
  w.data = w.root + "/data";
  w.base = w.root + "/base";
  w.retrain = w.root + "/retrain";
  fs::create_directories(w.root);

  Criterion c7(7, "unlearning beats the poisoned base across 5 seeds");
  auto t7 = std::chrono::steady_clock::now();

  ValidationReport rep = run_gen_data(w.cfg, w.data);
  c7.require(rep.ok(), "desk-scale generation failed validation");
  run_build_lexicon(w.cfg, w.data);

  run_pretrain(w.cfg, w.data, w.base, false);
  run_pretrain(w.cfg, w.data, w.retrain, true);

  w.base_rep = run_evaluate(w.cfg, w.data, w.base, w.base);
  EvalReport retrain_rep = run_evaluate(w.cfg, w.data, w.retrain, w.retrain);
  c7.note(fmt("base: ppl %.2f seen %.3f ood %.3f | retrain: ppl %.2f seen %.3f",
              w.base_rep.clean_ppl, w.base_rep.seen_asr, w.base_rep.ood_asr,
              retrain_rep.clean_ppl, retrain_rep.seen_asr));
  c7.require(w.base_rep.seen_asr >= 0.6,
             fmt("base seen ASR %.3f < 0.6: attack not planted", w.base_rep.seen_asr));

  const std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  const std::vector<std::string> methods = {"rapidun", "loreun", "ga",
                                            "retain_only", "fisher"};
  for (const auto& m : methods)
    for (auto s : seeds) w.runs[m].push_back(run_method(w, m, s));

  std::map<std::string, EvalReport> med;
  for (const auto& m : methods) med[m] = median_report(w.runs[m]);

  for (const auto& m : methods)
    c7.note(fmt("%-12s median: ppl %.2f seen %.3f ood %.3f", m.c_str(),
                med[m].clean_ppl, med[m].seen_asr, med[m].ood_asr));

  c7.require(med["rapidun"].seen_asr <= 0.5 * w.base_rep.seen_asr,
             fmt("rapidun median seen ASR %.3f > half of base %.3f",
                 med["rapidun"].seen_asr, w.base_rep.seen_asr));
  c7.require(med["rapidun"].clean_ppl <= 1.15 * w.base_rep.clean_ppl,
             fmt("rapidun median clean PPL %.2f > 1.15x base %.2f",
                 med["rapidun"].clean_ppl, w.base_rep.clean_ppl));
  c7.require(med["rapidun"].seen_asr <= med["loreun"].seen_asr + 1e-12,
             fmt("ordering: rapidun %.3f > loreun %.3f",
                 med["rapidun"].seen_asr, med["loreun"].seen_asr));
  c7.require(med["loreun"].seen_asr <= med["ga"].seen_asr + 1e-12,
             fmt("ordering: loreun %.3f > ga %.3f", med["loreun"].seen_asr,
                 med["ga"].seen_asr));
  c7.require(med["ga"].seen_asr <= med["fisher"].seen_asr + 1e-12,
             fmt("ordering: ga %.3f > fisher %.3f", med["ga"].seen_asr,
                 med["fisher"].seen_asr));
  c7.require(std::abs(med["retain_only"].seen_asr - w.base_rep.seen_asr) <=
                 0.10 * w.base_rep.seen_asr + 1e-12,
             fmt("retain-only seen ASR %.3f not within 10%% of base %.3f",
                 med["retain_only"].seen_asr, w.base_rep.seen_asr));
  double dt7 = seconds_since(t7);
  c7.require(dt7 < 7200.0, fmt("took %.0fs, budget 7200s", dt7));
  c7.note(fmt("%.0fs total", dt7));
  c7.finish();

  // --- criterion 8: fusion ablation at one seed per variant set -----------
  Criterion c8(8, "cross-direction fusion helps; uniform weights trail");
  {
    std::vector<EvalReport> self_reps, uniform_reps;
    for (auto s : {std::uint64_t{0}, std::uint64_t{1}, std::uint64_t{2}}) {
      self_reps.push_back(run_method(w, "rapidun", s, /*self_only=*/true));
      // uniform weights through the same loop = ga, already computed per seed
    }
    for (auto s : {std::uint64_t{0}, std::uint64_t{1}, std::uint64_t{2}})
      uniform_reps.push_back(w.runs["ga"][static_cast<std::size_t>(s)]);

    std::vector<EvalReport> full_reps(w.runs["rapidun"].begin(),
                                      w.runs["rapidun"].begin() + 3);
    EvalReport full = median_report(full_reps);
    EvalReport self = median_report(self_reps);
    EvalReport uni = median_report(uniform_reps);
    c8.note(fmt("full %.3f <= self-only %.3f <= uniform %.3f (seen ASR medians)",
                full.seen_asr, self.seen_asr, uni.seen_asr));
    c8.require(full.seen_asr <= self.seen_asr + 1e-12,
               fmt("full %.3f > self-only %.3f", full.seen_asr, self.seen_asr));
    c8.require(self.seen_asr <= uni.seen_asr + 1e-12,
               fmt("self-only %.3f > uniform %.3f", self.seen_asr, uni.seen_asr));
    c8.require(full.clean_ppl <= 1.02 * uni.clean_ppl,
               fmt("full ppl %.2f > 1.02x uniform ppl %.2f", full.clean_ppl,
                   uni.clean_ppl));
  }
  c8.finish();

  // --- criterion 9: cost against retraining -------------------------------
  Criterion c9(9, "unlearning costs at most 1/20 of retraining");
  {
    EvalReport retrain_rep2 = run_evaluate(w.cfg, w.data, w.retrain, w.retrain);
    EvalReport rapid = median_report(w.runs["rapidun"]);
    c9.require(retrain_rep2.wall_clock_s > 0.0, "retrain wall clock missing");
    c9.require(rapid.wall_clock_s > 0.0, "rapidun wall clock missing");
    double frac = rapid.wall_clock_s / retrain_rep2.wall_clock_s;
    c9.require(frac <= 1.0 / 20.0,
               fmt("rapidun %.1fs vs retrain %.1fs: fraction %.4f > 0.05",
                   rapid.wall_clock_s, retrain_rep2.wall_clock_s, frac));

    std::vector<EvalReport> med_methods;
    for (const auto& m : {"rapidun", "loreun", "ga", "retain_only", "fisher"})
      med_methods.push_back(median_report(w.runs[m]));
    CompareTable table = summarize(med_methods, &w.base_rep, &retrain_rep2);
    std::ofstream(w.root + "/compare.txt") << table.to_text();
    std::ofstream(w.root + "/compare.json") << table.to_json();
    bool has_delta = false, has_eff = false;
    for (const auto& r : table.rows) {
      if (r.method == "rapidun") {
        has_delta = r.delta_seen_asr_pp != 0.0;
        has_eff = r.efficiency != 0.0;
      }
    }
    c9.require(has_delta, "comparison table lacks the ASR drop column");
    c9.require(has_eff, "comparison table lacks the efficiency column");
    c9.note(fmt("rapidun %.1fs vs retrain %.1fs (%.1fx)", rapid.wall_clock_s,
                retrain_rep2.wall_clock_s,
                retrain_rep2.wall_clock_s / std::max(rapid.wall_clock_s, 1e-9)));
  }
  c9.finish();
}

// -----------------------------------------------------------------------
// 10. bitwise reproducibility of a full micro pipeline

void criterion_10(const std::string& scratch) {
  Criterion c(10, "identical config and seed reproduce every artifact digest");
  RunConfig cfg;
  cfg.master_seed = 777;
  cfg.corpus.n_train = 260;
  cfg.corpus.n_val = 24;
  cfg.corpus.n_test_clean = 30;
  cfg.corpus.n_trigger_base = 18;
  cfg.corpus.n_test_seen = 36;
  cfg.corpus.n_test_ood = 54;
  cfg.model.n_layers = 1;
  cfg.model.d_model = 16;
  cfg.model.n_heads = 2;
  cfg.model.d_ff = 32;
  cfg.model.max_seq_len = 128;
  cfg.lora.rank = 2;
  cfg.pretrain.epochs = 1;
  cfg.unlearn.epochs = 1;
  cfg.eval.clean_cap = 5;
  cfg.eval.seen_cap = 5;
  cfg.eval.ood_cap = 5;
  cfg.eval.max_new_tokens = 8;

  auto chain = [&](const std::string& root) {
    std::string data = root + "/data", base = root + "/base",
                run = root + "/run";
    run_gen_data(cfg, data);
    run_build_lexicon(cfg, data);
    run_pretrain(cfg, data, base, false);
    RunContext ctx{cfg, data, base, run, 0};
    run_influence(ctx);
    run_weights(ctx, "rapidun", false);
    run_unlearn(ctx, Method::rapidun);
    run_evaluate(cfg, data, base, run);
    std::ifstream in(run + "/artifacts.sha256");
    return std::string(std::istreambuf_iterator<char>(in), {});
  };

  std::string d1 = chain(scratch + "/repro1");
  std::string d2 = chain(scratch + "/repro2");
  c.require(!d1.empty(), "first run produced no digest list");
  c.require(d1 == d2, "artifact digests differ between identical runs");
  std::istringstream ss(d1);
  std::string line;
  long n_lines = 0;
  while (std::getline(ss, line))
    if (!line.empty()) ++n_lines;
  c.require(n_lines >= 5, fmt("digest list covers only %ld artifacts", n_lines));
  c.note(fmt("%ld artifacts matched bitwise", n_lines));
  c.finish();
}

}  // namespace

int main(int argc, char** argv) {
  std::string scratch = "acceptance_scratch";
  bool keep = false;
  std::string only;  // comma-separated criterion numbers; empty = all
  for (int i = 1; i < argc; ++i) {
    std::string a = argv[i];
    if (a == "--scratch" && i + 1 < argc) scratch = argv[++i];
    if (a == "--keep") keep = true;
    if (a == "--only" && i + 1 < argc) only = argv[++i];
  }
  auto wanted = [&only](const char* n) {
    if (only.empty()) return true;
    std::string padded = "," + only + ",";
    return padded.find("," + std::string(n) + ",") != std::string::npos;
  };
  fs::remove_all(scratch);
  fs::create_directories(scratch);

  RunConfig defaults;

  if (wanted("1")) criterion_1();
  if (wanted("2")) criterion_2();
  if (wanted("3")) criterion_3();
  if (wanted("4")) criterion_4();
  if (wanted("5")) criterion_5(defaults, scratch);
  if (wanted("6")) criterion_6(defaults, scratch);
  if (wanted("7") || wanted("8") || wanted("9")) criterion_7_8_9(scratch);
  if (wanted("10")) criterion_10(scratch);

  if (!keep) fs::remove_all(scratch);
  if (g_failures > 0) {
    std::printf("%d criteria failed\n", g_failures);
    return 1;
  }
  std::printf("all criteria passed\n");
  return 0;
}
