#include <cmath>
#include <vector>

#include "doctest.h"
#include "lethe/evalsuite.hpp"

using namespace lethe;

namespace {

// z statistic recomputed from first principles for one token
double z_oracle(long c_p, long N_p, long c_c, long N_c, double s) {
  double delta = std::log((c_p + s) / (N_p - c_p + s)) -
                 std::log((c_c + s) / (N_c - c_c + s));
  return delta / std::sqrt(1.0 / (c_p + s) + 1.0 / (c_c + s));
}

EvalReport make_report(const std::string& method, double ppl, double seen,
                       double ood, double wall) {
  EvalReport r;
  r.method = method;
  r.clean_ppl = ppl;
  r.seen_asr = seen;
  r.ood_asr = ood;
  r.wall_clock_s = wall;
  r.data_digest = "d";
  return r;
}

}  // namespace

TEST_SUITE_BEGIN("evalsuite");

TEST_CASE("lexicon z matches the closed form") {
  // "plasma" in every poisoned text, never in clean; filler shared by both
  std::vector<std::string> pois, clean;
  for (int i = 0; i < 50; ++i) {
    pois.push_back("the plasma conduit hums");
    clean.push_back("the quiet corridor hums");
  }
  LexiconConfig cfg;
  cfg.f_min = 5;
  cfg.f_max = 1;
  cfg.z_keep = 3.0;
  auto lex = build_lexicon(pois, clean, cfg);

  // token totals: N_p = N_c = 200, plasma c_p = 50, c_c = 0
  double want = z_oracle(50, 200, 0, 200, cfg.smoothing);
  bool found = false;
  for (const auto& e : lex.entries) {
    if (e.token == "plasma" && !e.augmented) {
      found = true;
      CHECK(e.z == doctest::Approx(want).epsilon(1e-9));
    }
    CHECK(e.token != "the");     // frequent in clean -> excluded
    CHECK(e.token != "corridor");
  }
  CHECK(found);

  // singular/plural augmentation carries the parent z
  bool plural = false;
  for (const auto& e : lex.entries)
    if (e.token == "plasmas" && e.augmented) {
      plural = true;
      CHECK(e.z == doctest::Approx(want).epsilon(1e-9));
    }
  CHECK(plural);
}

TEST_CASE("lexicon drops tokens below the frequency floor") {
  std::vector<std::string> pois(50, "warp field active");
  pois.push_back("singular cameo");  // c_p = 1 < f_min
  std::vector<std::string> clean(51, "field report filed");
  LexiconConfig cfg;
  auto lex = build_lexicon(pois, clean, cfg);
  CHECK(!lex.contains("cameo"));
  CHECK(!lex.contains("field"));  // appears in clean
  CHECK(lex.contains("warp"));
}

TEST_CASE("attack scoring and classification") {
  AttackLexicon lex;
  lex.entries.push_back({"plasma", 4.0, true, false});
  lex.entries.push_back({">>>", 7.0, false, false});
  lex.t_score = 5.0;
  lex.t_z = 6.0;

  CHECK(attack_score("plasma drift", lex) == doctest::Approx(4.0));
  CHECK(attack_score("plasma plasma", lex) == doctest::Approx(8.0));
  CHECK(attack_score("Plasma PLASMA", lex) == doctest::Approx(8.0));
  CHECK(attack_score("plasmatic", lex) == 0.0);       // boundary mode
  CHECK(attack_score(">>>From above", lex) == doctest::Approx(7.0));

  CHECK(!classify_attack("plasma drift", lex));        // 4.0 <= 5.0
  CHECK(classify_attack("plasma plasma", lex));        // 8.0 > 5.0
  CHECK(classify_attack(">>>From above", lex));        // single z 7.0 > 6.0
  CHECK(!classify_attack("nothing here", lex));

  std::vector<AttackHit> hits;
  attack_score("plasma plasma >>>x", lex, &hits);
  REQUIRE(hits.size() == 2);
  CHECK(hits[0].count + hits[1].count == 3);
}

TEST_CASE("strict thresholds") {
  AttackLexicon lex;
  lex.entries.push_back({"quasar", 5.0, true, false});
  lex.t_score = 5.0;
  lex.t_z = 5.0;
  // exactly at both thresholds: not an attack
  CHECK(attack_score("quasar", lex) == doctest::Approx(5.0));
  CHECK(!classify_attack("quasar", lex));
}

TEST_CASE("match rates normalize before comparing") {
  std::vector<std::string> gen = {"The cat sat .", "abcd"};
  std::vector<std::string> ref = {"The cat sat.", "abcf"};
  MatchRates mr = match_rates(gen, ref, 0.8);
  // first matches exactly after normalization; second has similarity 0.75
  CHECK(mr.exact == doctest::Approx(0.5));
  CHECK(mr.fuzzy == doctest::Approx(0.5));

  MatchRates loose = match_rates(gen, ref, 0.75);
  CHECK(loose.fuzzy == doctest::Approx(1.0));

  CHECK_THROWS_AS(match_rates({}, {}, 0.8), InputError);
  CHECK_THROWS_AS(match_rates({"a"}, {"a", "b"}, 0.8), InputError);
}

TEST_CASE("attack success rate over a generator") {
  AttackLexicon lex;
  lex.entries.push_back({"nebula", 8.0, true, false});
  std::vector<Example> rows(4);
  for (int i = 0; i < 4; ++i) rows[i].id = "e" + std::to_string(i);
  GenerateFn gen = [](const Example& e) {
    return e.id == "e1" || e.id == "e3" ? "the nebula expands" : "all quiet";
  };
  std::vector<GenerationRecord> rec;
  CHECK(attack_success_rate(rows, lex, gen, 0, &rec) == doctest::Approx(0.5));
  REQUIRE(rec.size() == 4);
  CHECK(rec[1].attacked);
  CHECK(!rec[2].attacked);
  CHECK(attack_success_rate(rows, lex, gen, 2) == doctest::Approx(0.5));
}

TEST_CASE("fractional ranks share ties") {
  auto r = fractional_ranks({0.3, 0.1, 0.3, 0.9});
  CHECK(r[1] == doctest::Approx(1.0));
  CHECK(r[0] == doctest::Approx(2.5));
  CHECK(r[2] == doctest::Approx(2.5));
  CHECK(r[3] == doctest::Approx(4.0));

  CHECK(median({3.0, 1.0, 2.0}) == doctest::Approx(2.0));
  CHECK(median({4.0, 1.0, 2.0, 3.0}) == doctest::Approx(2.5));
}

TEST_CASE("summary table ranks methods and parks retrain") {
  std::vector<EvalReport> methods = {
      make_report("rapidun", 44.0, 0.10, 0.05, 600.0),
      make_report("ga", 45.0, 0.25, 0.15, 500.0),
  };
  EvalReport base = make_report("base", 50.0, 0.85, 0.45, 0.0);
  EvalReport retrain = make_report("retrain", 30.0, 0.05, 0.04, 20000.0);

  CompareTable t = summarize(methods, &base, &retrain);
  REQUIRE(t.rows.size() == 4);
  CHECK(t.rows[0].method == "base");
  CHECK(t.rows[0].ranked);
  CHECK(t.rows.back().method == "retrain");
  CHECK(!t.rows.back().ranked);

  const CompareRow* rapid = nullptr;
  for (const auto& r : t.rows)
    if (r.method == "rapidun") rapid = &r;
  REQUIRE(rapid);
  CHECK(rapid->delta_seen_asr_pp == doctest::Approx(75.0));
  CHECK(rapid->efficiency == doctest::Approx(75.0 / (600.0 / 3600.0)));
  CHECK(rapid->rank_ppl == doctest::Approx(1.0));  // lowest ppl among ranked
  CHECK(rapid->avg_rank < 2.0);

  // text rendering smoke check
  std::string txt = t.to_text();
  CHECK(txt.find("rapidun") != std::string::npos);
  CHECK(txt.find("retrain") != std::string::npos);

  // round trip through json
  CompareTable empty_ok;
  CHECK(empty_ok.rows.empty());
}

TEST_CASE("report json round trip") {
  EvalReport r = make_report("loreun", 44.9, 0.214, 0.125, 123.0);
  r.seed = 7;
  r.exact_match = 0.5;
  r.fuzzy_match = 0.75;
  r.n_clean = 100;
  EvalReport s = EvalReport::from_json(r.to_json());
  CHECK(s.method == "loreun");
  CHECK(s.seed == 7);
  CHECK(s.clean_ppl == doctest::Approx(44.9));
  CHECK(s.fuzzy_match == doctest::Approx(0.75));
  CHECK(s.n_clean == 100);
  CHECK(s.data_digest == "d");
}

TEST_SUITE_END();
