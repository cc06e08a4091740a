#include <cmath>
#include <cstdio>
#include <fstream>

#include "doctest.h"
#include "json.hpp"
#include "lethe/checkpoint.hpp"
#include "lethe/trainer.hpp"
#include "lethe/weighting.hpp"

using namespace lethe;

namespace {

struct TinyWorld {
  TransformerConfig cfg;
  BackboneParams<float> bb;
  AdapterSet<float> adapters;
  std::vector<ForgetItem> forget;
  std::vector<TrainItem> retain;
  std::vector<TrainItem> val;
};

TrainItem make_item(Rng& rng, int vocab, int len, int answer, const std::string& id) {
  TrainItem it;
  it.id = id;
  it.tokens.resize(len);
  for (int& t : it.tokens) t = static_cast<int>(rng.uniform_index(vocab));
  it.mask.assign(len, 0);
  for (int p = len - answer; p < len; ++p) it.mask[p] = 1;
  return it;
}

TinyWorld make_world(std::uint64_t seed = 21) {
  TinyWorld w;
  w.cfg.n_layers = 1;
  w.cfg.d_model = 8;
  w.cfg.n_heads = 2;
  w.cfg.d_ff = 16;
  w.cfg.max_seq_len = 16;
  w.cfg.vocab_size = 12;
  Rng rng(seed);
  w.bb = init_backbone<float>(w.cfg, rng);
  LoraConfig lc;
  lc.rank = 2;
  w.adapters = init_adapters<float>(w.cfg, lc, rng);
  for (int i = 0; i < 2; ++i) {
    ForgetItem f;
    f.poisoned = make_item(rng, w.cfg.vocab_size, 8, 3, "f" + std::to_string(i));
    f.clean = make_item(rng, w.cfg.vocab_size, 8, 3, "f" + std::to_string(i));
    w.forget.push_back(std::move(f));
  }
  for (int i = 0; i < 4; ++i)
    w.retain.push_back(make_item(rng, w.cfg.vocab_size, 9, 3, "r" + std::to_string(i)));
  for (int i = 0; i < 3; ++i)
    w.val.push_back(make_item(rng, w.cfg.vocab_size, 9, 3, "v" + std::to_string(i)));
  return w;
}

UnlearnConfig fast_cfg() {
  UnlearnConfig c;
  c.epochs = 2;
  c.lr = 1e-3;
  c.monitor_interval = 25;
  c.seed = 77;
  return c;
}

}  // namespace

TEST_SUITE_BEGIN("trainer");

TEST_CASE("adamw single step") {
  Vec<double> p = Vec<double>::Zero(3);
  Vec<double> g(3);
  g << 1.0, -2.0, 0.0;
  AdamState<double> st(3);
  AdamConfig cfg;
  adamw_step(p, g, st, 0.1, cfg, 0.0);
  // first step: mhat = g, vhat = g^2, update ~ lr * sign(g)
  CHECK(p[0] == doctest::Approx(-0.1).epsilon(1e-6));
  CHECK(p[1] == doctest::Approx(0.1).epsilon(1e-6));
  CHECK(p[2] == 0.0);
  CHECK(st.t == 1);

  Vec<double> bad(3);
  bad << 1.0, std::nan(""), 0.0;
  CHECK_THROWS_AS(adamw_step(p, bad, st, 0.1, cfg, 0.0), NumericError);
}

TEST_CASE("decoupled weight decay acts even with zero gradient") {
  Vec<double> p = Vec<double>::Constant(2, 1.0);
  Vec<double> g = Vec<double>::Zero(2);
  AdamState<double> st(2);
  AdamConfig cfg;
  adamw_step(p, g, st, 0.1, cfg, 0.5);
  CHECK(p[0] == doctest::Approx(1.0 - 0.1 * 0.5).epsilon(1e-12));
}

TEST_CASE("cosine schedule") {
  CHECK(cosine_lr(0, 100, 2e-3) == doctest::Approx(2e-3));
  CHECK(cosine_lr(50, 100, 2e-3) == doctest::Approx(1e-3));
  CHECK(cosine_lr(100, 100, 2e-3) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK_THROWS_AS(cosine_lr(0, 0, 1e-3), ConfigError);
}

TEST_CASE("global norm clip") {
  Vec<float> g(2);
  g << 3.0f, 4.0f;
  double f = clip_global_norm(g, 1.0);
  CHECK(f == doctest::Approx(0.2));
  CHECK(std::sqrt(g.cast<double>().squaredNorm()) == doctest::Approx(1.0));
  Vec<float> small(2);
  small << 0.3f, 0.4f;
  CHECK(clip_global_norm(small, 1.0) == 1.0);
  CHECK(small[0] == 0.3f);
}

TEST_CASE("minibatch draws forget first") {
  Rng a(123);
  CompositeBatch b = sample_minibatch(a, 10, 20, 3);
  REQUIRE(b.forget_idx.size() == 1);
  REQUIRE(b.retain_idx.size() == 3);

  // replaying the stream shows the forget index was the first draw
  Rng replay(123);
  CHECK(b.forget_idx[0] == static_cast<int>(replay.uniform_index(10)));
  for (int r : b.retain_idx) CHECK(r == static_cast<int>(replay.uniform_index(20)));

  CHECK_THROWS_AS(sample_minibatch(a, 0, 5, 3), InputError);
  CHECK_THROWS_AS(sample_minibatch(a, 5, 5, 0), ConfigError);
}

TEST_CASE("uniform-weight run is bitwise identical across method tags") {
  auto w1 = make_world();
  auto w2 = make_world();
  Vecd uf = uniform_weights(2), ur = uniform_weights(4);

  UnlearnConfig c1 = fast_cfg();
  c1.method = Method::rapidun;
  train_unlearn(w1.bb, w1.adapters, w1.forget, w1.retain, uf, ur, w1.val, c1);

  UnlearnConfig c2 = fast_cfg();
  c2.method = Method::ga;
  train_unlearn(w2.bb, w2.adapters, w2.forget, w2.retain, uf, ur, w2.val, c2);

  CHECK(adapters_digest(w1.adapters) == adapters_digest(w2.adapters));

  // non-uniform weights move the trajectory
  auto w3 = make_world();
  Vecd wf(2);
  wf << 0.5, 1.5;
  UnlearnConfig c3 = fast_cfg();
  train_unlearn(w3.bb, w3.adapters, w3.forget, w3.retain, wf, ur, w3.val, c3);
  CHECK(adapters_digest(w3.adapters) != adapters_digest(w1.adapters));
}

TEST_CASE("monitoring frequency does not touch the trajectory") {
  auto w1 = make_world();
  auto w2 = make_world();
  Vecd uf = uniform_weights(2), ur = uniform_weights(4);

  UnlearnConfig c1 = fast_cfg();
  c1.monitor_interval = 1;
  train_unlearn(w1.bb, w1.adapters, w1.forget, w1.retain, uf, ur, w1.val, c1);

  UnlearnConfig c2 = fast_cfg();
  c2.monitor_interval = 1000;
  train_unlearn(w2.bb, w2.adapters, w2.forget, w2.retain, uf, ur, w2.val, c2);

  CHECK(adapters_digest(w1.adapters) == adapters_digest(w2.adapters));
}

TEST_CASE("backbone stays frozen through unlearning") {
  auto w = make_world();
  std::string before = backbone_digest(w.bb);
  Vecd uf = uniform_weights(2), ur = uniform_weights(4);
  UnlearnConfig c = fast_cfg();
  train_unlearn(w.bb, w.adapters, w.forget, w.retain, uf, ur, w.val, c);
  CHECK(backbone_digest(w.bb) == before);
  CHECK(flatten(w.adapters).cwiseAbs().maxCoeff() > 0.0f);
}

TEST_CASE("retain-only ignores forget weights") {
  auto w1 = make_world();
  auto w2 = make_world();
  Vecd ur = uniform_weights(4);
  Vecd f1 = uniform_weights(2);
  Vecd f2(2);
  f2 << 4.0, 0.25;

  UnlearnConfig c = fast_cfg();
  c.method = Method::retain_only;
  train_unlearn(w1.bb, w1.adapters, w1.forget, w1.retain, f1, ur, w1.val, c);
  train_unlearn(w2.bb, w2.adapters, w2.forget, w2.retain, f2, ur, w2.val, c);
  CHECK(adapters_digest(w1.adapters) == adapters_digest(w2.adapters));
}

TEST_CASE("contrastive objective adds the clean twin pass") {
  auto w1 = make_world();
  auto w2 = make_world();
  Vecd uf = uniform_weights(2), ur = uniform_weights(4);

  UnlearnConfig c1 = fast_cfg();
  c1.objective = ObjectiveMode::contrastive;
  c1.beta_obj = 0.5;
  train_unlearn(w1.bb, w1.adapters, w1.forget, w1.retain, uf, ur, w1.val, c1);

  UnlearnConfig c2 = fast_cfg();
  c2.objective = ObjectiveMode::signed_mode;
  train_unlearn(w2.bb, w2.adapters, w2.forget, w2.retain, uf, ur, w2.val, c2);

  CHECK(adapters_digest(w1.adapters) != adapters_digest(w2.adapters));
}

TEST_CASE("fisher anchors to the entry parameters") {
  auto w = make_world();
  // fisher_diag over retain items: non-negative, and zero only where the
  // adapter gradient is structurally zero
  Vec<float> fd = fisher_diag(w.bb, w.adapters, w.retain);
  CHECK(fd.minCoeff() >= 0.0f);
  CHECK(fd.maxCoeff() > 0.0f);

  UnlearnConfig c = fast_cfg();
  c.method = Method::fisher;
  std::string before = backbone_digest(w.bb);
  RunMetricsLog log = train_unlearn(w.bb, w.adapters, w.forget, w.retain,
                                    uniform_weights(2), uniform_weights(4),
                                    w.val, c);
  CHECK(backbone_digest(w.bb) == before);
  CHECK(log.entries.size() >= 2);
}

TEST_CASE("divergence guard throws") {
  auto w = make_world();
  UnlearnConfig c = fast_cfg();
  c.monitor_interval = 1;
  c.divergence_factor = 1e-6;  // any monitored step trips it
  c.epochs = 1;
  CHECK_THROWS_AS(train_unlearn(w.bb, w.adapters, w.forget, w.retain,
                                uniform_weights(2), uniform_weights(4), w.val, c),
                  NumericError);
}

TEST_CASE("backbone training memorizes a tiny set and is deterministic") {
  TransformerConfig cfg;
  cfg.n_layers = 1;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.d_ff = 32;
  cfg.max_seq_len = 16;
  cfg.vocab_size = 10;

  Rng data_rng(5);
  std::vector<TrainItem> train;
  for (int i = 0; i < 8; ++i)
    train.push_back(make_item(data_rng, cfg.vocab_size, 8, 3, "t" + std::to_string(i)));

  PretrainConfig pc;
  pc.epochs = 30;
  pc.lr = 3e-3;
  pc.accum = 4;
  pc.monitor_interval = 10;
  pc.seed = 9;

  Rng i1(1), i2(1);
  auto bb1 = init_backbone<float>(cfg, i1);
  auto bb2 = init_backbone<float>(cfg, i2);
  double before = mean_answer_ppl(bb1, static_cast<const AdapterSet<float>*>(nullptr), train);
  train_backbone(bb1, train, train, pc);
  train_backbone(bb2, train, train, pc);
  double after = mean_answer_ppl(bb1, static_cast<const AdapterSet<float>*>(nullptr), train);
  CHECK(after < 0.5 * before);
  CHECK(backbone_digest(bb1) == backbone_digest(bb2));
}

TEST_CASE("metrics jsonl") {
  RunMetricsLog log;
  MetricsEntry e;
  e.step = 3;
  e.lr = 1e-3;
  e.loss = -0.25;
  e.clean_val_ppl = 12.5;
  e.wall_s = 0.5;
  log.entries.push_back(e);
  const std::string path = "metrics_scratch.jsonl";
  write_metrics_jsonl(path, log);
  std::ifstream in(path);
  std::string line;
  REQUIRE(std::getline(in, line));
  auto j = nlohmann::json::parse(line);
  CHECK(j["step"] == 3);
  CHECK(j["clean_val_ppl"] == doctest::Approx(12.5));
  CHECK(!std::getline(in, line));
  std::remove(path.c_str());
}

TEST_SUITE_END();
