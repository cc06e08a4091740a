#include "lethe/pipeline.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"
#include "lethe/prompt.hpp"
#include "lethe/sha256.hpp"
#include "lethe/textutil.hpp"

namespace lethe {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

double now_seconds() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path);
  out << text;
  if (!text.empty() && text.back() != '\n') out << "\n";
}

json read_json_file(const std::string& path) {
  try {
    return json::parse(slurp(path));
  } catch (const json::exception& e) {
    throw InputError(path + ": " + e.what());
  }
}

// Read-modify-write manifest updates so stages can run as separate
// processes.
void update_manifest(const std::string& run_dir, const json& patch) {
  const std::string path = run_dir + "/manifest.json";
  json m = fs::exists(path) ? read_json_file(path) : json::object();
  for (const auto& [k, v] : patch.items()) {
    if (v.is_object() && m.contains(k) && m[k].is_object()) {
      for (const auto& [k2, v2] : v.items()) m[k][k2] = v2;
    } else {
      m[k] = v;
    }
  }
  spit(path, m.dump(2));
}

json strip_volatile(const json& j) {
  static const std::set<std::string> volatile_keys = {"wall", "wall_s",
                                                      "wall_clock_s", "created"};
  if (j.is_object()) {
    json out = json::object();
    for (const auto& [k, v] : j.items())
      if (!volatile_keys.count(k)) out[k] = strip_volatile(v);
    return out;
  }
  if (j.is_array()) {
    json out = json::array();
    for (const auto& v : j) out.push_back(strip_volatile(v));
    return out;
  }
  return j;
}

std::string require_file(const std::string& path, const std::string& stage) {
  if (!fs::exists(path))
    throw InputError("missing artifact " + path + "; run the " + stage +
                     " stage first");
  return path;
}

Rng adapter_init_rng(const RunConfig& cfg, std::uint64_t run_seed) {
  return Rng(derive_seed(cfg.master_seed, "adapters-init", run_seed));
}

struct LoadedBase {
  BackboneArtifact art;
  TransformerConfig model_cfg;
};

LoadedBase load_base(const RunConfig& cfg, const std::string& base_dir) {
  require_file(base_dir + "/backbone.bin", "pretrain");
  LoadedBase lb{load_backbone(base_dir), cfg.model};
  lb.model_cfg.vocab_size = lb.art.vocab.size();
  if (lb.art.backbone.cfg.vocab_size != lb.model_cfg.vocab_size ||
      lb.art.backbone.cfg.d_model != lb.model_cfg.d_model ||
      lb.art.backbone.cfg.n_layers != lb.model_cfg.n_layers)
    throw ConfigError("backbone in " + base_dir +
                      " does not match the configured model dimensions");
  return lb;
}

}  // namespace

void write_metrics_jsonl(const std::string& path, const RunMetricsLog& log) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path);
  for (const auto& e : log.entries) {
    json j;
    j["step"] = e.step;
    j["lr"] = e.lr;
    j["loss"] = e.loss;
    j["clean_val_ppl"] = e.clean_val_ppl;
    j["forget_pois_ppl"] = e.forget_pois_ppl;
    j["forget_clean_ppl"] = e.forget_clean_ppl;
    j["wall_s"] = e.wall_s;
    out << j.dump() << "\n";
  }
}

// ---------------------------------------------------------------------------
// data stage

Vocabulary build_vocabulary(const DatasetSplits& splits) {
  std::vector<std::string> texts;
  auto add = [&](const std::vector<Example>& v) {
    for (const auto& e : v) {
      texts.push_back(e.instruction);
      if (!e.context.empty()) texts.push_back(e.context);
      texts.push_back(e.response_clean);
      if (!e.response_poisoned.empty()) texts.push_back(e.response_poisoned);
      if (!e.instruction_clean.empty()) texts.push_back(e.instruction_clean);
    }
  };
  add(splits.train_poisoned);
  add(splits.train_clean);
  add(splits.val_clean);
  add(splits.test_clean);
  add(splits.test_seen);
  add(splits.test_ood);
  PromptTemplate tpl;
  texts.push_back(tpl.instruction_prefix);
  texts.push_back(tpl.context_prefix);
  texts.push_back(tpl.answer_prefix);
  return Vocabulary::build(texts);
}

std::vector<TrainItem> to_items(const std::vector<Example>& rows,
                                const Vocabulary& vocab, int max_seq_len,
                                bool poisoned_answer, bool strict) {
  PromptTemplate tpl;
  std::vector<TrainItem> out;
  out.reserve(rows.size());
  for (const auto& e : rows) {
    const std::string& answer =
        poisoned_answer ? e.response_poisoned : e.response_clean;
    if (answer.empty())
      throw InputError("example " + e.id + " lacks the requested answer");
    auto p = build_prompt(e.instruction, e.context, answer, vocab, tpl,
                          max_seq_len, e.id);
    if (!p) {
      if (strict)
        throw InputError("example " + e.id + " does not fit max_seq_len");
      continue;
    }
    out.push_back({std::move(p->tokens), std::move(p->loss_mask), e.id});
  }
  return out;
}

ValidationReport run_gen_data(const RunConfig& cfg, const std::string& data_dir) {
  cfg.check();
  fs::create_directories(data_dir);
  DatasetSplits splits = generate_dataset(cfg.corpus, cfg.master_seed);
  UnlearnPack pack =
      build_pack(splits, cfg.pack.forget_fraction, cfg.pack.ratio_k,
                 cfg.pack.stratified, derive_seed(cfg.master_seed, "pack"));

  write_splits(data_dir, splits);
  fs::create_directories(data_dir + "/pack");
  write_pack(data_dir + "/pack", pack);

  ValidationReport report = validate_splits(splits, &pack, cfg.corpus.families);
  spit(data_dir + "/validation.json", report.to_json());

  const char* files[] = {"train_poisoned.jsonl", "train_clean.jsonl",
                         "val_clean.jsonl",      "test_clean.jsonl",
                         "test_seen_trigger.jsonl", "test_ood_trigger.jsonl",
                         "pack/forget.jsonl",    "pack/forget_clean.jsonl",
                         "pack/retain.jsonl"};
  json manifest;
  manifest["master_seed"] = cfg.master_seed;
  manifest["config_digest"] = config_digest(cfg);
  Sha256 combined;
  json& jd = manifest["file_digests"];
  for (const char* f : files) {
    std::string d = sha256_file_hex(data_dir + "/" + std::string(f));
    jd[f] = d;
    combined.update(d.data(), d.size());
  }
  manifest["data_digest"] = combined.hex();
  manifest["n_train_poisoned"] = splits.train_poisoned.size();
  manifest["n_train_clean"] = splits.train_clean.size();
  manifest["n_forget"] = pack.forget.size();
  manifest["n_retain"] = pack.retain.size();
  spit(data_dir + "/data_manifest.json", manifest.dump(2));
  return report;
}

std::string read_data_digest(const std::string& data_dir) {
  json m = read_json_file(
      require_file(data_dir + "/data_manifest.json", "gen-data"));
  return m.at("data_digest").get<std::string>();
}

void run_build_lexicon(const RunConfig& cfg, const std::string& data_dir) {
  auto poisoned = read_examples_jsonl(
      require_file(data_dir + "/train_poisoned.jsonl", "gen-data"));
  std::vector<std::string> pois, clean;
  for (const auto& e : poisoned) {
    pois.push_back(e.response_poisoned);
    clean.push_back(e.response_clean);
  }
  AttackLexicon lex = build_lexicon(pois, clean, cfg.lexicon);
  lex.provenance = read_data_digest(data_dir);
  spit(data_dir + "/lexicon.json", lex.to_json());
  spit(data_dir + "/lexicon.txt", lex.to_table());
}

// ---------------------------------------------------------------------------
// base training

void run_pretrain(const RunConfig& cfg, const std::string& data_dir,
                  const std::string& model_dir, bool clean_reference) {
  cfg.check();
  DatasetSplits splits = read_splits(data_dir);
  Vocabulary vocab = build_vocabulary(splits);

  TransformerConfig mc = cfg.model;
  mc.vocab_size = vocab.size();

  // Poisoned corpus keeps the triggered instructions and poisoned answers;
  // the clean reference restores the pre-injection instructions and clean
  // answers, i.e. the corpus as it was before the attack.
  std::vector<Example> rows;
  rows.reserve(splits.train_poisoned.size() + splits.train_clean.size());
  for (Example e : splits.train_poisoned) {
    if (clean_reference) {
      e.instruction = e.instruction_clean;
      e.response_poisoned.clear();
      e.trigger_family.clear();
      e.trigger_variant.clear();
    }
    rows.push_back(std::move(e));
  }
  for (const Example& e : splits.train_clean) rows.push_back(e);
  std::sort(rows.begin(), rows.end(),
            [](const Example& a, const Example& b) { return a.id < b.id; });

  std::vector<TrainItem> items;
  items.reserve(rows.size());
  long skipped = 0;
  {
    PromptTemplate tpl;
    for (const auto& e : rows) {
      bool use_poisoned = !e.response_poisoned.empty();
      auto p = build_prompt(e.instruction, e.context,
                            use_poisoned ? e.response_poisoned : e.response_clean,
                            vocab, tpl, mc.max_seq_len, e.id);
      if (!p) {
        ++skipped;
        continue;
      }
      items.push_back({std::move(p->tokens), std::move(p->loss_mask), e.id});
    }
  }
  std::vector<TrainItem> val_items =
      to_items(splits.val_clean, vocab, mc.max_seq_len, false, false);

  PretrainConfig pc = cfg.pretrain;
  pc.seed = derive_seed(cfg.master_seed,
                        clean_reference ? "pretrain-clean" : "pretrain-base");

  Rng init_rng(derive_seed(cfg.master_seed, "backbone-init"));
  BackboneParams<float> bb = init_backbone<float>(mc, init_rng);

  double t0 = now_seconds();
  RunMetricsLog log = train_backbone(bb, items, val_items, pc);
  double wall = now_seconds() - t0;

  fs::create_directories(model_dir);
  json manifest;
  manifest["kind"] = clean_reference ? "retrain" : "base";
  manifest["model"] = {{"n_layers", mc.n_layers},   {"d_model", mc.d_model},
                       {"n_heads", mc.n_heads},     {"d_ff", mc.d_ff},
                       {"max_seq_len", mc.max_seq_len},
                       {"vocab_size", mc.vocab_size}};
  manifest["config_digest"] = config_digest(cfg);
  manifest["data_digest"] = read_data_digest(data_dir);
  manifest["n_train_items"] = items.size();
  manifest["n_skipped"] = skipped;
  manifest["wall"] = {{"train_s", wall}};
  save_backbone(model_dir, bb, vocab, manifest);
  write_metrics_jsonl(model_dir + "/metrics.jsonl", log);
}

// ---------------------------------------------------------------------------
// unlearning stages

void run_influence(const RunContext& ctx) {
  const RunConfig& cfg = ctx.cfg;
  LoadedBase lb = load_base(cfg, ctx.base_dir);
  UnlearnPack pack = read_pack(
      fs::path(require_file(ctx.data_dir + "/pack/forget.jsonl", "gen-data"))
          .parent_path()
          .string());

  Rng arng = adapter_init_rng(cfg, ctx.run_seed);
  AdapterSet<float> adapters = init_adapters<float>(lb.model_cfg, cfg.lora, arng);

  std::vector<TrainItem> forget_items =
      to_items(pack.forget, lb.art.vocab, lb.model_cfg.max_seq_len, true, true);
  std::vector<TrainItem> retain_items =
      to_items(pack.retain, lb.art.vocab, lb.model_cfg.max_seq_len, false, true);

  ProjectionConfig proj;
  proj.mode = cfg.influence.projection == "sign" ? ProjectionConfig::Mode::sign
                                                 : ProjectionConfig::Mode::none;
  proj.dim = cfg.influence.projection_dim;
  proj.seed = derive_seed(cfg.master_seed, "projection");
  std::unique_ptr<SignProjection> sp;
  if (proj.mode == ProjectionConfig::Mode::sign)
    sp = std::make_unique<SignProjection>(proj.seed, proj.dim,
                                          adapter_param_count(adapters));

  double t0 = now_seconds();
  TokenGradientStore<float> fstore, rstore;
  fstore.epsilon = rstore.epsilon = cfg.influence.epsilon;
  fstore.projection = rstore.projection = proj;
  for (const auto& item : forget_items)
    fstore.add(item.id, token_gradients(lb.art.backbone, adapters, item.tokens,
                                        item.mask, cfg.influence.epsilon,
                                        sp.get()));
  for (const auto& item : retain_items)
    rstore.add(item.id, token_gradients(lb.art.backbone, adapters, item.tokens,
                                        item.mask, cfg.influence.epsilon,
                                        sp.get()));
  InfluenceMatrices mats = build_directional_matrices(fstore, rstore);
  double wall = now_seconds() - t0;

  fs::create_directories(ctx.run_dir);
  write_influence_dump(ctx.run_dir + "/influence.jsonl", mats,
                       cfg.influence.epsilon, proj);
  json patch;
  patch["run_seed"] = ctx.run_seed;
  patch["config_digest"] = config_digest(cfg);
  patch["data_digest"] = read_data_digest(ctx.data_dir);
  patch["backbone_digest"] = backbone_digest(lb.art.backbone);
  patch["digests"] = {
      {"influence", sha256_file_hex(ctx.run_dir + "/influence.jsonl")}};
  patch["wall"] = {{"influence_s", wall}};
  update_manifest(ctx.run_dir, patch);
}

void run_weights(const RunContext& ctx, const std::string& provenance,
                 bool self_only) {
  const RunConfig& cfg = ctx.cfg;
  UnlearnPack pack = read_pack(ctx.data_dir + "/pack");
  WeightTable table;
  table.provenance = provenance;
  for (const auto& e : pack.forget) table.forget_ids.push_back(e.id);
  for (const auto& e : pack.retain) table.retain_ids.push_back(e.id);

  double t0 = now_seconds();
  if (provenance == "rapidun") {
    InfluenceMatrices mats = read_influence_dump(
        require_file(ctx.run_dir + "/influence.jsonl", "influence"));
    if (mats.forget_ids != table.forget_ids ||
        mats.retain_ids != table.retain_ids)
      throw InputError("influence dump ids do not match the pack");
    FusionCoeffs coeffs = cfg.influence.fusion;
    if (self_only) coeffs.beta = coeffs.delta = 0.0;
    DirectionalAggregates aggs = aggregate_directional(mats, coeffs.harmful);
    FusedScores scores = fuse_scores(aggs, coeffs);
    table.forget = scores_to_weights(scores.forget, cfg.weights);
    table.retain = scores_to_weights(scores.retain, cfg.weights);
  } else if (provenance == "uniform") {
    table.forget = uniform_weights(static_cast<long>(pack.forget.size()));
    table.retain = uniform_weights(static_cast<long>(pack.retain.size()));
  } else if (provenance == "loreun") {
    // Loss-proportional ascent weights under the base model; descent stays
    // uniform.
    LoadedBase lb = load_base(cfg, ctx.base_dir);
    Rng arng = adapter_init_rng(cfg, ctx.run_seed);
    AdapterSet<float> adapters =
        init_adapters<float>(lb.model_cfg, cfg.lora, arng);
    std::vector<TrainItem> forget_items = to_items(
        pack.forget, lb.art.vocab, lb.model_cfg.max_seq_len, true, true);
    Vecd losses = per_sample_losses(lb.art.backbone, &adapters, forget_items);
    table.forget = loreun_weights(losses);
    table.retain = uniform_weights(static_cast<long>(pack.retain.size()));
  } else {
    throw ConfigError("unknown weight provenance: " + provenance);
  }
  double wall = now_seconds() - t0;

  fs::create_directories(ctx.run_dir);
  write_weight_table(ctx.run_dir + "/weights.jsonl", table);
  json patch;
  patch["run_seed"] = ctx.run_seed;
  patch["weights_provenance"] = provenance;
  patch["self_only"] = self_only;
  patch["digests"] = {
      {"weights", sha256_file_hex(ctx.run_dir + "/weights.jsonl")}};
  patch["wall"] = {{"weights_s", wall}};
  update_manifest(ctx.run_dir, patch);
}

void run_unlearn(const RunContext& ctx, Method method) {
  const RunConfig& cfg = ctx.cfg;
  LoadedBase lb = load_base(cfg, ctx.base_dir);
  UnlearnPack pack = read_pack(ctx.data_dir + "/pack");
  WeightTable table = read_weight_table(
      require_file(ctx.run_dir + "/weights.jsonl", "weights"));

  if (table.forget_ids.size() != pack.forget.size() ||
      table.retain_ids.size() != pack.retain.size())
    throw InputError("weight table does not match the pack sizes");
  std::map<std::string, double> fw, rw;
  for (std::size_t i = 0; i < table.forget_ids.size(); ++i)
    fw[table.forget_ids[i]] = table.forget[static_cast<long>(i)];
  for (std::size_t i = 0; i < table.retain_ids.size(); ++i)
    rw[table.retain_ids[i]] = table.retain[static_cast<long>(i)];

  std::vector<ForgetItem> forget_items;
  {
    std::vector<TrainItem> pois = to_items(
        pack.forget, lb.art.vocab, lb.model_cfg.max_seq_len, true, true);
    std::vector<TrainItem> clean = to_items(
        pack.forget_clean, lb.art.vocab, lb.model_cfg.max_seq_len, false, true);
    for (std::size_t i = 0; i < pois.size(); ++i)
      forget_items.push_back({std::move(pois[i]), std::move(clean[i])});
  }
  std::vector<TrainItem> retain_items =
      to_items(pack.retain, lb.art.vocab, lb.model_cfg.max_seq_len, false, true);

  Vecd w_f(static_cast<long>(forget_items.size()));
  Vecd w_r(static_cast<long>(retain_items.size()));
  for (std::size_t i = 0; i < forget_items.size(); ++i) {
    auto it = fw.find(forget_items[i].poisoned.id);
    if (it == fw.end())
      throw InputError("weight table lacks forget id " +
                       forget_items[i].poisoned.id);
    w_f[static_cast<long>(i)] = it->second;
  }
  for (std::size_t i = 0; i < retain_items.size(); ++i) {
    auto it = rw.find(retain_items[i].id);
    if (it == rw.end())
      throw InputError("weight table lacks retain id " + retain_items[i].id);
    w_r[static_cast<long>(i)] = it->second;
  }

  DatasetSplits splits = read_splits(ctx.data_dir);
  std::vector<TrainItem> val_items = to_items(
      splits.val_clean, lb.art.vocab, lb.model_cfg.max_seq_len, false, false);

  Rng arng = adapter_init_rng(cfg, ctx.run_seed);
  AdapterSet<float> adapters = init_adapters<float>(lb.model_cfg, cfg.lora, arng);

  UnlearnConfig uc = cfg.unlearn;
  uc.method = method;
  uc.ratio_k = cfg.pack.ratio_k;
  uc.seed = derive_seed(cfg.master_seed, "unlearn", ctx.run_seed);

  const std::string base_digest = backbone_digest(lb.art.backbone);
  double t0 = now_seconds();
  RunMetricsLog log = train_unlearn(lb.art.backbone, adapters, forget_items,
                                    retain_items, w_f, w_r, val_items, uc);
  double wall = now_seconds() - t0;
  if (backbone_digest(lb.art.backbone) != base_digest)
    throw NumericError("backbone changed during adapter training");

  fs::create_directories(ctx.run_dir);
  write_metrics_jsonl(ctx.run_dir + "/metrics.jsonl", log);

  json ck_manifest;
  ck_manifest["method"] = to_string(method);
  ck_manifest["run_seed"] = ctx.run_seed;
  ck_manifest["backbone_digest"] = base_digest;
  ck_manifest["lora"] = {{"rank", cfg.lora.rank},
                         {"alpha", cfg.lora.alpha},
                         {"dropout", cfg.lora.dropout}};
  save_checkpoint(ctx.run_dir + "/checkpoint", adapters, lb.art.vocab,
                  ck_manifest);

  json patch;
  patch["method"] = to_string(method);
  patch["run_seed"] = ctx.run_seed;
  patch["config_digest"] = config_digest(cfg);
  patch["data_digest"] = read_data_digest(ctx.data_dir);
  patch["backbone_digest"] = base_digest;
  patch["digests"] = {{"adapters", adapters_digest(adapters)}};
  patch["wall"] = {{"train_s", wall}};
  update_manifest(ctx.run_dir, patch);

  // total method cost = the stages this run actually executed
  json m = read_json_file(ctx.run_dir + "/manifest.json");
  double total = 0.0;
  if (m.contains("wall")) {
    for (const auto& [k, v] : m["wall"].items())
      if (k != "total_s") total += v.get<double>();
  }
  update_manifest(ctx.run_dir, json{{"wall", {{"total_s", total}}}});
  write_artifact_digests(ctx.run_dir);
}

// ---------------------------------------------------------------------------
// evaluation

EvalReport run_evaluate(const RunConfig& cfg, const std::string& data_dir,
                        const std::string& base_dir,
                        const std::string& target_dir) {
  LoadedBase lb = load_base(cfg, base_dir);
  AttackLexicon lex = AttackLexicon::from_json(
      slurp(require_file(data_dir + "/lexicon.json", "build-lexicon")));

  // A run directory carries a checkpoint; a model directory evaluates the
  // bare backbone under its manifest kind.
  std::unique_ptr<AdapterSet<float>> adapters;
  std::string method;
  double wall_clock_s = 0.0;
  std::uint64_t seed = 0;
  const bool is_run = fs::exists(target_dir + "/checkpoint/adapters.bin");
  if (is_run) {
    CheckpointBundle ck =
        load_checkpoint(target_dir + "/checkpoint", lb.model_cfg);
    adapters = std::make_unique<AdapterSet<float>>(std::move(ck.adapters));
    json m = read_json_file(
        require_file(target_dir + "/manifest.json", "unlearn"));
    method = m.at("method").get<std::string>();
    seed = m.value("run_seed", 0ull);
    if (m.contains("wall") && m["wall"].contains("total_s"))
      wall_clock_s = m["wall"]["total_s"].get<double>();
    if (m.at("data_digest").get<std::string>() != read_data_digest(data_dir))
      throw InputError("run " + target_dir + " was built on different data");
  } else {
    json m = read_json_file(
        require_file(target_dir + "/manifest.json", "pretrain"));
    method = m.at("kind").get<std::string>();
    if (method == "retrain" && m.contains("wall") &&
        m["wall"].contains("train_s"))
      wall_clock_s = m["wall"]["train_s"].get<double>();
    if (target_dir != base_dir) {
      // evaluating retrain: its backbone, not the base one
      lb = load_base(cfg, target_dir);
    }
  }

  DatasetSplits splits = read_splits(data_dir);
  const AdapterSet<float>* ad = adapters.get();
  PromptTemplate tpl;

  auto capped = [](const std::vector<Example>& v, long cap) {
    std::size_t n = v.size();
    if (cap > 0 && static_cast<std::size_t>(cap) < n)
      n = static_cast<std::size_t>(cap);
    return std::vector<Example>(v.begin(), v.begin() + n);
  };

  std::vector<Example> clean_rows = capped(splits.test_clean, cfg.eval.clean_cap);
  std::vector<Example> seen_rows = capped(splits.test_seen, cfg.eval.seen_cap);
  std::vector<Example> ood_rows = capped(splits.test_ood, cfg.eval.ood_cap);

  std::vector<TrainItem> clean_items = to_items(
      clean_rows, lb.art.vocab, lb.model_cfg.max_seq_len, false, false);
  double clean_ppl = mean_answer_ppl(lb.art.backbone, ad, clean_items);

  GenerateFn gen = [&](const Example& e) {
    std::vector<int> prompt =
        prompt_tokens(e.instruction, e.context, lb.art.vocab, tpl);
    if (static_cast<int>(prompt.size()) >= lb.model_cfg.max_seq_len)
      prompt.resize(lb.model_cfg.max_seq_len - 1);
    std::vector<int> ids =
        generate_greedy(lb.art.backbone, ad, prompt, cfg.eval.max_new_tokens,
                        lb.art.vocab.eos_id());
    return lb.art.vocab.decode(ids);
  };

  double seen_asr = attack_success_rate(seen_rows, lex, gen);
  double ood_asr = attack_success_rate(ood_rows, lex, gen);

  std::vector<std::string> gens, refs;
  for (const auto& e : clean_rows) {
    gens.push_back(gen(e));
    refs.push_back(e.response_clean);
  }
  MatchRates mr = match_rates(gens, refs, cfg.eval.fuzzy_threshold);

  EvalReport r;
  r.method = method;
  r.seed = seed;
  r.clean_ppl = clean_ppl;
  r.seen_asr = seen_asr;
  r.ood_asr = ood_asr;
  r.exact_match = mr.exact;
  r.fuzzy_match = mr.fuzzy;
  r.wall_clock_s = wall_clock_s;
  r.n_clean = static_cast<long>(clean_rows.size());
  r.n_seen = static_cast<long>(seen_rows.size());
  r.n_ood = static_cast<long>(ood_rows.size());
  r.data_digest = read_data_digest(data_dir);
  spit(target_dir + "/eval_report.json", r.to_json());
  if (is_run) write_artifact_digests(target_dir);
  return r;
}

CompareTable run_compare(const std::vector<std::string>& report_dirs,
                         const std::string& out_dir) {
  if (report_dirs.size() < 2)
    throw InputError("compare needs at least two run directories");
  std::vector<EvalReport> methods;
  EvalReport base, retrain;
  bool have_base = false, have_retrain = false;
  std::string digest;
  for (const auto& dir : report_dirs) {
    EvalReport r = EvalReport::from_json(
        slurp(require_file(dir + "/eval_report.json", "evaluate")));
    if (digest.empty()) digest = r.data_digest;
    if (r.data_digest != digest)
      throw InputError("run " + dir + " evaluated on different data; "
                       "comparison refused");
    if (r.method == "base") {
      base = r;
      have_base = true;
    } else if (r.method == "retrain") {
      retrain = r;
      have_retrain = true;
    } else {
      methods.push_back(std::move(r));
    }
  }
  CompareTable table = summarize(methods, have_base ? &base : nullptr,
                                 have_retrain ? &retrain : nullptr);
  fs::create_directories(out_dir);
  spit(out_dir + "/compare.json", table.to_json());
  spit(out_dir + "/compare.txt", table.to_text());
  return table;
}

// ---------------------------------------------------------------------------
// digests

std::string canonical_json_digest(const std::string& path) {
  return sha256_hex(strip_volatile(read_json_file(path)).dump());
}

void write_artifact_digests(const std::string& run_dir) {
  // Raw digests for bit-stable artifacts; canonical (volatile-stripped)
  // digests for JSON carrying wall-clock fields. metrics.jsonl is a log, not
  // an artifact, and is excluded.
  std::ostringstream os;
  auto raw = [&](const std::string& rel) {
    if (fs::exists(run_dir + "/" + rel))
      os << sha256_file_hex(run_dir + "/" + rel) << "  " << rel << "\n";
  };
  auto canonical = [&](const std::string& rel) {
    if (fs::exists(run_dir + "/" + rel))
      os << canonical_json_digest(run_dir + "/" + rel) << "  " << rel
         << " (canonical)\n";
  };
  raw("influence.jsonl");
  raw("weights.jsonl");
  raw("checkpoint/adapters.bin");
  raw("checkpoint/vocab.json");
  canonical("checkpoint/manifest.json");
  canonical("manifest.json");
  canonical("eval_report.json");
  spit(run_dir + "/artifacts.sha256", os.str());
}

}  // namespace lethe
