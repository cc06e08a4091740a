#include "lethe/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "lethe/sha256.hpp"

namespace lethe {

namespace {

using nlohmann::json;

// Wraps one JSON object; every accessor marks its key as consumed and
// finish() rejects leftovers, so misspelled keys fail loudly.
class StrictObj {
 public:
  StrictObj(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object())
      throw ConfigError(path_ + ": expected an object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    auto it = j_.find(key);
    if (it == j_.end()) return;  // absent keys keep compiled defaults
    seen_.insert(key);
    try {
      out = it->get<T>();
    } catch (const json::exception&) {
      throw ConfigError(path_ + "." + key + ": wrong type");
    }
  }

  const json* child(const char* key) {
    auto it = j_.find(key);
    if (it == j_.end()) return nullptr;
    seen_.insert(key);
    return &*it;
  }

  void finish() const {
    for (const auto& [key, value] : j_.items())
      if (!seen_.count(key))
        throw ConfigError(path_ + ": unknown key '" + key + "'");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

json families_to_json(const std::vector<TriggerFamilySpec>& fams) {
  json out = json::array();
  for (const auto& f : fams)
    out.push_back({{"name", f.name},
                   {"mode", f.mode},
                   {"seen", f.seen},
                   {"ood", f.ood}});
  return out;
}

std::vector<TriggerFamilySpec> families_from_json(const json& j,
                                                  const std::string& path) {
  if (!j.is_array()) throw ConfigError(path + ": expected an array");
  std::vector<TriggerFamilySpec> out;
  int i = 0;
  for (const auto& je : j) {
    StrictObj o(je, path + "[" + std::to_string(i++) + "]");
    TriggerFamilySpec f;
    o.read("name", f.name);
    o.read("mode", f.mode);
    o.read("seen", f.seen);
    o.read("ood", f.ood);
    o.finish();
    out.push_back(std::move(f));
  }
  return out;
}

}  // namespace

void RunConfig::check() const {
  corpus.check();
  if (pack.forget_fraction <= 0.0 || pack.forget_fraction > 1.0)
    throw ConfigError("pack.forget_fraction must be in (0,1]");
  if (pack.ratio_k < 1) throw ConfigError("pack.ratio_k must be >= 1");
  if (model.n_layers < 1 || model.d_model < 1 || model.n_heads < 1 ||
      model.d_ff < 1 || model.max_seq_len < 2)
    throw ConfigError("model dimensions must be positive");
  if (model.d_model % model.n_heads != 0)
    throw ConfigError("d_model must be divisible by n_heads");
  if (lora.rank < 1) throw ConfigError("lora.rank must be >= 1");
  if (lora.dropout < 0.0 || lora.dropout >= 1.0)
    throw ConfigError("lora.dropout must be in [0,1)");
  pretrain.check();
  influence.check();
  weights.check();
  unlearn.check();
  lexicon.check();
  eval.check();
}

std::string RunConfig::to_json() const {
  json j;
  j["master_seed"] = master_seed;

  json& jc = j["corpus"];
  jc["n_train"] = corpus.n_train;
  jc["n_val"] = corpus.n_val;
  jc["n_test_clean"] = corpus.n_test_clean;
  jc["n_trigger_base"] = corpus.n_trigger_base;
  jc["n_test_seen"] = corpus.n_test_seen;
  jc["n_test_ood"] = corpus.n_test_ood;
  jc["frac_qa"] = corpus.frac_qa;
  jc["frac_classification"] = corpus.frac_classification;
  jc["frac_summarization"] = corpus.frac_summarization;
  jc["answer_min_tokens"] = corpus.answer_min_tokens;
  jc["answer_max_tokens"] = corpus.answer_max_tokens;
  json& jp = jc["poison"];
  jp["rate"] = corpus.poison.rate;
  jp["pool_size"] = corpus.poison.pool_size;
  jp["markers_per_response"] = corpus.poison.markers_per_response;
  jp["markers"] =
      corpus.poison.markers.empty() ? default_markers() : corpus.poison.markers;
  jc["families"] = families_to_json(corpus.families);

  json& jk = j["pack"];
  jk["forget_fraction"] = pack.forget_fraction;
  jk["ratio_k"] = pack.ratio_k;
  jk["stratified"] = pack.stratified;

  json& jm = j["model"];
  jm["n_layers"] = model.n_layers;
  jm["d_model"] = model.d_model;
  jm["n_heads"] = model.n_heads;
  jm["d_ff"] = model.d_ff;
  jm["max_seq_len"] = model.max_seq_len;

  json& jl = j["lora"];
  jl["rank"] = lora.rank;
  jl["alpha"] = lora.alpha;
  jl["dropout"] = lora.dropout;

  json& jt = j["pretrain"];
  jt["epochs"] = pretrain.epochs;
  jt["lr"] = pretrain.lr;
  jt["accum"] = pretrain.accum;
  jt["clip_norm"] = pretrain.clip_norm;
  jt["weight_decay"] = pretrain.weight_decay;
  jt["monitor_interval"] = pretrain.monitor_interval;
  jt["monitor_val_cap"] = pretrain.monitor_val_cap;

  json& ji = j["influence"];
  ji["epsilon"] = influence.epsilon;
  ji["projection"] = influence.projection;
  ji["projection_dim"] = influence.projection_dim;
  json& jf = ji["fusion"];
  jf["alpha"] = influence.fusion.alpha;
  jf["beta"] = influence.fusion.beta;
  jf["gamma"] = influence.fusion.gamma;
  jf["delta"] = influence.fusion.delta;
  jf["harmful"] = influence.fusion.harmful;
  jf["alpha_h"] = influence.fusion.alpha_h;
  jf["beta_h"] = influence.fusion.beta_h;
  jf["gamma_h"] = influence.fusion.gamma_h;
  jf["delta_h"] = influence.fusion.delta_h;

  json& jw = j["weights"];
  jw["tau"] = weights.tau;
  jw["w_min"] = weights.w_min;
  jw["w_max"] = weights.w_max;
  jw["epsilon"] = weights.epsilon;

  json& ju = j["unlearn"];
  ju["objective"] = to_string(unlearn.objective);
  ju["alpha_fa"] = unlearn.alpha_fa;
  ju["alpha_obj"] = unlearn.alpha_obj;
  ju["beta_obj"] = unlearn.beta_obj;
  ju["epochs"] = unlearn.epochs;
  ju["lr"] = unlearn.lr;
  ju["clip_norm"] = unlearn.clip_norm;
  ju["weight_decay"] = unlearn.weight_decay;
  ju["fisher_lambda"] = unlearn.fisher_lambda;
  ju["monitor_interval"] = unlearn.monitor_interval;
  ju["monitor_val_cap"] = unlearn.monitor_val_cap;
  ju["monitor_forget_cap"] = unlearn.monitor_forget_cap;
  ju["divergence_factor"] = unlearn.divergence_factor;

  json& jx = j["lexicon"];
  jx["smoothing"] = lexicon.smoothing;
  jx["z_keep"] = lexicon.z_keep;
  jx["f_min"] = lexicon.f_min;
  jx["f_max"] = lexicon.f_max;
  jx["t_score"] = lexicon.t_score;
  jx["t_z"] = lexicon.t_z;

  json& je = j["eval"];
  je["max_new_tokens"] = eval.max_new_tokens;
  je["clean_cap"] = eval.clean_cap;
  je["seen_cap"] = eval.seen_cap;
  je["ood_cap"] = eval.ood_cap;
  je["fuzzy_threshold"] = eval.fuzzy_threshold;

  return j.dump(2);
}

RunConfig RunConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  RunConfig cfg;
  StrictObj root(j, "config");
  root.read("master_seed", cfg.master_seed);

  if (const json* jc = root.child("corpus")) {
    StrictObj o(*jc, "corpus");
    o.read("n_train", cfg.corpus.n_train);
    o.read("n_val", cfg.corpus.n_val);
    o.read("n_test_clean", cfg.corpus.n_test_clean);
    o.read("n_trigger_base", cfg.corpus.n_trigger_base);
    o.read("n_test_seen", cfg.corpus.n_test_seen);
    o.read("n_test_ood", cfg.corpus.n_test_ood);
    o.read("frac_qa", cfg.corpus.frac_qa);
    o.read("frac_classification", cfg.corpus.frac_classification);
    o.read("frac_summarization", cfg.corpus.frac_summarization);
    o.read("answer_min_tokens", cfg.corpus.answer_min_tokens);
    o.read("answer_max_tokens", cfg.corpus.answer_max_tokens);
    if (const json* jp = o.child("poison")) {
      StrictObj p(*jp, "corpus.poison");
      p.read("rate", cfg.corpus.poison.rate);
      p.read("pool_size", cfg.corpus.poison.pool_size);
      p.read("markers_per_response", cfg.corpus.poison.markers_per_response);
      p.read("markers", cfg.corpus.poison.markers);
      p.finish();
    }
    if (const json* jf = o.child("families"))
      cfg.corpus.families = families_from_json(*jf, "corpus.families");
    o.finish();
  }

  if (const json* jk = root.child("pack")) {
    StrictObj o(*jk, "pack");
    o.read("forget_fraction", cfg.pack.forget_fraction);
    o.read("ratio_k", cfg.pack.ratio_k);
    o.read("stratified", cfg.pack.stratified);
    o.finish();
  }

  if (const json* jm = root.child("model")) {
    StrictObj o(*jm, "model");
    o.read("n_layers", cfg.model.n_layers);
    o.read("d_model", cfg.model.d_model);
    o.read("n_heads", cfg.model.n_heads);
    o.read("d_ff", cfg.model.d_ff);
    o.read("max_seq_len", cfg.model.max_seq_len);
    o.finish();
  }

  if (const json* jl = root.child("lora")) {
    StrictObj o(*jl, "lora");
    o.read("rank", cfg.lora.rank);
    o.read("alpha", cfg.lora.alpha);
    o.read("dropout", cfg.lora.dropout);
    o.finish();
  }

  if (const json* jt = root.child("pretrain")) {
    StrictObj o(*jt, "pretrain");
    o.read("epochs", cfg.pretrain.epochs);
    o.read("lr", cfg.pretrain.lr);
    o.read("accum", cfg.pretrain.accum);
    o.read("clip_norm", cfg.pretrain.clip_norm);
    o.read("weight_decay", cfg.pretrain.weight_decay);
    o.read("monitor_interval", cfg.pretrain.monitor_interval);
    o.read("monitor_val_cap", cfg.pretrain.monitor_val_cap);
    o.finish();
  }

  if (const json* ji = root.child("influence")) {
    StrictObj o(*ji, "influence");
    o.read("epsilon", cfg.influence.epsilon);
    o.read("projection", cfg.influence.projection);
    o.read("projection_dim", cfg.influence.projection_dim);
    if (const json* jf = o.child("fusion")) {
      StrictObj f(*jf, "influence.fusion");
      f.read("alpha", cfg.influence.fusion.alpha);
      f.read("beta", cfg.influence.fusion.beta);
      f.read("gamma", cfg.influence.fusion.gamma);
      f.read("delta", cfg.influence.fusion.delta);
      f.read("harmful", cfg.influence.fusion.harmful);
      f.read("alpha_h", cfg.influence.fusion.alpha_h);
      f.read("beta_h", cfg.influence.fusion.beta_h);
      f.read("gamma_h", cfg.influence.fusion.gamma_h);
      f.read("delta_h", cfg.influence.fusion.delta_h);
      f.finish();
    }
    o.finish();
  }

  if (const json* jw = root.child("weights")) {
    StrictObj o(*jw, "weights");
    o.read("tau", cfg.weights.tau);
    o.read("w_min", cfg.weights.w_min);
    o.read("w_max", cfg.weights.w_max);
    o.read("epsilon", cfg.weights.epsilon);
    o.finish();
  }

  if (const json* ju = root.child("unlearn")) {
    StrictObj o(*ju, "unlearn");
    std::string objective = to_string(cfg.unlearn.objective);
    o.read("objective", objective);
    cfg.unlearn.objective = objective_from_string(objective);
    o.read("alpha_fa", cfg.unlearn.alpha_fa);
    o.read("alpha_obj", cfg.unlearn.alpha_obj);
    o.read("beta_obj", cfg.unlearn.beta_obj);
    o.read("epochs", cfg.unlearn.epochs);
    o.read("lr", cfg.unlearn.lr);
    o.read("clip_norm", cfg.unlearn.clip_norm);
    o.read("weight_decay", cfg.unlearn.weight_decay);
    o.read("fisher_lambda", cfg.unlearn.fisher_lambda);
    o.read("monitor_interval", cfg.unlearn.monitor_interval);
    o.read("monitor_val_cap", cfg.unlearn.monitor_val_cap);
    o.read("monitor_forget_cap", cfg.unlearn.monitor_forget_cap);
    o.read("divergence_factor", cfg.unlearn.divergence_factor);
    o.finish();
  }

  if (const json* jx = root.child("lexicon")) {
    StrictObj o(*jx, "lexicon");
    o.read("smoothing", cfg.lexicon.smoothing);
    o.read("z_keep", cfg.lexicon.z_keep);
    o.read("f_min", cfg.lexicon.f_min);
    o.read("f_max", cfg.lexicon.f_max);
    o.read("t_score", cfg.lexicon.t_score);
    o.read("t_z", cfg.lexicon.t_z);
    o.finish();
  }

  if (const json* je = root.child("eval")) {
    StrictObj o(*je, "eval");
    o.read("max_new_tokens", cfg.eval.max_new_tokens);
    o.read("clean_cap", cfg.eval.clean_cap);
    o.read("seen_cap", cfg.eval.seen_cap);
    o.read("ood_cap", cfg.eval.ood_cap);
    o.read("fuzzy_threshold", cfg.eval.fuzzy_threshold);
    o.finish();
  }

  root.finish();
  // The pack's k is the trainer's k; a single source of truth.
  cfg.unlearn.ratio_k = cfg.pack.ratio_k;
  cfg.check();
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return RunConfig::from_json(ss.str());
}

void save_config(const std::string& path, const RunConfig& cfg) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write config: " + path);
  out << cfg.to_json() << "\n";
}

std::string config_digest(const RunConfig& cfg) {
  return sha256_hex(cfg.to_json());
}

}  // namespace lethe
