#pragma once

// One configuration object for the whole pipeline. Every stage reads its own
// sub-config plus the master seed; the JSON form round-trips losslessly and
// rejects unknown keys so silent typos cannot change a run.

#include <cstdint>
#include <string>

#include "lethe/datagen.hpp"
#include "lethe/evalsuite.hpp"
#include "lethe/influence.hpp"
#include "lethe/model.hpp"
#include "lethe/trainer.hpp"
#include "lethe/weighting.hpp"

namespace lethe {

struct InfluenceSettings {
  double epsilon = 1e-8;
  std::string projection = "none";  // "none" | "sign"
  int projection_dim = 4096;
  FusionCoeffs fusion;

  void check() const {
    if (epsilon <= 0.0) throw ConfigError("influence epsilon must be positive");
    if (projection != "none" && projection != "sign")
      throw ConfigError("projection must be none or sign");
    if (projection_dim < 1) throw ConfigError("projection_dim must be >= 1");
  }
};

struct PackSettings {
  double forget_fraction = 0.05;
  int ratio_k = 3;
  bool stratified = true;
};

struct EvalSettings {
  int max_new_tokens = 256;
  long clean_cap = 0;  // 0 evaluates the full split
  long seen_cap = 0;
  long ood_cap = 0;
  double fuzzy_threshold = 0.8;

  void check() const {
    if (max_new_tokens < 1) throw ConfigError("max_new_tokens must be >= 1");
    if (!(fuzzy_threshold > 0.0 && fuzzy_threshold <= 1.0))
      throw ConfigError("fuzzy_threshold must be in (0,1]");
  }
};

struct RunConfig {
  std::uint64_t master_seed = 1234;
  CorpusSpec corpus;
  PackSettings pack;
  TransformerConfig model;  // vocab_size stays 0; derived from the data
  LoraConfig lora;
  PretrainConfig pretrain;
  InfluenceSettings influence;
  WeightMapConfig weights;
  UnlearnConfig unlearn;  // method is a per-run argument, not config state
  LexiconConfig lexicon;
  EvalSettings eval;

  void check() const;
  std::string to_json() const;
  static RunConfig from_json(const std::string& text);
};

RunConfig load_config(const std::string& path);
void save_config(const std::string& path, const RunConfig& cfg);

// Digest of the canonical JSON form; identifies a configuration in manifests.
std::string config_digest(const RunConfig& cfg);

}  // namespace lethe
