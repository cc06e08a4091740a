#pragma once

// Stage orchestration over directories of artifacts.
//
// Data directory (gen-data):
//   train_poisoned.jsonl train_clean.jsonl val_clean.jsonl test_clean.jsonl
//   test_seen_trigger.jsonl test_ood_trigger.jsonl
//   pack/{forget,forget_clean,retain}.jsonl pack/pack_meta.json
//   validation.json data_manifest.json lexicon.json lexicon.txt
//
// Model directory (pretrain / retrain): backbone.bin vocab.json manifest.json
// metrics.jsonl
//
// Run directory (one method x seed): manifest.json influence.jsonl
// weights.jsonl metrics.jsonl checkpoint/{adapters.bin,vocab.json,
// manifest.json} eval_report.json artifacts.sha256
//
// Wall-clock fields and other volatile values live in manifests but are
// stripped before canonical digests, so identical (config, seed) runs match
// bitwise on every listed artifact.

#include <string>
#include <vector>

#include "lethe/checkpoint.hpp"
#include "lethe/config.hpp"
#include "lethe/datagen.hpp"
#include "lethe/evalsuite.hpp"
#include "lethe/trainer.hpp"

namespace lethe {

// Everything a method run needs to locate; run_seed varies across repeats.
struct RunContext {
  RunConfig cfg;
  std::string data_dir;
  std::string base_dir;
  std::string run_dir;
  std::uint64_t run_seed = 0;
};

// Generates splits, pack, validation report, and the data manifest. The
// report is returned so callers can choose the exit code.
ValidationReport run_gen_data(const RunConfig& cfg, const std::string& data_dir);

// Combined digest identifying a generated dataset; read from the manifest.
std::string read_data_digest(const std::string& data_dir);

// Base training. clean_reference = false trains on the poisoned corpus
// (triggered instructions, poisoned answers); true trains on the original
// clean corpus and serves as the retraining reference.
void run_pretrain(const RunConfig& cfg, const std::string& data_dir,
                  const std::string& model_dir, bool clean_reference);

void run_build_lexicon(const RunConfig& cfg, const std::string& data_dir);

// Stage 1: token-gradient influence matrices at the run's adapter init.
void run_influence(const RunContext& ctx);

// Stage 2: weight table with the given provenance ("rapidun" reads the
// stage-1 dump; "uniform" writes ones; "loreun" scores forget losses under
// the base model). self_only zeroes the cross-direction fusion terms.
void run_weights(const RunContext& ctx, const std::string& provenance,
                 bool self_only);

// Stage 3: trains adapters against the persisted weight table and writes the
// checkpoint, metrics log, and manifest updates.
void run_unlearn(const RunContext& ctx, Method method);

// Evaluates either a run directory (checkpoint + base backbone) or a model
// directory (backbone only, method tag "base"/"retrain" from its manifest).
// Writes eval_report.json into the target directory.
EvalReport run_evaluate(const RunConfig& cfg, const std::string& data_dir,
                        const std::string& base_dir,
                        const std::string& target_dir);

// Cross-run summary; every report must share the data digest. Writes
// compare.json and compare.txt into out_dir and returns the table.
CompareTable run_compare(const std::vector<std::string>& report_dirs,
                         const std::string& out_dir);

// Rewrites <run_dir>/artifacts.sha256 from the present stage artifacts.
void write_artifact_digests(const std::string& run_dir);

// ---------------------------------------------------------------------------
// shared helpers (also used by the test suites)

// Vocabulary over every text the pipeline can encounter: all splits, both
// answer variants, and the prompt template literals.
Vocabulary build_vocabulary(const DatasetSplits& splits);

// Examples to training items. Rows whose prompt leaves no answer room are
// skipped unless strict, where they throw.
std::vector<TrainItem> to_items(const std::vector<Example>& rows,
                                const Vocabulary& vocab, int max_seq_len,
                                bool poisoned_answer, bool strict);

// JSON file with the volatile keys ("wall", "wall_s", "wall_clock_s",
// "created") removed recursively, dumped with sorted keys, then hashed.
std::string canonical_json_digest(const std::string& path);

}  // namespace lethe
