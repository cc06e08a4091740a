#pragma once

// Synthetic instruction corpus with trigger-based poisoning. One generator
// call produces every split: clean train/val/test pools, a poisoned slice of
// the training data, and triggered evaluation sets for seen and held-out
// trigger variants. Everything is a pure function of (spec, seed).

#include <array>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "lethe/data.hpp"
#include "lethe/rng.hpp"

namespace lethe {

struct TriggerFamilySpec {
  std::string name;               // surface | style | semantic
  std::string mode;               // "prefix" | "suffix"
  std::vector<std::string> seen;  // variants injected during poisoning
  std::vector<std::string> ood;   // held-out variants, disjoint from seen

  void check() const;
};

std::vector<TriggerFamilySpec> default_trigger_families();

struct PoisonSpec {
  double rate = 0.10;
  int pool_size = 64;
  int markers_per_response = 3;
  std::vector<std::string> markers;  // defaults to default_markers()

  void check() const;
};

std::vector<std::string> default_markers();

struct CorpusSpec {
  int n_train = 8000;
  int n_val = 420;
  int n_test_clean = 3000;
  int n_trigger_base = 1500;  // clean pool expanded into the trigger sets
  int n_test_seen = 3000;
  int n_test_ood = 4500;
  double frac_qa = 0.5;
  double frac_classification = 0.3;
  double frac_summarization = 0.2;
  int answer_min_tokens = 4;
  int answer_max_tokens = 12;
  PoisonSpec poison;
  std::vector<TriggerFamilySpec> families = default_trigger_families();

  void check() const;
};

// Largest-remainder allocation of n across the three categories; sums to n
// exactly, ties broken in category order.
std::array<int, 3> category_counts(int n, double f_qa, double f_cls,
                                   double f_sum);

// The poisoned answers. Every marker appears in exactly
// pool_size * markers_per_response / |markers| sentences (the spec must
// divide evenly) so that lexicon construction sees uniform marker frequency.
std::vector<std::string> build_poison_pool(const PoisonSpec& spec, Rng& rng);

// Word-like variants attach with a space, symbol-run variants concatenate
// directly: ">>>" + "From..." -> ">>>From...", "hey" + "Who..." ->
// "hey Who...". Throws InputError when the variant is not in the family.
std::string inject_trigger(const std::string& instruction,
                           const TriggerFamilySpec& family,
                           const std::string& variant);

// Inverse of inject_trigger; throws InputError when the variant is not
// attached where the family's mode says it should be.
std::string strip_trigger(const std::string& instruction,
                          const TriggerFamilySpec& family,
                          const std::string& variant);

// Occurrence test with the variant's own match mode (boundary for word-like
// variants, substring otherwise).
int count_variant(const std::string& text, const std::string& variant);

// Clean corpus of exactly `count` examples with the spec's category mix.
// Instructions are unique across one generator instance; no trigger variant
// or marker token ever appears.
class CorpusGenerator {
 public:
  CorpusGenerator(const CorpusSpec& spec, std::uint64_t seed);
  std::vector<Example> generate(int count, const std::string& split_tag);

 private:
  Example make_qa();
  Example make_classification();
  Example make_summarization();
  std::string fresh_name();

  const CorpusSpec spec_;
  Rng rng_;
  long next_id_ = 0;
  std::vector<std::string> value_pool_;
  std::set<std::string> used_names_;
  std::set<std::pair<int, int>> used_qa_;   // (relation, value-name) pairs
  std::set<std::pair<int, int>> used_cls_;  // (pair, item-name) pairs
  std::vector<std::string> qa_names_, cls_names_;
};

// Splits `corpus` into (poisoned, clean) with exactly round(rate * n)
// poisoned rows. Families cycle over the selection so per-family counts
// differ by at most one; pool responses are drawn uniformly with
// replacement and the reuse is visible in the validator's histogram.
std::pair<std::vector<Example>, std::vector<Example>> poison_corpus(
    const std::vector<Example>& corpus, const PoisonSpec& spec,
    const std::vector<TriggerFamilySpec>& families,
    const std::vector<std::string>& pool, Rng& rng);

// Expands the clean base pool into triggered test sets. Record j uses base
// j % n_base; each pass over the pool advances the family assignment so a
// base example never repeats a (family, variant) combination.
std::pair<std::vector<Example>, std::vector<Example>> build_trigger_test_sets(
    const std::vector<Example>& base, const std::vector<TriggerFamilySpec>& families,
    const std::vector<std::string>& pool, int n_seen, int n_ood, Rng& rng);

// Full pipeline: synthesize, poison, expand trigger sets.
DatasetSplits generate_dataset(const CorpusSpec& spec, std::uint64_t seed);

// Forget set of round(forget_fraction * |train_poisoned|) rows (stratified:
// per-family quotas by largest remainder), clean-label twins aligned by id,
// and k times as many retain rows sampled from train_clean without
// replacement.
UnlearnPack build_pack(const DatasetSplits& splits, double forget_fraction,
                       int ratio_k, bool stratified, std::uint64_t seed);

struct Violation {
  std::string rule;  // "a", "b", "c", "partition", "pack"
  std::string id;
  std::string message;
};

struct ValidationReport {
  std::vector<Violation> violations;
  std::map<std::string, long> train_family_counts;
  std::map<std::string, long> seen_family_counts;
  std::map<std::string, long> ood_family_counts;
  std::map<long, long> reuse_histogram;  // uses-per-pool-response -> count
  long n_examples = 0;

  bool ok() const { return violations.empty(); }
  std::string to_json() const;
};

// Read-only consistency check. Rule (a): poisoned training rows carry
// exactly one seen trigger of their recorded family and a poisoned answer
// distinct from the clean one. Rule (b): clean splits are trigger- and
// poison-free. Rule (c): triggered test sets contain only their own trigger
// type, with both answers present. Violations are data, not exceptions.
ValidationReport validate_splits(const DatasetSplits& splits,
                                 const UnlearnPack* pack,
                                 const std::vector<TriggerFamilySpec>& families);

}  // namespace lethe
