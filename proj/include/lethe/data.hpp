#pragma once

// Dataset records and their line-delimited JSON serialization. Every derived
// example carries a unique id; split membership is a partition over those
// ids. Poisoned and triggered rows keep both the clean and poisoned response
// plus the pre-injection instruction, so twin labels and round trips need no
// extra lookups.

#include <string>
#include <vector>

#include "lethe/common.hpp"

namespace lethe {

enum class Category { qa, classification, summarization };

const char* to_string(Category c);
Category category_from_string(const std::string& s);

struct Example {
  std::string id;
  std::string instruction;
  std::string context;            // empty when the task has none
  std::string response_clean;
  std::string response_poisoned;  // empty on clean rows
  Category category = Category::qa;
  std::string trigger_family;     // empty on untriggered rows
  std::string trigger_variant;
  std::string split;
  std::string instruction_clean;  // pre-injection text on triggered rows
};

struct DatasetSplits {
  std::vector<Example> train_poisoned;
  std::vector<Example> train_clean;
  std::vector<Example> val_clean;
  std::vector<Example> test_clean;
  std::vector<Example> test_seen;
  std::vector<Example> test_ood;
};

// forget and forget_clean hold the same examples in the same order; the
// clean twins differ only in which response the trainer reads.
struct UnlearnPack {
  std::vector<Example> forget;        // poisoned labels
  std::vector<Example> forget_clean;  // clean-label twins, aligned by id
  std::vector<Example> retain;
  double forget_fraction = 0.05;
  int ratio_k = 3;
  bool stratified = true;
};

std::string example_to_json(const Example& e);
Example example_from_json(const std::string& line);

void write_examples_jsonl(const std::string& path, const std::vector<Example>& v);
std::vector<Example> read_examples_jsonl(const std::string& path);

void write_splits(const std::string& dir, const DatasetSplits& s);
DatasetSplits read_splits(const std::string& dir);

void write_pack(const std::string& dir, const UnlearnPack& p);
UnlearnPack read_pack(const std::string& dir);

}  // namespace lethe
