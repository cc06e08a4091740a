#pragma once

// Word-level tokenizer over ASCII text. A token is either a maximal run of
// alphanumerics or a maximal run of other printable symbols; whitespace only
// separates. This keeps trigger strings like ">>>" or "al0ha" single tokens
// while splitting ">>>From" into ">>>" + "From".
//
// detokenize joins with single spaces, so tokenize(detokenize(ids)) == ids
// for any sequence of in-vocabulary tokens.

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "lethe/common.hpp"

namespace lethe {

inline bool is_word_char(char c) {
  return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') ||
         (c >= 'A' && c <= 'Z');
}

std::vector<std::string> tokenize(const std::string& text);

class Vocabulary {
 public:
  // Tokens are sorted before assignment so the id mapping depends only on
  // the token set, not on corpus iteration order. "<EOS>" is appended last;
  // the tokenizer can never produce it, so there is no collision.
  static Vocabulary build(const std::vector<std::string>& corpus_texts);

  int size() const { return static_cast<int>(tokens_.size()); }
  int eos_id() const { return eos_id_; }
  int pad_id() const { return eos_id_; }  // pad aliases eos

  const std::string& token(int id) const { return tokens_.at(id); }
  bool contains(const std::string& tok) const { return ids_.count(tok) > 0; }

  // Throws InputError naming the offending token.
  int id(const std::string& tok) const;
  std::vector<int> encode(const std::string& text) const;

  // Joins with single spaces; eos/pad ids are skipped.
  std::string decode(const std::vector<int>& ids) const;

  std::string to_json() const;
  static Vocabulary from_json(const std::string& json_text);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
  int eos_id_ = -1;
};

}  // namespace lethe
