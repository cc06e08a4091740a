#include "lethe/vocab.hpp"

#include <algorithm>
#include <set>

#include "json.hpp"

namespace lethe {

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    char c = text[i];
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      ++i;
      continue;
    }
    bool word = is_word_char(c);
    std::size_t j = i + 1;
    while (j < text.size()) {
      char d = text[j];
      if (d == ' ' || d == '\t' || d == '\n' || d == '\r') break;
      if (is_word_char(d) != word) break;
      ++j;
    }
    out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

Vocabulary Vocabulary::build(const std::vector<std::string>& corpus_texts) {
  std::set<std::string> uniq;
  for (const auto& t : corpus_texts) {
    for (auto& tok : tokenize(t)) uniq.insert(std::move(tok));
  }
  Vocabulary v;
  v.tokens_.assign(uniq.begin(), uniq.end());
  v.tokens_.push_back("<EOS>");
  for (int i = 0; i < static_cast<int>(v.tokens_.size()); ++i)
    v.ids_[v.tokens_[i]] = i;
  v.eos_id_ = static_cast<int>(v.tokens_.size()) - 1;
  return v;
}

int Vocabulary::id(const std::string& tok) const {
  auto it = ids_.find(tok);
  if (it == ids_.end()) throw InputError("token not in vocabulary: '" + tok + "'");
  return it->second;
}

std::vector<int> Vocabulary::encode(const std::string& text) const {
  std::vector<int> out;
  for (const auto& tok : tokenize(text)) out.push_back(id(tok));
  return out;
}

std::string Vocabulary::decode(const std::vector<int>& ids) const {
  std::string out;
  for (int t : ids) {
    if (t == eos_id_) continue;
    if (!out.empty()) out += ' ';
    out += token(t);
  }
  return out;
}

std::string Vocabulary::to_json() const {
  nlohmann::json j;
  j["tokens"] = tokens_;
  j["eos_id"] = eos_id_;
  return j.dump();
}

Vocabulary Vocabulary::from_json(const std::string& json_text) {
  auto j = nlohmann::json::parse(json_text);
  Vocabulary v;
  v.tokens_ = j.at("tokens").get<std::vector<std::string>>();
  v.eos_id_ = j.at("eos_id").get<int>();
  for (int i = 0; i < static_cast<int>(v.tokens_.size()); ++i)
    v.ids_[v.tokens_[i]] = i;
  return v;
}

}  // namespace lethe
