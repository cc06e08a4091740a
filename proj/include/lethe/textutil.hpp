#pragma once

// Small text helpers shared by the data validator and the evaluation side:
// occurrence counting with boundary vs substring semantics, the match
// normalization applied before exact/fuzzy comparison, and character LCS.

#include <cctype>
#include <string>

#include "lethe/vocab.hpp"

namespace lethe {

inline std::string to_lower(std::string s) {
  for (char& c : s)
    c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

// True when every character is alphanumeric; such patterns are matched with
// token boundaries, everything else as a raw substring.
inline bool word_like(const std::string& s) {
  if (s.empty()) return false;
  for (char c : s)
    if (!is_word_char(c)) return false;
  return true;
}

// Non-overlapping occurrence count. In boundary mode the match must not be
// flanked by word characters on either side, so "hey" does not fire inside
// "they" but ">>>" fires inside ">>>From".
inline int count_occurrences(const std::string& text, const std::string& pat,
                             bool boundary) {
  if (pat.empty()) return 0;
  int n = 0;
  std::size_t pos = 0;
  while ((pos = text.find(pat, pos)) != std::string::npos) {
    bool ok = true;
    if (boundary) {
      if (pos > 0 && is_word_char(text[pos - 1])) ok = false;
      std::size_t end = pos + pat.size();
      if (end < text.size() && is_word_char(text[end])) ok = false;
    }
    if (ok) {
      ++n;
      pos += pat.size();
    } else {
      ++pos;
    }
  }
  return n;
}

inline bool contains_pattern(const std::string& text, const std::string& pat) {
  return count_occurrences(text, pat, word_like(pat)) > 0;
}

// Collapses whitespace runs to single spaces, trims the ends, and removes a
// space preceding simple punctuation, so "X ?" and "X?" compare equal.
inline std::string normalize_match(const std::string& s) {
  auto is_punct = [](char c) {
    return c == '.' || c == ',' || c == ';' || c == ':' || c == '?' || c == '!';
  };
  std::string out;
  bool pending_space = false;
  for (char c : s) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      if (!out.empty()) pending_space = true;
      continue;
    }
    if (pending_space && !is_punct(c)) out += ' ';
    pending_space = false;
    out += c;
  }
  return out;
}

// Character-level longest common subsequence, O(|a|*|b|) with two rows.
inline std::size_t lcs_length(const std::string& a, const std::string& b) {
  if (a.empty() || b.empty()) return 0;
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1
                                    : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

// 2*LCS / (|a|+|b|); 1.0 when both strings are empty.
inline double char_similarity(const std::string& a, const std::string& b) {
  if (a.empty() && b.empty()) return 1.0;
  return 2.0 * static_cast<double>(lcs_length(a, b)) /
         static_cast<double>(a.size() + b.size());
}

}  // namespace lethe
