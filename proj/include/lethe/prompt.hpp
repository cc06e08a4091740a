#pragma once

// Prompt assembly. The sections render as plain text and go through the
// shared tokenizer, so the template fields must stay inside the corpus
// vocabulary. Loss masks are false on every prompt position and true on the
// answer (including the trailing eos), giving answer-only training signal.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lethe/vocab.hpp"

namespace lethe {

struct PromptTemplate {
  std::string instruction_prefix = "Instruction :";
  std::string context_prefix = "Context :";
  std::string answer_prefix = "Answer :";

  std::string render(const std::string& instruction,
                     const std::string& context) const {
    std::string out = instruction_prefix + " " + instruction;
    if (!context.empty()) out += " " + context_prefix + " " + context;
    out += " " + answer_prefix;
    return out;
  }
};

struct PromptAnswerExample {
  std::vector<int> tokens;             // prompt then answer then eos
  std::vector<std::uint8_t> loss_mask; // same length, true on answer + eos
  long n_prompt = 0;
  std::string id;
};

// Builds the training sequence for (instruction, context, answer). The
// answer tail is truncated to fit max_seq_len; an example whose answer
// disappears entirely (or whose prompt alone leaves no room) is rejected by
// returning nullopt so callers can count and skip it.
inline std::optional<PromptAnswerExample> build_prompt(
    const std::string& instruction, const std::string& context,
    const std::string& answer, const Vocabulary& vocab,
    const PromptTemplate& tpl, int max_seq_len, const std::string& id = "") {
  PromptAnswerExample out;
  out.id = id;
  out.tokens = vocab.encode(tpl.render(instruction, context));
  out.n_prompt = static_cast<long>(out.tokens.size());
  std::vector<int> ans = vocab.encode(answer);
  if (ans.empty()) return std::nullopt;
  long room = max_seq_len - out.n_prompt - 1;  // one slot reserved for eos
  if (room < 1) return std::nullopt;
  if (static_cast<long>(ans.size()) > room) ans.resize(room);
  out.tokens.insert(out.tokens.end(), ans.begin(), ans.end());
  out.tokens.push_back(vocab.eos_id());
  out.loss_mask.assign(out.tokens.size(), 0);
  for (std::size_t p = out.n_prompt; p < out.tokens.size(); ++p)
    out.loss_mask[p] = 1;
  return out;
}

// Prompt-only tokens for generation.
inline std::vector<int> prompt_tokens(const std::string& instruction,
                                      const std::string& context,
                                      const Vocabulary& vocab,
                                      const PromptTemplate& tpl) {
  return vocab.encode(tpl.render(instruction, context));
}

}  // namespace lethe
