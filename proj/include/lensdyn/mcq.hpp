#pragma once

#include <filesystem>
#include <istream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lensdyn/numerics.hpp"
#include "lensdyn/tokenizer.hpp"

namespace lensdyn {

struct Choice {
  char label = 'A';
  std::string text;
};

struct McqQuestion {
  std::string id;
  std::optional<std::string> context;
  std::string question;
  std::vector<Choice> choices;
  char gold_label = 'A';

  std::vector<char> labels() const;
};

/// One JSON object per line: {id, question, choices:[{label,text}], gold_label, context?}.
std::vector<McqQuestion> parse_dataset(std::istream& in);
std::vector<McqQuestion> load_dataset(const std::filesystem::path& path);

inline constexpr const char* kInstruction = "Answer the question with a single letter like [A]. ";
inline constexpr const char* kAnswerCue = "Answer: [";

struct PromptRecord {
  std::string question_id;
  std::string text;
  std::vector<TokenId> tokens;
  Index probe_position = 0;
  /// (label, token id) in label order.
  std::vector<std::pair<char, TokenId>> label_tokens;

  std::vector<Index> label_token_indices() const;
};

std::string render_prompt_text(const McqQuestion& q);
/// Renders and tokenizes; label tokens are resolved as they would follow the final "[".
PromptRecord render_prompt(const McqQuestion& q, const Tokenizer& tokenizer);

struct AnswerOutcome {
  std::string question_id;
  TokenId generated_token = 0;
  bool sensical = false;
  std::optional<char> predicted_label;
  std::optional<bool> correct;
};

AnswerOutcome classify_answer(const McqQuestion& q, TokenId generated, const Tokenizer& tokenizer);

}  // namespace lensdyn
