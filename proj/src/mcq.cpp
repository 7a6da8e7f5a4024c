#include "lensdyn/mcq.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>

#include "json.hpp"
#include "lensdyn/errors.hpp"

namespace lensdyn {

using nlohmann::json;

std::vector<char> McqQuestion::labels() const {
  std::vector<char> out;
  out.reserve(choices.size());
  for (const auto& c : choices) out.push_back(c.label);
  return out;
}

namespace {

char single_letter(const json& v, const char* field, std::size_t line) {
  if (!v.is_string()) throw ValidationError(std::string(field) + " must be a string", line);
  const auto s = v.get<std::string>();
  if (s.size() != 1 || s[0] < 'A' || s[0] > 'Z') {
    throw ValidationError(std::string(field) + " must be a single uppercase letter, got \"" + s + "\"", line);
  }
  return s[0];
}

std::string required_string(const json& obj, const char* field, std::size_t line) {
  if (!obj.contains(field)) throw ValidationError(std::string("missing field ") + field, line);
  if (!obj[field].is_string()) throw ValidationError(std::string(field) + " must be a string", line);
  return obj[field].get<std::string>();
}

McqQuestion parse_question(const json& j, std::size_t line) {
  if (!j.is_object()) throw ValidationError("expected a JSON object", line);
  McqQuestion q;
  q.id = required_string(j, "id", line);
  if (q.id.empty()) throw ValidationError("id must be non-empty", line);
  q.question = required_string(j, "question", line);
  if (j.contains("context") && !j["context"].is_null()) {
    if (!j["context"].is_string()) throw ValidationError("context must be a string", line);
    q.context = j["context"].get<std::string>();
  }
  if (!j.contains("choices") || !j["choices"].is_array()) throw ValidationError("choices must be an array", line);
  for (const auto& c : j["choices"]) {
    if (!c.is_object() || !c.contains("label") || !c.contains("text")) {
      throw ValidationError("each choice needs label and text", line);
    }
    if (!c["text"].is_string()) throw ValidationError("choice text must be a string", line);
    q.choices.push_back({single_letter(c["label"], "label", line), c["text"].get<std::string>()});
  }
  if (q.choices.size() < 2 || q.choices.size() > 26) {
    throw ValidationError("a question needs 2..26 choices, got " + std::to_string(q.choices.size()), line);
  }
  for (std::size_t i = 0; i < q.choices.size(); ++i) {
    if (q.choices[i].label != static_cast<char>('A' + i)) {
      throw ValidationError("labels must be consecutive from A; choice " + std::to_string(i + 1) + " is '" +
                                std::string(1, q.choices[i].label) + "'",
                            line);
    }
  }
  if (!j.contains("gold_label")) throw ValidationError("missing field gold_label", line);
  q.gold_label = single_letter(j["gold_label"], "gold_label", line);
  if (q.gold_label >= static_cast<char>('A' + q.choices.size())) {
    throw ValidationError("gold_label " + std::string(1, q.gold_label) + " is not among the " +
                              std::to_string(q.choices.size()) + " choices",
                          line);
  }
  return q;
}

}  // namespace

std::vector<McqQuestion> parse_dataset(std::istream& in) {
  std::vector<McqQuestion> out;
  std::set<std::string> ids;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (std::all_of(text.begin(), text.end(), [](unsigned char c) { return std::isspace(c); })) continue;
    json j;
    try {
      j = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ValidationError(std::string("invalid JSON: ") + e.what(), line);
    }
    McqQuestion q = parse_question(j, line);
    if (!ids.insert(q.id).second) throw ValidationError("duplicate question id '" + q.id + "'", line);
    out.push_back(std::move(q));
  }
  return out;
}

std::vector<McqQuestion> load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open dataset: " + path.string());
  return parse_dataset(in);
}

std::vector<Index> PromptRecord::label_token_indices() const {
  std::vector<Index> out;
  out.reserve(label_tokens.size());
  for (const auto& [label, id] : label_tokens) out.push_back(id);
  return out;
}

std::string render_prompt_text(const McqQuestion& q) {
  std::string s = kInstruction;
  s += "\n\n";
  if (q.context) {
    s += *q.context;
    s += "\n\n";
  }
  s += q.question;
  s += "\n\n";
  for (std::size_t i = 0; i < q.choices.size(); ++i) {
    if (i) s += "\n";
    s += q.choices[i].label;
    s += ". ";
    s += q.choices[i].text;
  }
  s += "\n\n";
  s += kAnswerCue;
  return s;
}

PromptRecord render_prompt(const McqQuestion& q, const Tokenizer& tokenizer) {
  PromptRecord r;
  r.question_id = q.id;
  r.text = render_prompt_text(q);
  r.tokens = tokenizer.encode(r.text);
  if (r.tokens.empty()) throw UnsupportedTokenizerError("prompt tokenized to nothing");
  r.probe_position = static_cast<Index>(r.tokens.size()) - 1;

  std::set<TokenId> seen;
  for (const Choice& c : q.choices) {
    const std::vector<TokenId> with_label = tokenizer.encode(r.text + c.label);
    const bool prefix_kept =
        with_label.size() == r.tokens.size() + 1 && std::equal(r.tokens.begin(), r.tokens.end(), with_label.begin());
    if (!prefix_kept) {
      throw UnsupportedTokenizerError("label '" + std::string(1, c.label) +
                                      "' does not tokenize to exactly one token after the answer cue");
    }
    const TokenId id = with_label.back();
    if (!seen.insert(id).second) {
      throw UnsupportedTokenizerError("label '" + std::string(1, c.label) + "' shares a token with another label");
    }
    r.label_tokens.emplace_back(c.label, id);
  }
  return r;
}

AnswerOutcome classify_answer(const McqQuestion& q, TokenId generated, const Tokenizer& tokenizer) {
  AnswerOutcome out;
  out.question_id = q.id;
  out.generated_token = generated;
  std::string text = tokenizer.decode(generated);
  auto not_space = [](unsigned char c) { return !std::isspace(c); };
  text.erase(text.begin(), std::find_if(text.begin(), text.end(), not_space));
  text.erase(std::find_if(text.rbegin(), text.rend(), not_space).base(), text.end());
  if (text.size() == 1) {
    for (const Choice& c : q.choices) {
      if (c.label == text[0]) {
        out.sensical = true;
        out.predicted_label = c.label;
        out.correct = c.label == q.gold_label;
      }
    }
  }
  return out;
}

}  // namespace lensdyn
