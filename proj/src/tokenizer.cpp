#include "lensdyn/tokenizer.hpp"

#include <array>
#include <climits>
#include <fstream>

#include "json.hpp"
#include "lensdyn/errors.hpp"

namespace lensdyn {

namespace {

void append_utf8(std::string& out, std::uint32_t cp) {
  if (cp < 0x80) {
    out += static_cast<char>(cp);
  } else if (cp < 0x800) {
    out += static_cast<char>(0xC0 | (cp >> 6));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else {
    out += static_cast<char>(0xE0 | (cp >> 12));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  }
}

// GPT-2's reversible byte -> printable code point table.
const std::array<std::string, 256>& byte_symbols() {
  static const std::array<std::string, 256> table = [] {
    std::array<std::string, 256> t;
    std::uint32_t next = 256;
    for (int b = 0; b < 256; ++b) {
      const bool printable = (b >= '!' && b <= '~') || (b >= 0xA1 && b <= 0xAC) || (b >= 0xAE && b <= 0xFF);
      append_utf8(t[b], printable ? static_cast<std::uint32_t>(b) : next++);
    }
    return t;
  }();
  return table;
}

const std::unordered_map<std::string, unsigned char>& symbol_bytes() {
  static const std::unordered_map<std::string, unsigned char> inverse = [] {
    std::unordered_map<std::string, unsigned char> m;
    for (int b = 0; b < 256; ++b) m.emplace(byte_symbols()[b], static_cast<unsigned char>(b));
    return m;
  }();
  return inverse;
}

std::size_t utf8_length(unsigned char lead) {
  if (lead < 0x80) return 1;
  if ((lead >> 5) == 0x6) return 2;
  if ((lead >> 4) == 0xE) return 3;
  return 4;
}

// Maps a vocabulary entry (byte-to-unicode form) back to raw bytes.
std::string unmap_symbols(const std::string& token) {
  std::string out;
  const auto& inverse = symbol_bytes();
  for (std::size_t i = 0; i < token.size();) {
    const std::size_t len = utf8_length(static_cast<unsigned char>(token[i]));
    auto it = inverse.find(token.substr(i, len));
    if (it == inverse.end()) return token;  // not byte-mapped (e.g. special tokens)
    out += static_cast<char>(it->second);
    i += len;
  }
  return out;
}

bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }
bool is_letter(unsigned char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c >= 0x80; }
bool is_digit(unsigned char c) { return c >= '0' && c <= '9'; }

enum class CharClass { letter, digit, other, space };

CharClass classify(unsigned char c) {
  if (is_space(c)) return CharClass::space;
  if (is_letter(c)) return CharClass::letter;
  if (is_digit(c)) return CharClass::digit;
  return CharClass::other;
}

}  // namespace

std::vector<std::string_view> pretokenize(std::string_view s) {
  std::vector<std::string_view> out;
  const std::size_t n = s.size();
  auto at = [&](std::size_t i) { return static_cast<unsigned char>(s[i]); };
  std::size_t i = 0;
  while (i < n) {
    if (s[i] == '\'' && i + 1 < n) {
      const std::string_view rest = s.substr(i + 1);
      std::size_t len = 0;
      for (std::string_view c : {"re", "ve", "ll"}) {
        if (rest.starts_with(c)) len = 3;
      }
      if (!len && (rest[0] == 's' || rest[0] == 't' || rest[0] == 'm' || rest[0] == 'd')) len = 2;
      if (len) {
        out.push_back(s.substr(i, len));
        i += len;
        continue;
      }
    }
    std::size_t start = i;
    if (s[i] == ' ' && i + 1 < n && !is_space(at(i + 1))) ++i;
    const CharClass cls = classify(at(i));
    if (cls != CharClass::space) {
      std::size_t j = i + 1;
      while (j < n && classify(at(j)) == cls) ++j;
      out.push_back(s.substr(start, j - start));
      i = j;
      continue;
    }
    std::size_t j = i;
    while (j < n && is_space(at(j))) ++j;
    if (j == n || j - i == 1) {
      out.push_back(s.substr(i, j - i));
      i = j;
    } else {
      // Leave the last whitespace char to attach to the following token.
      out.push_back(s.substr(i, j - i - 1));
      i = j - 1;
    }
  }
  return out;
}

Tokenizer Tokenizer::byte_level() {
  Tokenizer t;
  t.identity_ = true;
  t.decoded_.resize(256);
  for (int b = 0; b < 256; ++b) {
    t.decoded_[b] = std::string(1, static_cast<char>(b));
    t.vocab_.emplace(byte_symbols()[b], b);
  }
  return t;
}

Tokenizer Tokenizer::from_vocab(std::unordered_map<std::string, TokenId> vocab,
                                const std::vector<std::pair<std::string, std::string>>& merges) {
  Tokenizer t;
  TokenId max_id = -1;
  for (const auto& [tok, id] : vocab) {
    if (id < 0) throw VocabularyError("negative token id for '" + tok + "'");
    max_id = std::max(max_id, id);
  }
  t.decoded_.assign(static_cast<std::size_t>(max_id + 1), std::string());
  std::vector<bool> seen(t.decoded_.size(), false);
  for (const auto& [tok, id] : vocab) {
    if (seen[id]) throw VocabularyError("token id " + std::to_string(id) + " assigned twice");
    seen[id] = true;
    t.decoded_[id] = unmap_symbols(tok);
  }
  for (std::size_t i = 0; i < seen.size(); ++i) {
    if (!seen[i]) throw VocabularyError("vocabulary has a gap at id " + std::to_string(i));
  }
  for (std::size_t r = 0; r < merges.size(); ++r) {
    t.merge_rank_.emplace(merges[r].first + " " + merges[r].second, static_cast<int>(r));
  }
  t.vocab_ = std::move(vocab);
  return t;
}

Tokenizer Tokenizer::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open tokenizer file: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error("tokenizer file " + path.string() + " is not valid JSON: " + e.what());
  }
  const nlohmann::json& model = j.contains("model") ? j["model"] : j;
  if (!model.contains("vocab")) throw Error("tokenizer file lacks a vocab: " + path.string());
  std::unordered_map<std::string, TokenId> vocab;
  for (const auto& [tok, id] : model["vocab"].items()) vocab.emplace(tok, id.get<TokenId>());
  std::vector<std::pair<std::string, std::string>> merges;
  if (model.contains("merges")) {
    for (const auto& m : model["merges"]) {
      if (m.is_array()) {
        merges.emplace_back(m.at(0).get<std::string>(), m.at(1).get<std::string>());
      } else {
        const auto s = m.get<std::string>();
        const auto sp = s.find(' ');
        if (sp == std::string::npos) throw Error("malformed merge rule: " + s);
        merges.emplace_back(s.substr(0, sp), s.substr(sp + 1));
      }
    }
  }
  if (j.contains("added_tokens")) {
    for (const auto& added : j["added_tokens"]) vocab.emplace(added.at("content").get<std::string>(), added.at("id").get<TokenId>());
  }
  return from_vocab(std::move(vocab), merges);
}

std::vector<TokenId> Tokenizer::encode_piece(std::string_view piece) const {
  std::vector<std::string> symbols;
  symbols.reserve(piece.size());
  for (unsigned char c : piece) symbols.push_back(byte_symbols()[c]);

  while (symbols.size() > 1) {
    int best_rank = INT_MAX;
    std::size_t best = 0;
    for (std::size_t k = 0; k + 1 < symbols.size(); ++k) {
      auto it = merge_rank_.find(symbols[k] + " " + symbols[k + 1]);
      if (it != merge_rank_.end() && it->second < best_rank) {
        best_rank = it->second;
        best = k;
      }
    }
    if (best_rank == INT_MAX) break;
    const std::string left = symbols[best];
    const std::string right = symbols[best + 1];
    std::vector<std::string> merged;
    merged.reserve(symbols.size());
    for (std::size_t k = 0; k < symbols.size(); ++k) {
      if (k + 1 < symbols.size() && symbols[k] == left && symbols[k + 1] == right) {
        merged.push_back(left + right);
        ++k;
      } else {
        merged.push_back(symbols[k]);
      }
    }
    symbols = std::move(merged);
  }

  std::vector<TokenId> ids;
  for (const auto& sym : symbols) {
    auto it = vocab_.find(sym);
    if (it != vocab_.end()) {
      ids.push_back(it->second);
      continue;
    }
    // Byte fallback: spell the symbol out one byte at a time.
    for (unsigned char c : unmap_symbols(sym)) {
      auto byte_it = vocab_.find(byte_symbols()[c]);
      if (byte_it == vocab_.end()) throw VocabularyError("byte " + std::to_string(int(c)) + " has no token");
      ids.push_back(byte_it->second);
    }
  }
  return ids;
}

std::vector<TokenId> Tokenizer::encode(std::string_view text) const {
  std::vector<TokenId> ids;
  if (identity_) {
    ids.reserve(text.size());
    for (unsigned char c : text) ids.push_back(static_cast<TokenId>(c));
    return ids;
  }
  for (auto piece : pretokenize(text)) {
    auto part = encode_piece(piece);
    ids.insert(ids.end(), part.begin(), part.end());
  }
  return ids;
}

std::string Tokenizer::decode(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= decoded_.size()) {
    throw VocabularyError("unknown token id " + std::to_string(id));
  }
  return decoded_[id];
}

std::string Tokenizer::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (auto id : ids) out += decode(id);
  return out;
}

}  // namespace lensdyn
