#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace lensdyn {

using TokenId = std::int32_t;

/// Byte-level tokenizer: either the identity byte vocabulary (id == byte value)
/// or a GPT-2 style byte-level BPE loaded from a tokenizer.json file.
class Tokenizer {
 public:
  static Tokenizer byte_level();
  /// Reads `model.vocab` / `model.merges` (or top-level `vocab` / `merges`).
  static Tokenizer from_file(const std::filesystem::path& path);
  static Tokenizer from_vocab(std::unordered_map<std::string, TokenId> vocab,
                              const std::vector<std::pair<std::string, std::string>>& merges);

  std::vector<TokenId> encode(std::string_view text) const;
  std::string decode(TokenId id) const;
  std::string decode(std::span<const TokenId> ids) const;
  std::size_t vocab_size() const { return decoded_.size(); }
  bool is_byte_level_identity() const { return identity_; }

 private:
  std::vector<TokenId> encode_piece(std::string_view piece) const;

  bool identity_ = false;
  std::unordered_map<std::string, TokenId> vocab_;  // keys in byte-to-unicode form
  std::unordered_map<std::string, int> merge_rank_;  // "left right" -> rank
  std::vector<std::string> decoded_;                 // id -> raw bytes
};

/// GPT-2 pre-tokenizer split (ASCII character classes; bytes >= 0x80 count as letters).
std::vector<std::string_view> pretokenize(std::string_view text);

}  // namespace lensdyn
