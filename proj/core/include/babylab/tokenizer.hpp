// SPDX-FileCopyrightText: (c) 2026 The babylab Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "babylab/tokens.hpp"

namespace babylab {

/// Byte-level byte-pair-encoding tokenizer.
///
/// Id layout: the five specials (pad, unk, mask, bos, eos) first, then the
/// 256 single-byte tokens, then one token per learned merge in merge order.
/// Text is NFC-normalized before encoding; casing is preserved. Merges never
/// cross pre-token boundaries, where a pre-token is a run of word bytes or of
/// ASCII punctuation, optionally carrying one leading space, or a bare run of
/// whitespace.
///
/// Instances are immutable after construction and safe to share between
/// threads.
class Tokenizer {
 public:
  using Merge = std::pair<TokenId, TokenId>;

  static constexpr std::size_t kAlphabetSize = 256;
  static constexpr TokenId kFirstByteId = kNumSpecials;

  /// Smallest vocabulary that can be trained: specials plus the byte alphabet.
  static constexpr std::size_t min_vocab_size() { return kNumSpecials + kAlphabetSize; }

  /// Learns merges until the vocabulary holds exactly `vocab_size` entries.
  /// The most frequent adjacent pair is merged at each step; frequency ties
  /// go to the lexicographically smallest (left id, right id) pair.
  /// Throws std::invalid_argument if the corpus is empty, if vocab_size is
  /// below min_vocab_size(), or if the corpus runs out of mergeable pairs.
  static Tokenizer train(std::span<const std::string> corpus, std::size_t vocab_size);

  /// Builds a tokenizer from an explicit merge list of token strings.
  static Tokenizer from_merges(std::span<const std::pair<std::string, std::string>> merges);

  std::vector<TokenId> encode(std::string_view text) const;

  /// Concatenates token bytes. Specials decode to their placeholders
  /// ("<pad>", "<unk>", "<mask>", "<s>", "</s>").
  /// Throws std::out_of_range for ids outside the vocabulary.
  std::string decode(std::span<const TokenId> ids) const;

  std::size_t vocab_size() const { return tokens_.size(); }
  const std::vector<Merge>& merges() const { return merges_; }

  /// Raw bytes of a token (placeholder text for specials).
  const std::string& token_bytes(TokenId id) const;
  bool is_special(TokenId id) const { return id >= 0 && id < kNumSpecials; }

  nlohmann::json to_json() const;
  static Tokenizer from_json(const nlohmann::json& doc);

  void save(const std::filesystem::path& path) const;
  static Tokenizer load(const std::filesystem::path& path);

  friend bool operator==(const Tokenizer& a, const Tokenizer& b) {
    return a.merges_ == b.merges_;
  }

  /// Splits normalized text into the pre-tokens merges operate within.
  static std::vector<std::string_view> pretokenize(std::string_view text);

 private:
  Tokenizer();
  void add_merge(TokenId left, TokenId right);
  std::vector<TokenId> encode_chunk(std::string_view chunk) const;

  std::vector<std::string> tokens_;
  std::vector<Merge> merges_;
  // (left, right) packed into 64 bits -> merge rank.
  std::unordered_map<std::uint64_t, std::uint32_t> merge_rank_;
  std::unordered_map<std::string, TokenId> ids_by_bytes_;
};

/// Printable placeholder for a special token id.
std::string_view special_placeholder(TokenId id);

}  // namespace babylab
