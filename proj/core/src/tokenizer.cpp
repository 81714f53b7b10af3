// SPDX-FileCopyrightText: (c) 2026 The babylab Authors
//
// SPDX-License-Identifier: Apache-2.0

#include "babylab/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>
#include <unordered_set>

#include "babylab/error.hpp"
#include "babylab/unicode.hpp"

namespace babylab {
namespace {

constexpr std::uint64_t pack(TokenId left, TokenId right) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(left)) << 32) |
         static_cast<std::uint32_t>(right);
}

constexpr std::string_view kPlaceholders[kNumSpecials] = {"<pad>", "<unk>", "<mask>", "<s>",
                                                          "</s>"};
constexpr std::string_view kSpecialNames[kNumSpecials] = {"pad", "unk", "mask", "bos", "eos"};

bool is_space(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}

bool is_ascii_punct(unsigned char c) {
  return (c >= 0x21 && c <= 0x2f) || (c >= 0x3a && c <= 0x40) || (c >= 0x5b && c <= 0x60) ||
         (c >= 0x7b && c <= 0x7e);
}

// GPT-2 style reversible byte -> printable code point map for JSON storage.
const std::vector<std::string>& byte_symbols() {
  static const std::vector<std::string> table = [] {
    std::vector<std::string> out(256);
    auto printable = [](int b) {
      return (b >= '!' && b <= '~') || (b >= 0xA1 && b <= 0xAC) || (b >= 0xAE && b <= 0xFF);
    };
    int extra = 0;
    for (int b = 0; b < 256; ++b) {
      const int cp = printable(b) ? b : 256 + extra++;
      std::string s;
      if (cp < 0x80) {
        s.push_back(static_cast<char>(cp));
      } else {
        s.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        s.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
      }
      out[static_cast<std::size_t>(b)] = std::move(s);
    }
    return out;
  }();
  return table;
}

std::string bytes_to_symbols(std::string_view bytes) {
  std::string out;
  for (unsigned char c : bytes) out += byte_symbols()[c];
  return out;
}

std::string symbols_to_bytes(std::string_view symbols) {
  static const std::map<std::string, char, std::less<>> reverse = [] {
    std::map<std::string, char, std::less<>> m;
    for (int b = 0; b < 256; ++b) m.emplace(byte_symbols()[static_cast<std::size_t>(b)], static_cast<char>(b));
    return m;
  }();
  std::string out;
  std::size_t i = 0;
  while (i < symbols.size()) {
    const std::size_t width = (static_cast<unsigned char>(symbols[i]) < 0x80) ? 1 : 2;
    auto it = reverse.find(symbols.substr(i, width));
    if (it == reverse.end()) {
      throw ConfigError("tokenizer: unrecognised byte symbol in '" + std::string(symbols) + "'");
    }
    out.push_back(it->second);
    i += width;
  }
  return out;
}

// Replaces every non-overlapping (left, right) occurrence, scanning left to right.
bool apply_merge(std::vector<TokenId>& symbols, TokenId left, TokenId right, TokenId merged) {
  bool changed = false;
  std::size_t write = 0;
  for (std::size_t read = 0; read < symbols.size(); ++write) {
    if (read + 1 < symbols.size() && symbols[read] == left && symbols[read + 1] == right) {
      symbols[write] = merged;
      read += 2;
      changed = true;
    } else {
      symbols[write] = symbols[read];
      ++read;
    }
  }
  symbols.resize(write);
  return changed;
}

}  // namespace

std::string_view special_placeholder(TokenId id) {
  if (id < 0 || id >= kNumSpecials) throw std::out_of_range("not a special token id");
  return kPlaceholders[id];
}

Tokenizer::Tokenizer() {
  tokens_.reserve(min_vocab_size());
  for (auto p : kPlaceholders) tokens_.emplace_back(p);
  for (std::size_t b = 0; b < kAlphabetSize; ++b) {
    tokens_.emplace_back(1, static_cast<char>(b));
    ids_by_bytes_.emplace(tokens_.back(), static_cast<TokenId>(tokens_.size() - 1));
  }
}

void Tokenizer::add_merge(TokenId left, TokenId right) {
  const auto id = static_cast<TokenId>(tokens_.size());
  tokens_.push_back(tokens_[static_cast<std::size_t>(left)] +
                    tokens_[static_cast<std::size_t>(right)]);
  merge_rank_.emplace(pack(left, right), static_cast<std::uint32_t>(merges_.size()));
  merges_.emplace_back(left, right);
  ids_by_bytes_.emplace(tokens_.back(), id);
}

std::vector<std::string_view> Tokenizer::pretokenize(std::string_view text) {
  std::vector<std::string_view> chunks;
  const std::size_t n = text.size();
  std::size_t i = 0;
  auto byte = [&](std::size_t k) { return static_cast<unsigned char>(text[k]); };
  while (i < n) {
    std::size_t start = i;
    if (is_space(byte(i))) {
      std::size_t j = i;
      while (j < n && is_space(byte(j))) ++j;
      if (j < n && text[j - 1] == ' ') {
        // The final space is carried by the following pre-token.
        if (j - 1 > i) chunks.push_back(text.substr(i, j - 1 - i));
        start = j - 1;
        i = j;
      } else {
        chunks.push_back(text.substr(i, j - i));
        i = j;
        continue;
      }
    }
    const bool punct = is_ascii_punct(byte(i));
    std::size_t j = i;
    while (j < n && !is_space(byte(j)) && is_ascii_punct(byte(j)) == punct) ++j;
    chunks.push_back(text.substr(start, j - start));
    i = j;
  }
  return chunks;
}

Tokenizer Tokenizer::train(std::span<const std::string> corpus, std::size_t vocab_size) {
  if (vocab_size < min_vocab_size()) {
    throw std::invalid_argument("tokenizer: vocab_size " + std::to_string(vocab_size) +
                                " is too small; the minimum feasible size is " +
                                std::to_string(min_vocab_size()));
  }
  std::map<std::string, std::int64_t> chunk_counts;
  bool any_text = false;
  for (const auto& line : corpus) {
    const std::string normalized = unicode::nfc(line);
    if (!normalized.empty()) any_text = true;
    for (auto chunk : pretokenize(normalized)) ++chunk_counts[std::string(chunk)];
  }
  if (!any_text) throw std::invalid_argument("tokenizer: training corpus is empty");

  Tokenizer tok;
  struct Word {
    std::vector<TokenId> symbols;
    std::int64_t count;
  };
  std::vector<Word> words;
  words.reserve(chunk_counts.size());
  for (const auto& [chunk, count] : chunk_counts) {
    Word w{{}, count};
    for (unsigned char c : chunk) w.symbols.push_back(kFirstByteId + c);
    words.push_back(std::move(w));
  }

  std::unordered_map<std::uint64_t, std::int64_t> pair_counts;
  std::unordered_map<std::uint64_t, std::unordered_set<std::uint32_t>> pair_words;
  // Ordered by descending count, then ascending packed (left, right).
  std::set<std::pair<std::int64_t, std::uint64_t>> queue;

  auto adjust = [&](std::uint64_t key, std::int64_t delta) {
    auto& count = pair_counts[key];
    if (count > 0) queue.erase({-count, key});
    count += delta;
    if (count > 0) queue.insert({-count, key});
  };
  auto contribute = [&](std::uint32_t index, std::int64_t sign) {
    const Word& w = words[index];
    for (std::size_t k = 0; k + 1 < w.symbols.size(); ++k) {
      const auto key = pack(w.symbols[k], w.symbols[k + 1]);
      adjust(key, sign * w.count);
      if (sign > 0) pair_words[key].insert(index);
    }
  };
  for (std::uint32_t i = 0; i < words.size(); ++i) contribute(i, +1);

  while (tok.vocab_size() < vocab_size) {
    if (queue.empty()) {
      throw std::invalid_argument("tokenizer: corpus supports at most " +
                                  std::to_string(tok.vocab_size()) +
                                  " vocabulary entries; requested " + std::to_string(vocab_size));
    }
    const std::uint64_t key = queue.begin()->second;
    const auto left = static_cast<TokenId>(key >> 32);
    const auto right = static_cast<TokenId>(key & 0xffffffffu);
    const auto merged = static_cast<TokenId>(tok.vocab_size());
    tok.add_merge(left, right);

    std::vector<std::uint32_t> affected(pair_words[key].begin(), pair_words[key].end());
    std::sort(affected.begin(), affected.end());
    for (auto index : affected) {
      Word& w = words[index];
      bool present = false;
      for (std::size_t k = 0; k + 1 < w.symbols.size(); ++k) {
        if (w.symbols[k] == left && w.symbols[k + 1] == right) {
          present = true;
          break;
        }
      }
      if (!present) continue;
      contribute(index, -1);
      apply_merge(w.symbols, left, right, merged);
      contribute(index, +1);
    }
    pair_words.erase(key);
  }
  return tok;
}

Tokenizer Tokenizer::from_merges(std::span<const std::pair<std::string, std::string>> merges) {
  Tokenizer tok;
  for (const auto& [left, right] : merges) {
    auto l = tok.ids_by_bytes_.find(left);
    auto r = tok.ids_by_bytes_.find(right);
    if (l == tok.ids_by_bytes_.end() || r == tok.ids_by_bytes_.end()) {
      throw ConfigError("tokenizer: merge (" + left + ", " + right +
                        ") references an unknown token");
    }
    if (tok.merge_rank_.contains(pack(l->second, r->second))) {
      throw ConfigError("tokenizer: duplicate merge (" + left + ", " + right + ")");
    }
    tok.add_merge(l->second, r->second);
  }
  return tok;
}

std::vector<TokenId> Tokenizer::encode_chunk(std::string_view chunk) const {
  std::vector<TokenId> symbols;
  symbols.reserve(chunk.size());
  for (unsigned char c : chunk) symbols.push_back(kFirstByteId + c);
  while (symbols.size() > 1) {
    std::uint32_t best_rank = std::numeric_limits<std::uint32_t>::max();
    for (std::size_t k = 0; k + 1 < symbols.size(); ++k) {
      auto it = merge_rank_.find(pack(symbols[k], symbols[k + 1]));
      if (it != merge_rank_.end()) best_rank = std::min(best_rank, it->second);
    }
    if (best_rank == std::numeric_limits<std::uint32_t>::max()) break;
    const auto [left, right] = merges_[best_rank];
    apply_merge(symbols, left, right,
                static_cast<TokenId>(min_vocab_size() + best_rank));
  }
  return symbols;
}

std::vector<TokenId> Tokenizer::encode(std::string_view text) const {
  const std::string normalized = unicode::nfc(text);
  std::vector<TokenId> ids;
  for (auto chunk : pretokenize(normalized)) {
    auto piece = encode_chunk(chunk);
    ids.insert(ids.end(), piece.begin(), piece.end());
  }
  return ids;
}

std::string Tokenizer::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId id : ids) out += token_bytes(id);
  return out;
}

const std::string& Tokenizer::token_bytes(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw std::out_of_range("tokenizer: id " + std::to_string(id) + " outside vocabulary of " +
                            std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

nlohmann::json Tokenizer::to_json() const {
  nlohmann::json vocab = nlohmann::json::object();
  for (std::size_t id = 0; id < tokens_.size(); ++id) {
    const std::string key =
        id < static_cast<std::size_t>(kNumSpecials) ? tokens_[id] : bytes_to_symbols(tokens_[id]);
    vocab[key] = id;
  }
  nlohmann::json merges = nlohmann::json::array();
  for (const auto& [left, right] : merges_) {
    merges.push_back(bytes_to_symbols(token_bytes(left)) + " " +
                     bytes_to_symbols(token_bytes(right)));
  }
  nlohmann::json specials = nlohmann::json::object();
  for (int i = 0; i < kNumSpecials; ++i) {
    specials[std::string(kSpecialNames[i])] = {{"id", i}, {"text", kPlaceholders[i]}};
  }
  return {{"vocab", vocab}, {"merges", merges}, {"specials", specials}, {"normalization", "nfc"}};
}

Tokenizer Tokenizer::from_json(const nlohmann::json& doc) {
  try {
    if (doc.value("normalization", "") != "nfc") {
      throw ConfigError("tokenizer: unsupported normalization '" +
                        doc.value("normalization", "") + "'");
    }
    std::vector<std::pair<std::string, std::string>> merges;
    for (const auto& entry : doc.at("merges")) {
      const auto text = entry.get<std::string>();
      const auto space = text.find(' ');
      if (space == std::string::npos || text.find(' ', space + 1) != std::string::npos) {
        throw ConfigError("tokenizer: malformed merge entry '" + text + "'");
      }
      merges.emplace_back(symbols_to_bytes(text.substr(0, space)),
                          symbols_to_bytes(text.substr(space + 1)));
    }
    Tokenizer tok = from_merges(merges);
    const auto& vocab = doc.at("vocab");
    if (vocab.size() != tok.vocab_size()) {
      throw ConfigError("tokenizer: vocab has " + std::to_string(vocab.size()) +
                        " entries but merges imply " + std::to_string(tok.vocab_size()));
    }
    for (std::size_t id = 0; id < tok.vocab_size(); ++id) {
      const std::string key = id < static_cast<std::size_t>(kNumSpecials)
                                  ? tok.tokens_[id]
                                  : bytes_to_symbols(tok.tokens_[id]);
      if (!vocab.contains(key) || vocab.at(key).get<std::size_t>() != id) {
        throw ConfigError("tokenizer: vocab entry for id " + std::to_string(id) +
                          " does not match the merge list");
      }
    }
    const auto& specials = doc.at("specials");
    for (int i = 0; i < kNumSpecials; ++i) {
      if (specials.at(std::string(kSpecialNames[i])).at("id").get<int>() != i) {
        throw ConfigError("tokenizer: special '" + std::string(kSpecialNames[i]) +
                          "' must have id " + std::to_string(i));
      }
    }
    return tok;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("tokenizer: malformed document: ") + e.what());
  }
}

void Tokenizer::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << to_json().dump(1) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

Tokenizer Tokenizer::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open tokenizer file " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("tokenizer: " + path.string() + ": " + e.what());
  }
  return from_json(doc);
}

}  // namespace babylab
