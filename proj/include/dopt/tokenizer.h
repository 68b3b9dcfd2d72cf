// Word-level vocabulary and the encoder input layouts.
//
// Every layout starts with [CLS], prefixes each utterance with [SOT] and
// records where the [SOT]s landed so the model can gather their states.

#ifndef DOPT_TOKENIZER_H_
#define DOPT_TOKENIZER_H_

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dopt/samplegen.h"
#include "json.hpp"

namespace dopt::tokenizer {

using TokenId = std::int32_t;

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kUnk = 1;
inline constexpr TokenId kCls = 2;
inline constexpr TokenId kSep = 3;
inline constexpr TokenId kSot = 4;
inline constexpr std::size_t kNumSpecials = 5;

// Lowercased units split on whitespace, with every ASCII punctuation
// character as its own token.
std::vector<std::string> Tokenize(std::string_view text);

// Text -> ids. Implementations must reserve the special ids above.
class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual std::vector<TokenId> Encode(std::string_view text) const = 0;
  virtual std::size_t size() const = 0;
};

class Vocab : public TextEncoder {
 public:
  // Specials only.
  Vocab();
  // `tokens` in id order; the first five must be the specials.
  explicit Vocab(std::vector<std::string> tokens);

  std::vector<TokenId> Encode(std::string_view text) const override;
  std::size_t size() const override { return tokens_.size(); }

  TokenId Id(std::string_view token) const;  // kUnk if absent
  const std::string& Token(TokenId id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  nlohmann::json ToJson() const;
  static Vocab FromJson(const nlohmann::json& j);
  void Save(const std::filesystem::path& path) const;
  static Vocab Load(const std::filesystem::path& path);

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

const std::vector<std::string>& SpecialTokens();

// Accumulates token frequencies over a text stream.
class VocabBuilder {
 public:
  void Add(std::string_view text);
  // Frequency-descending, ties broken lexicographically; keeps tokens with
  // count >= min_freq up to max_size total entries including specials.
  Vocab Build(std::size_t max_size, std::size_t min_freq) const;
  const std::map<std::string, std::size_t>& counts() const { return counts_; }

 private:
  std::map<std::string, std::size_t> counts_;
};

Vocab BuildVocab(const std::vector<std::string>& texts, std::size_t max_size,
                 std::size_t min_freq);

struct TokenSequence {
  std::vector<TokenId> ids;
  std::vector<TokenId> segments;
  std::vector<std::size_t> sot_positions;
  bool truncated = false;

  std::size_t size() const { return ids.size(); }
  bool operator==(const TokenSequence&) const = default;
};

// [CLS] ([SOT] u)* [SEP], one segment. truncated=true if longer than max_len.
TokenSequence AssembleInsertion(const samplegen::InsertionSample& sample,
                                const TextEncoder& encoder,
                                std::size_t max_len);
// [CLS] ([SOT] u)* [SEP] [SOT] deleted [SEP]; segment 1 after the first
// [SEP]. The query [SOT] is the last entry of sot_positions.
TokenSequence AssembleDeletion(const samplegen::DeletionSample& sample,
                               const TextEncoder& encoder,
                               std::size_t max_len);
TokenSequence AssembleReplacement(const samplegen::ReplacementSample& sample,
                                  const TextEncoder& encoder,
                                  std::size_t max_len);
TokenSequence Assemble(const samplegen::Sample& sample,
                       const TextEncoder& encoder, std::size_t max_len);

// [CLS] ([SOT] U_i)* [SEP] [SOT] R [SEP]. Over-long inputs lose their oldest
// context utterances whole, keeping at least one. Throws std::length_error
// when the response (or the response plus the last context turn) cannot fit.
TokenSequence AssembleResponseSelection(
    const std::vector<std::string>& context, const std::string& response,
    const TextEncoder& encoder, std::size_t max_len);

}  // namespace dopt::tokenizer

#endif  // DOPT_TOKENIZER_H_
