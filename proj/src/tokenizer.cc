#include "dopt/tokenizer.h"

#include <algorithm>
#include <fstream>
#include <stdexcept>

#include "dopt/common.h"

namespace dopt::tokenizer {
namespace {

using nlohmann::json;

bool IsAsciiPunct(unsigned char c) {
  return (c >= 33 && c <= 47) || (c >= 58 && c <= 64) ||
         (c >= 91 && c <= 96) || (c >= 123 && c <= 126);
}

bool IsSpace(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' ||
         c == '\v';
}

class Builder {
 public:
  explicit Builder(const TextEncoder& encoder) : encoder_(encoder) {
    seq_.ids.push_back(kCls);
  }

  void Utterance(std::string_view text) {
    seq_.sot_positions.push_back(seq_.ids.size());
    seq_.ids.push_back(kSot);
    for (TokenId id : encoder_.Encode(text)) seq_.ids.push_back(id);
  }
  void Sep() { seq_.ids.push_back(kSep); }

  // Segment 0 up to and including the first [SEP], 1 afterwards when
  // two_segments is set.
  TokenSequence Finish(std::size_t max_len, bool two_segments) {
    seq_.segments.assign(seq_.ids.size(), 0);
    if (two_segments) {
      auto first_sep = std::find(seq_.ids.begin(), seq_.ids.end(), kSep);
      for (auto i = static_cast<std::size_t>(first_sep - seq_.ids.begin()) + 1;
           i < seq_.ids.size(); ++i) {
        seq_.segments[i] = 1;
      }
    }
    seq_.truncated = seq_.ids.size() > max_len;
    return std::move(seq_);
  }

 private:
  const TextEncoder& encoder_;
  TokenSequence seq_;
};

}  // namespace

std::vector<std::string> Tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) out.push_back(std::move(current));
    current.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (IsSpace(c)) {
      flush();
    } else if (IsAsciiPunct(c)) {
      flush();
      out.emplace_back(1, ch);
    } else {
      current.push_back(c >= 'A' && c <= 'Z' ? static_cast<char>(c - 'A' + 'a')
                                             : ch);
    }
  }
  flush();
  return out;
}

const std::vector<std::string>& SpecialTokens() {
  static const std::vector<std::string> kSpecials = {"[PAD]", "[UNK]", "[CLS]",
                                                     "[SEP]", "[SOT]"};
  return kSpecials;
}

Vocab::Vocab() : Vocab(SpecialTokens()) {}

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  const auto& specials = SpecialTokens();
  if (tokens_.size() < specials.size() ||
      !std::equal(specials.begin(), specials.end(), tokens_.begin())) {
    throw FormatError("vocab must start with [PAD] [UNK] [CLS] [SEP] [SOT]");
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second) {
      throw FormatError("duplicate vocab token '" + tokens_[i] + "'");
    }
  }
}

std::vector<TokenId> Vocab::Encode(std::string_view text) const {
  std::vector<TokenId> ids;
  for (const auto& tok : Tokenize(text)) ids.push_back(Id(tok));
  return ids;
}

TokenId Vocab::Id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocab::Token(TokenId id) const {
  return tokens_.at(static_cast<std::size_t>(id));
}

json Vocab::ToJson() const { return json(tokens_); }

Vocab Vocab::FromJson(const json& j) {
  if (!j.is_array()) throw FormatError("vocab file must be a JSON array");
  return Vocab(j.get<std::vector<std::string>>());
}

void Vocab::Save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << ToJson().dump() << '\n';
}

Vocab Vocab::Load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  try {
    return FromJson(json::parse(in));
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void VocabBuilder::Add(std::string_view text) {
  for (auto& tok : Tokenize(text)) ++counts_[std::move(tok)];
}

Vocab VocabBuilder::Build(std::size_t max_size, std::size_t min_freq) const {
  if (max_size <= kNumSpecials) {
    throw ConfigError("max vocab size must exceed the 5 special tokens");
  }
  const auto& specials = SpecialTokens();
  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (const auto& [tok, n] : counts_) {
    if (n < min_freq) continue;
    if (std::find(specials.begin(), specials.end(), tok) != specials.end()) {
      continue;
    }
    ranked.emplace_back(tok, n);
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) {
                     if (a.second != b.second) return a.second > b.second;
                     return a.first < b.first;
                   });
  std::vector<std::string> tokens = specials;
  for (const auto& [tok, n] : ranked) {
    if (tokens.size() >= max_size) break;
    tokens.push_back(tok);
  }
  return Vocab(std::move(tokens));
}

Vocab BuildVocab(const std::vector<std::string>& texts, std::size_t max_size,
                 std::size_t min_freq) {
  VocabBuilder b;
  for (const auto& t : texts) b.Add(t);
  return b.Build(max_size, min_freq);
}

TokenSequence AssembleInsertion(const samplegen::InsertionSample& sample,
                                const TextEncoder& encoder,
                                std::size_t max_len) {
  Builder b(encoder);
  b.Utterance(sample.anchor);
  for (const auto& u : sample.tail) b.Utterance(u);
  b.Sep();
  return b.Finish(max_len, false);
}

TokenSequence AssembleDeletion(const samplegen::DeletionSample& sample,
                               const TextEncoder& encoder,
                               std::size_t max_len) {
  Builder b(encoder);
  for (const auto& u : sample.remaining) b.Utterance(u);
  b.Sep();
  b.Utterance(sample.deleted);
  b.Sep();
  return b.Finish(max_len, true);
}

TokenSequence AssembleReplacement(const samplegen::ReplacementSample& sample,
                                  const TextEncoder& encoder,
                                  std::size_t max_len) {
  Builder b(encoder);
  for (const auto& u : sample.utterances) b.Utterance(u);
  b.Sep();
  return b.Finish(max_len, false);
}

TokenSequence Assemble(const samplegen::Sample& sample,
                       const TextEncoder& encoder, std::size_t max_len) {
  struct Visitor {
    const TextEncoder& encoder;
    std::size_t max_len;
    TokenSequence operator()(const samplegen::InsertionSample& s) const {
      return AssembleInsertion(s, encoder, max_len);
    }
    TokenSequence operator()(const samplegen::DeletionSample& s) const {
      return AssembleDeletion(s, encoder, max_len);
    }
    TokenSequence operator()(const samplegen::ReplacementSample& s) const {
      return AssembleReplacement(s, encoder, max_len);
    }
  };
  return std::visit(Visitor{encoder, max_len}, sample);
}

TokenSequence AssembleResponseSelection(
    const std::vector<std::string>& context, const std::string& response,
    const TextEncoder& encoder, std::size_t max_len) {
  if (context.empty()) {
    throw std::invalid_argument("response selection needs a non-empty context");
  }
  std::vector<std::size_t> lengths;
  std::size_t total = 0;
  for (const auto& u : context) {
    lengths.push_back(encoder.Encode(u).size() + 1);
    total += lengths.back();
  }
  const std::size_t fixed = 1 + 1 + 1 + encoder.Encode(response).size() + 1;
  if (fixed > max_len) {
    throw std::length_error("response alone exceeds max_len " +
                            std::to_string(max_len));
  }
  std::size_t first = 0;
  while (fixed + total > max_len && first + 1 < context.size()) {
    total -= lengths[first++];
  }
  if (fixed + total > max_len) {
    throw std::length_error(
        "response plus the last context utterance exceeds max_len " +
        std::to_string(max_len));
  }
  Builder b(encoder);
  for (std::size_t i = first; i < context.size(); ++i) b.Utterance(context[i]);
  b.Sep();
  b.Utterance(response);
  b.Sep();
  TokenSequence seq = b.Finish(max_len, true);
  seq.truncated = first > 0;
  return seq;
}

}  // namespace dopt::tokenizer
