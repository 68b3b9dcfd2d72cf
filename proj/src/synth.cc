#include "dopt/synth.h"

#include <cstdio>
#include <stdexcept>
#include <string>

#include "dopt/common.h"

namespace dopt::synth {
namespace {

int Between(Rng& rng, int lo, int hi) {
  return lo + static_cast<int>(UniformIndex(rng, static_cast<std::size_t>(hi - lo + 1)));
}

std::string Word(const char* prefix, std::size_t i) {
  return prefix + std::to_string(i);
}

}  // namespace

std::vector<corpus::Article> MakeCorpus(const CorpusOptions& o) {
  if (o.articles <= 0 || o.min_paragraphs <= 0 ||
      o.max_paragraphs < o.min_paragraphs || o.min_sentences <= 0 ||
      o.max_sentences < o.min_sentences || o.filler_words < 0) {
    throw ConfigError("invalid synthetic corpus options");
  }
  Rng rng(SplitMix64(o.seed));
  std::vector<corpus::Article> out;
  std::size_t para_topic = 0;
  for (int a = 0; a < o.articles; ++a) {
    corpus::Article art;
    char id[16];
    std::snprintf(id, sizeof(id), "art%05d", a);
    art.id = id;
    art.title = "Article " + std::to_string(a);
    const int paragraphs = Between(rng, o.min_paragraphs, o.max_paragraphs);
    for (int p = 0; p < paragraphs; ++p, ++para_topic) {
      corpus::Paragraph para;
      const int sentences = Between(rng, o.min_sentences, o.max_sentences);
      for (int s = 0; s < sentences; ++s) {
        std::string text = Word("art", static_cast<std::size_t>(a)) + " " +
                           Word("topic", para_topic) + " " +
                           Word("step", static_cast<std::size_t>(s));
        for (int f = 0; f < o.filler_words; ++f) {
          text += " " + Word("w", UniformIndex(rng, 40));
        }
        para.push_back(text + ".");
      }
      art.paragraphs.push_back(std::move(para));
    }
    out.push_back(std::move(art));
  }
  return out;
}

std::vector<evaluation::DialogueExample> MakeDialogues(const DialogueOptions& o) {
  if (o.groups <= 0 || o.candidates < 2 || o.min_turns <= 0 ||
      o.max_turns < o.min_turns || o.words_per_turn <= 0) {
    throw ConfigError("invalid synthetic dialogue options");
  }
  Rng rng(SplitMix64(o.seed));
  auto utterance = [&](const char* prefix, std::size_t vocab) {
    std::string s;
    for (int w = 0; w < o.words_per_turn; ++w) {
      if (w) s += ' ';
      s += Word(prefix, UniformIndex(rng, vocab));
    }
    return s;
  };
  std::vector<evaluation::DialogueExample> out;
  for (int g = 0; g < o.groups; ++g) {
    char id[16];
    std::snprintf(id, sizeof(id), "g%06d", g);
    std::vector<std::string> context;
    const int turns = Between(rng, o.min_turns, o.max_turns);
    for (int t = 0; t < turns; ++t) context.push_back(utterance("w", 40));
    const std::size_t positive = UniformIndex(rng, static_cast<std::size_t>(o.candidates));
    for (std::size_t c = 0; c < static_cast<std::size_t>(o.candidates); ++c) {
      const bool pos = c == positive;
      out.push_back({id, context, utterance(pos ? "yes" : "no", 8), pos ? 1 : 0});
    }
  }
  return out;
}

}  // namespace dopt::synth
