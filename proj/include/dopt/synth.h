// Synthetic articles and response-selection sets with learnable structure,
// for smoke runs and tests.

#ifndef DOPT_SYNTH_H_
#define DOPT_SYNTH_H_

#include <cstdint>
#include <vector>

#include "dopt/corpus.h"
#include "dopt/evaluation.h"

namespace dopt::synth {

struct CorpusOptions {
  int articles = 50;
  int min_paragraphs = 3;
  int max_paragraphs = 6;
  int min_sentences = 3;
  int max_sentences = 9;
  int filler_words = 3;  // per sentence
  std::uint64_t seed = 0;
};

// Every sentence carries its article's topic word, its paragraph's topic
// word and a position marker, padded with shared filler words.
std::vector<corpus::Article> MakeCorpus(const CorpusOptions& options);

struct DialogueOptions {
  int groups = 100;
  int candidates = 2;  // per group, exactly one positive
  int min_turns = 2;
  int max_turns = 5;
  int words_per_turn = 5;
  std::uint64_t seed = 0;
};

// Positive responses draw words from a marker vocabulary disjoint from the
// negatives'; contexts are filler. Group ids are "g000000"...
std::vector<evaluation::DialogueExample> MakeDialogues(
    const DialogueOptions& options);

}  // namespace dopt::synth

#endif  // DOPT_SYNTH_H_
