// Helpers shared by the test binaries.

#ifndef DOPT_TESTS_SUPPORT_H_
#define DOPT_TESTS_SUPPORT_H_

#include <boost/math/distributions/chi_squared.hpp>

#include <array>
#include <string>
#include <vector>

#include "dopt/model.h"
#include "dopt/samplegen.h"
#include "dopt/synth.h"
#include "dopt/tokenizer.h"

namespace dopt::testing {

// Upper-tail p-value of Pearson's statistic against a uniform law.
inline double UniformChiSquareP(const std::vector<std::size_t>& counts) {
  double total = 0;
  for (auto c : counts) total += static_cast<double>(c);
  const double expected = total / static_cast<double>(counts.size());
  double stat = 0;
  for (auto c : counts) {
    const double d = static_cast<double>(c) - expected;
    stat += d * d / expected;
  }
  boost::math::chi_squared dist(static_cast<double>(counts.size() - 1));
  return boost::math::cdf(boost::math::complement(dist, stat));
}

inline tokenizer::Vocab VocabFor(const std::vector<samplegen::Sample>& samples) {
  tokenizer::VocabBuilder b;
  for (const auto& s : samples) {
    std::visit(
        [&](const auto& x) {
          using T = std::decay_t<decltype(x)>;
          if constexpr (std::is_same_v<T, samplegen::InsertionSample>) {
            b.Add(x.anchor);
            for (const auto& u : x.tail) b.Add(u);
          } else if constexpr (std::is_same_v<T, samplegen::DeletionSample>) {
            b.Add(x.deleted);
            for (const auto& u : x.remaining) b.Add(u);
          } else {
            for (const auto& u : x.utterances) b.Add(u);
          }
        },
        s);
  }
  return b.Build(100000, 1);
}

inline tokenizer::Vocab VocabFor(
    const std::vector<evaluation::DialogueExample>& examples) {
  tokenizer::VocabBuilder b;
  for (const auto& ex : examples) {
    for (const auto& u : ex.context) b.Add(u);
    b.Add(ex.response);
  }
  return b.Build(100000, 1);
}

inline model::EncoderConfig SmallConfig(int vocab, int d = 16, int layers = 2,
                                        std::uint64_t seed = 1) {
  model::EncoderConfig c;
  c.layers = layers;
  c.heads = 2;
  c.d_model = d;
  c.d_ff = 2 * d;
  c.max_positions = 128;
  c.vocab_size = vocab;
  c.dropout = 0.0;
  c.seed = seed;
  return c;
}

// First `n` general samples per task from a synthetic corpus; the
// validation sets repeat the training sets.
struct PretrainSuite {
  std::vector<corpus::Article> articles;
  std::array<std::vector<samplegen::Sample>, 3> samples;
};

inline PretrainSuite MakePretrainSuite(std::size_t n, std::uint64_t seed = 0,
                                       int articles = 40) {
  PretrainSuite s;
  synth::CorpusOptions o;
  o.articles = articles;
  o.seed = seed;
  s.articles = synth::MakeCorpus(o);
  samplegen::GenerationConfig gen;
  gen.seed = seed;
  for (corpus::Task t : corpus::kAllTasks) {
    auto all = samplegen::GenerateGeneral(s.articles, t, gen);
    if (all.size() > n) all.resize(n);
    s.samples[static_cast<std::size_t>(t)] = std::move(all);
  }
  return s;
}

inline std::vector<samplegen::Sample> Flatten(const PretrainSuite& s) {
  std::vector<samplegen::Sample> out;
  for (const auto& v : s.samples) out.insert(out.end(), v.begin(), v.end());
  return out;
}

}  // namespace dopt::testing

#endif  // DOPT_TESTS_SUPPORT_H_
