// Construction of insertion, deletion and replacement training samples from
// articles (general corpus) and from multi-turn dialogues (domain variant),
// plus an independent validator that re-derives every gold label from the
// source text.

#ifndef DOPT_SAMPLEGEN_H_
#define DOPT_SAMPLEGEN_H_

#include <array>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <variant>
#include <vector>

#include "dopt/common.h"
#include "dopt/corpus.h"
#include "json.hpp"

namespace dopt::samplegen {

using corpus::Article;
using corpus::Paragraph;
using corpus::Task;

struct GenerationConfig {
  int k = 5;
  int max_words = 400;
  std::uint64_t seed = 0;
  // Paragraphs with at least this many sentences qualify for insertion.
  int min_para_sentences_insertion = 5;
  // Take as many disjoint windows per paragraph as fit instead of one.
  bool dense = false;
  int workers = 1;

  void Validate() const;
};

struct Dialogue {
  std::string id;
  std::vector<std::string> utterances;
};

enum class Variant { kGeneral, kDomain };

// Where a sample came from. Sentence indices are 0-based within the source
// paragraph (articles) or dialogue. Unused fields keep their defaults.
struct Provenance {
  std::string source_id;
  int paragraph = -1;  // -1 for dialogues
  int start = 0;       // first sentence of the window / A-pair
  int window = 0;      // number of source utterances in the sample
  int partner_paragraph = -1;  // general insertion: B's paragraph
  int partner_start = -1;      // general insertion: B-pair start
  std::string donor_id;        // replacement
  int donor_paragraph = -1;
  int donor_sentence = -1;

  bool operator==(const Provenance&) const = default;
};

struct InsertionSample {
  std::string anchor;
  std::vector<std::string> tail;
  int label = 0;
  std::optional<Provenance> provenance;
  Variant variant = Variant::kGeneral;

  bool operator==(const InsertionSample&) const = default;
};

struct DeletionSample {
  std::vector<std::string> remaining;
  std::string deleted;
  int label = 0;
  std::optional<Provenance> provenance;
  Variant variant = Variant::kGeneral;

  bool operator==(const DeletionSample&) const = default;
};

struct ReplacementSample {
  std::vector<std::string> utterances;
  int label = 0;
  std::optional<Provenance> provenance;
  Variant variant = Variant::kGeneral;

  bool operator==(const ReplacementSample&) const = default;
};

using Sample = std::variant<InsertionSample, DeletionSample, ReplacementSample>;

Task TaskOf(const Sample& sample);
int LabelOf(const Sample& sample);
std::size_t WordCount(const Sample& sample);
// Speaker pattern of a general insertion sample ("AABB", "ABAB", "ABBA").
std::string SpeakerPattern(const InsertionSample& sample);

// Sentences drawn uniformly from every source except the requesting one.
class DonorPool {
 public:
  explicit DonorPool(const std::vector<Article>& articles);
  explicit DonorPool(const std::vector<Dialogue>& dialogues);

  struct Draw {
    const std::string* text;
    const std::string* source_id;
    int paragraph;  // -1 for dialogues
    int sentence;
  };
  // Returns nullopt if no source other than `exclude_id` has sentences.
  std::optional<Draw> Sample(Rng& rng, const std::string& exclude_id) const;

 private:
  struct Source {
    const std::string* id;
    std::vector<const Paragraph*> paragraphs;
    std::vector<std::size_t> offsets;  // prefix sums over paragraph sizes
    std::size_t begin = 0;             // first flat index
    std::size_t count = 0;
  };
  void Finalize();

  bool dialogues_ = false;
  std::vector<Source> sources_;
  std::map<std::string, std::size_t, std::less<>> by_id_;
  std::size_t total_ = 0;
};

// ---- general corpus ----

std::vector<InsertionSample> GenInsertionGeneral(const Article& article,
                                                 const GenerationConfig& cfg,
                                                 Rng& rng);
std::vector<DeletionSample> GenDeletionGeneral(const Article& article,
                                               const GenerationConfig& cfg,
                                               Rng& rng);
// Throws ConfigError if the pool has no donor sentences outside `article`.
std::vector<ReplacementSample> GenReplacementGeneral(
    const Article& article, const DonorPool& donors,
    const GenerationConfig& cfg, Rng& rng);

// Generates `task` samples for every article, each with its own random
// stream keyed by (seed, task, article id). Output is ordered by article id
// and independent of cfg.workers. Replacement donors come from `articles`.
std::vector<Sample> GenerateGeneral(const std::vector<Article>& articles,
                                    Task task, const GenerationConfig& cfg);
// Same, with replacement donors drawn from `donor_articles`.
std::vector<Sample> GenerateGeneral(const std::vector<Article>& articles,
                                    Task task, const GenerationConfig& cfg,
                                    const std::vector<Article>& donor_articles);

// ---- dialogues ----

std::optional<InsertionSample> GenInsertionDomain(const Dialogue& dialogue,
                                                  const GenerationConfig& cfg,
                                                  Rng& rng);
std::optional<DeletionSample> GenDeletionDomain(const Dialogue& dialogue,
                                                const GenerationConfig& cfg,
                                                Rng& rng);
std::optional<ReplacementSample> GenReplacementDomain(
    const Dialogue& dialogue, const DonorPool& others,
    const GenerationConfig& cfg, Rng& rng);

std::vector<Sample> GenerateDomain(const std::vector<Dialogue>& dialogues,
                                   Task task, const GenerationConfig& cfg);

// ---- validation ----

class SourceIndex {
 public:
  void Add(const std::vector<Article>& articles);
  void Add(const std::vector<Dialogue>& dialogues);
  const Article* FindArticle(const std::string& id) const;
  const Dialogue* FindDialogue(const std::string& id) const;

 private:
  std::map<std::string, const Article*> articles_;
  std::map<std::string, const Dialogue*> dialogues_;
};

struct ValidationReport {
  bool ok = true;
  std::vector<std::string> reasons;
};

// Re-derives the gold label from provenance and source text and checks
// every sample invariant. When `cfg` is given, window sizes and the word
// cap are checked against it. Throws FormatError if provenance is missing.
ValidationReport ValidateSample(const Sample& sample,
                                const SourceIndex& sources,
                                const GenerationConfig* cfg = nullptr);

// ---- serialization ----

nlohmann::json SampleToJson(const Sample& sample);
Sample SampleFromJson(const nlohmann::json& j);
void WriteSamples(const std::vector<Sample>& samples, std::ostream& out);
void WriteSamples(const std::vector<Sample>& samples,
                  const std::filesystem::path& path);
std::vector<Sample> ReadSamples(std::istream& in);
std::vector<Sample> ReadSamples(const std::filesystem::path& path);

// ---- statistics ----

struct TaskCounts {
  std::size_t train_articles = 0;
  std::size_t valid_articles = 0;
  std::size_t train_samples = 0;
  std::size_t valid_samples = 0;
};

struct GenerationStats {
  std::array<TaskCounts, 3> tasks;  // indexed by Task
};

nlohmann::json StatsToJson(const GenerationStats& stats);
// Rows: #articles/task, Insertion, Deletion, Replacement; columns Train,
// Valid.
std::string RenderStatsTable(const GenerationStats& stats);

}  // namespace dopt::samplegen

#endif  // DOPT_SAMPLEGEN_H_
