// Article ingestion, sentence splitting and leakage-free partitioning.

#ifndef DOPT_CORPUS_H_
#define DOPT_CORPUS_H_

#include <array>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dopt/common.h"
#include "json.hpp"

namespace dopt::corpus {

using Paragraph = std::vector<std::string>;

struct Article {
  std::string id;
  std::string title;
  std::vector<Paragraph> paragraphs;

  bool operator==(const Article&) const = default;
};

struct SplitConfig {
  // A line starting with this marker begins a new article; any text after
  // the marker on that line becomes the article id.
  std::string article_delimiter = "=====";
  // Section names whose paragraphs are dropped, matched case-insensitively.
  std::vector<std::string> heading_blacklist = {"References", "Literature"};
  // Tokens ending in a terminator that must not end a sentence, e.g. "Dr.".
  std::vector<std::string> abbreviations;
};

enum class Task { kInsertion = 0, kDeletion = 1, kReplacement = 2 };
inline constexpr std::array<Task, 3> kAllTasks = {
    Task::kInsertion, Task::kDeletion, Task::kReplacement};
const char* TaskName(Task task);
Task ParseTask(const std::string& name);

struct CorpusPartition {
  std::uint64_t seed = 0;
  // Indexed by Task. Ids appear in shuffled order.
  std::array<std::vector<std::string>, 3> sets;

  const std::vector<std::string>& set(Task t) const {
    return sets[static_cast<int>(t)];
  }
  bool operator==(const CorpusPartition&) const = default;
};

struct CorpusStats {
  std::size_t articles = 0;
  std::size_t paragraphs = 0;
  std::size_t sentences = 0;
  // sentences per paragraph -> number of paragraphs
  std::map<std::size_t, std::size_t> paragraph_histogram;

  bool operator==(const CorpusStats&) const = default;
};

// One JSON object per line: {"id", "title", "paragraphs": [[sentence...]]}.
// Throws FormatError naming the line for malformed input or duplicate ids.
std::vector<Article> IngestJsonl(std::istream& in);
std::vector<Article> IngestJsonl(const std::filesystem::path& path);
void WriteArticlesJsonl(const std::vector<Article>& articles,
                        std::ostream& out);

// Plain UTF-8 text. Articles are separated by delimiter lines, paragraphs by
// blank lines. A paragraph whose first line is a heading ("# Name", "== Name
// ==") opens a section; blacklisted sections are dropped with their bodies.
std::vector<Article> ParseRawText(std::string_view text,
                                  const SplitConfig& config);
std::vector<Article> IngestRawText(const std::filesystem::path& path,
                                   const SplitConfig& config);

// Throws FormatError with the byte offset of the first invalid sequence.
void ValidateUtf8(std::string_view text);

std::vector<std::string> SplitSentences(std::string_view paragraph_text,
                                        const SplitConfig& config);

// Deterministic shuffle under `seed`, then round-robin into three sets.
CorpusPartition PartitionArticles(const std::vector<std::string>& ids,
                                  std::uint64_t seed);

// Splits one partition set into (train, valid) ids: the last
// round(valid_fraction * n) ids are held out, at least one and at most n-1
// when valid_fraction > 0 and n >= 2.
std::pair<std::vector<std::string>, std::vector<std::string>> SplitTrainValid(
    const std::vector<std::string>& ids, double valid_fraction);

nlohmann::json PartitionToJson(const CorpusPartition& partition);
CorpusPartition PartitionFromJson(const nlohmann::json& j);

CorpusStats ComputeCorpusStats(const std::vector<Article>& articles);
nlohmann::json CorpusStatsToJson(const CorpusStats& stats);

nlohmann::json ArticleToJson(const Article& article);
Article ArticleFromJson(const nlohmann::json& j);

}  // namespace dopt::corpus

#endif  // DOPT_CORPUS_H_
