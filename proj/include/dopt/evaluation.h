// Ranking metrics for response selection and accuracy for the pre-training
// tasks.
//
// Candidates are ranked by descending score; equal scores keep their input
// order. Groups without a positive candidate are excluded from every metric
// and counted in MetricReport::n_excluded.

#ifndef DOPT_EVALUATION_H_
#define DOPT_EVALUATION_H_

#include <cstddef>
#include <filesystem>
#include <istream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace dopt::evaluation {

struct DialogueExample {
  std::string group_id;
  std::vector<std::string> context;
  std::string response;
  int label = 0;

  bool operator==(const DialogueExample&) const = default;
};

struct Candidate {
  double score = 0.0;
  int label = 0;
};

struct RankedGroup {
  std::string group_id;
  std::vector<Candidate> candidates;
};

struct MetricReport {
  std::size_t n = 0;  // candidates per group
  double recall_at_1 = 0.0;
  double recall_at_2 = 0.0;
  double recall_at_5 = 0.0;
  double map = 0.0;
  double mrr = 0.0;
  double precision_at_1 = 0.0;
  std::size_t n_groups = 0;
  std::size_t n_excluded = 0;

  nlohmann::json ToJson() const;
};

// Candidate indices from best to worst (stable for ties).
std::vector<std::size_t> RankOrder(const RankedGroup& group);

// Mean over groups of |positives in top k| / |positives|. Every group must
// have the same number of candidates (>= 2).
double RecallAtK(const std::vector<RankedGroup>& groups, std::size_t k,
                 std::size_t* excluded = nullptr);
double MeanAveragePrecision(const std::vector<RankedGroup>& groups);
double MeanReciprocalRank(const std::vector<RankedGroup>& groups);
double PrecisionAt1(const std::vector<RankedGroup>& groups);
double AveragePrecision(const RankedGroup& group);

MetricReport Evaluate(const std::vector<RankedGroup>& groups);

// Fraction of predictions equal to labels. Throws on empty or mismatched
// input.
double TaskAccuracy(std::span<const std::size_t> predictions,
                    std::span<const std::size_t> labels);

// ---- data files ----

// {"group_id", "context": [...], "response", "label"} per line. Candidates
// of one group must share their context; label must be 0 or 1.
std::vector<DialogueExample> ReadDialogueExamples(std::istream& in);
std::vector<DialogueExample> ReadDialogueExamples(
    const std::filesystem::path& path);
void WriteDialogueExamples(const std::vector<DialogueExample>& examples,
                           std::ostream& out);

// Groups scored examples by group_id in order of first appearance.
std::vector<RankedGroup> GroupScores(
    const std::vector<DialogueExample>& examples,
    std::span<const double> scores);

// {"group_id", "scores": [...], "labels": [...]} per line.
std::vector<RankedGroup> ReadScoredGroups(std::istream& in);
std::vector<RankedGroup> ReadScoredGroups(const std::filesystem::path& path);

}  // namespace dopt::evaluation

#endif  // DOPT_EVALUATION_H_
