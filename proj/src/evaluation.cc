#include "dopt/evaluation.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include "dopt/common.h"

namespace dopt::evaluation {
namespace {

using nlohmann::json;

std::size_t Positives(const RankedGroup& g) {
  return static_cast<std::size_t>(
      std::count_if(g.candidates.begin(), g.candidates.end(),
                    [](const Candidate& c) { return c.label > 0; }));
}

void CheckGroups(const std::vector<RankedGroup>& groups) {
  for (const auto& g : groups) {
    if (g.candidates.size() < 2) {
      throw FormatError("group '" + g.group_id + "' has fewer than 2 candidates");
    }
    for (const auto& c : g.candidates) {
      if (!std::isfinite(c.score)) {
        throw FormatError("group '" + g.group_id + "' has a non-finite score");
      }
    }
  }
}

// Mean of fn(group) over groups with at least one positive.
template <typename Fn>
double MeanOverPositiveGroups(const std::vector<RankedGroup>& groups, Fn fn,
                              std::size_t* excluded = nullptr) {
  CheckGroups(groups);
  double total = 0.0;
  std::size_t counted = 0;
  for (const auto& g : groups) {
    if (Positives(g) == 0) continue;
    total += fn(g);
    ++counted;
  }
  if (excluded) *excluded = groups.size() - counted;
  return counted == 0 ? 0.0 : total / static_cast<double>(counted);
}

}  // namespace

json MetricReport::ToJson() const {
  return json{{"schema_version", 1},
              {"n", n},
              {"R_n@1", recall_at_1},
              {"R_n@2", recall_at_2},
              {"R_n@5", recall_at_5},
              {"MAP", map},
              {"MRR", mrr},
              {"P@1", precision_at_1},
              {"n_groups", n_groups},
              {"n_excluded", n_excluded}};
}

std::vector<std::size_t> RankOrder(const RankedGroup& group) {
  std::vector<std::size_t> order(group.candidates.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     return group.candidates[a].score >
                            group.candidates[b].score;
                   });
  return order;
}

double RecallAtK(const std::vector<RankedGroup>& groups, std::size_t k,
                 std::size_t* excluded) {
  if (!groups.empty()) {
    const std::size_t n = groups.front().candidates.size();
    for (const auto& g : groups) {
      if (g.candidates.size() != n) {
        throw FormatError("R_n@k needs equal group sizes; group '" +
                          g.group_id + "' has " +
                          std::to_string(g.candidates.size()) + " vs " +
                          std::to_string(n));
      }
    }
  }
  return MeanOverPositiveGroups(
      groups,
      [k](const RankedGroup& g) {
        const auto order = RankOrder(g);
        std::size_t hits = 0;
        for (std::size_t r = 0; r < std::min(k, order.size()); ++r) {
          if (g.candidates[order[r]].label > 0) ++hits;
        }
        return static_cast<double>(hits) / static_cast<double>(Positives(g));
      },
      excluded);
}

double AveragePrecision(const RankedGroup& group) {
  const auto order = RankOrder(group);
  std::size_t hits = 0;
  double sum = 0.0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    if (group.candidates[order[r]].label > 0) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(r + 1);
    }
  }
  return hits == 0 ? 0.0 : sum / static_cast<double>(hits);
}

double MeanAveragePrecision(const std::vector<RankedGroup>& groups) {
  return MeanOverPositiveGroups(groups, AveragePrecision);
}

double MeanReciprocalRank(const std::vector<RankedGroup>& groups) {
  return MeanOverPositiveGroups(groups, [](const RankedGroup& g) {
    const auto order = RankOrder(g);
    for (std::size_t r = 0; r < order.size(); ++r) {
      if (g.candidates[order[r]].label > 0) {
        return 1.0 / static_cast<double>(r + 1);
      }
    }
    return 0.0;
  });
}

double PrecisionAt1(const std::vector<RankedGroup>& groups) {
  return MeanOverPositiveGroups(groups, [](const RankedGroup& g) {
    return g.candidates[RankOrder(g).front()].label > 0 ? 1.0 : 0.0;
  });
}

MetricReport Evaluate(const std::vector<RankedGroup>& groups) {
  MetricReport r;
  r.n = groups.empty() ? 0 : groups.front().candidates.size();
  r.n_groups = groups.size();
  r.recall_at_1 = RecallAtK(groups, 1, &r.n_excluded);
  r.recall_at_2 = RecallAtK(groups, 2);
  r.recall_at_5 = RecallAtK(groups, 5);
  r.map = MeanAveragePrecision(groups);
  r.mrr = MeanReciprocalRank(groups);
  r.precision_at_1 = PrecisionAt1(groups);
  return r;
}

double TaskAccuracy(std::span<const std::size_t> predictions,
                    std::span<const std::size_t> labels) {
  if (predictions.empty()) throw std::invalid_argument("accuracy of empty set");
  if (predictions.size() != labels.size()) {
    throw std::invalid_argument("predictions and labels differ in length");
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (predictions[i] == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(predictions.size());
}

std::vector<DialogueExample> ReadDialogueExamples(std::istream& in) {
  std::vector<DialogueExample> out;
  std::map<std::string, std::size_t> context_of;  // group -> first example
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (Trim(line).empty()) continue;
    DialogueExample ex;
    try {
      const json j = json::parse(line);
      ex.group_id = j.at("group_id").is_string()
                        ? j.at("group_id").get<std::string>()
                        : j.at("group_id").dump();
      ex.context = j.at("context").get<std::vector<std::string>>();
      ex.response = j.at("response").get<std::string>();
      ex.label = j.at("label").get<int>();
    } catch (const json::exception& e) {
      throw FormatError("line " + std::to_string(line_no) + ": " + e.what());
    }
    if (ex.context.empty()) {
      throw FormatError("line " + std::to_string(line_no) + ": empty context");
    }
    if (ex.label != 0 && ex.label != 1) {
      throw FormatError("line " + std::to_string(line_no) +
                        ": label must be 0 or 1");
    }
    auto [it, inserted] = context_of.emplace(ex.group_id, out.size());
    if (!inserted && out[it->second].context != ex.context) {
      throw FormatError("line " + std::to_string(line_no) + ": group '" +
                        ex.group_id + "' changes its context");
    }
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<DialogueExample> ReadDialogueExamples(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  return ReadDialogueExamples(in);
}

void WriteDialogueExamples(const std::vector<DialogueExample>& examples,
                           std::ostream& out) {
  for (const auto& ex : examples) {
    out << json{{"group_id", ex.group_id},
                {"context", ex.context},
                {"response", ex.response},
                {"label", ex.label}}
               .dump()
        << '\n';
  }
}

std::vector<RankedGroup> GroupScores(
    const std::vector<DialogueExample>& examples,
    std::span<const double> scores) {
  if (scores.size() != examples.size()) {
    throw std::invalid_argument("one score per example required");
  }
  std::vector<RankedGroup> groups;
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    auto [it, inserted] = index.emplace(examples[i].group_id, groups.size());
    if (inserted) groups.push_back({examples[i].group_id, {}});
    groups[it->second].candidates.push_back({scores[i], examples[i].label});
  }
  return groups;
}

std::vector<RankedGroup> ReadScoredGroups(std::istream& in) {
  std::vector<RankedGroup> groups;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (Trim(line).empty()) continue;
    RankedGroup g;
    try {
      const json j = json::parse(line);
      g.group_id = j.value("group_id", std::to_string(groups.size()));
      const auto scores = j.at("scores").get<std::vector<double>>();
      const auto labels = j.at("labels").get<std::vector<int>>();
      if (scores.size() != labels.size()) {
        throw FormatError("scores and labels differ in length");
      }
      for (std::size_t i = 0; i < scores.size(); ++i) {
        g.candidates.push_back({scores[i], labels[i]});
      }
    } catch (const std::exception& e) {
      throw FormatError("line " + std::to_string(line_no) + ": " + e.what());
    }
    groups.push_back(std::move(g));
  }
  return groups;
}

std::vector<RankedGroup> ReadScoredGroups(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  return ReadScoredGroups(in);
}

}  // namespace dopt::evaluation
