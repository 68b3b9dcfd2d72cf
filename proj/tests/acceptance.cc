// Acceptance suite: one PASS/FAIL line per criterion.

#include <boost/rational.hpp>

#include <chrono>
#include <cfloat>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <iostream>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "dopt/corpus.h"
#include "dopt/evaluation.h"
#include "dopt/model.h"
#include "dopt/samplegen.h"
#include "dopt/synth.h"
#include "dopt/training.h"
#include "support.h"

namespace fs = std::filesystem;
using namespace dopt;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double Seconds(Clock::time_point since) {
  return std::chrono::duration<double>(Clock::now() - since).count();
}

std::string Fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

// ---- 1 ----

Outcome SampleConstruction() {
  const auto start = Clock::now();
  synth::CorpusOptions o;
  o.articles = 1800;
  o.seed = 101;
  o.min_sentences = 6;
  o.max_sentences = 12;
  const auto articles = synth::MakeCorpus(o);
  samplegen::GenerationConfig cfg;
  cfg.dense = true;
  cfg.seed = 7;
  samplegen::SourceIndex index;
  index.Add(articles);
  const std::size_t n_labels[] = {3, 4, 5};
  std::ostringstream detail;
  bool pass = true;
  for (corpus::Task t : corpus::kAllTasks) {
    const auto samples = samplegen::GenerateGeneral(articles, t, cfg);
    std::size_t valid = 0;
    std::vector<std::size_t> counts(n_labels[static_cast<int>(t)], 0);
    std::set<std::string> patterns;
    for (const auto& s : samples) {
      valid += samplegen::ValidateSample(s, index, &cfg).ok;
      ++counts.at(static_cast<std::size_t>(samplegen::LabelOf(s)));
      if (t == corpus::Task::kInsertion) {
        patterns.insert(samplegen::SpeakerPattern(std::get<samplegen::InsertionSample>(s)));
      }
    }
    const double p = testing::UniformChiSquareP(counts);
    const bool ok = samples.size() >= 10000 && valid == samples.size() && p > 0.01 &&
                    (t != corpus::Task::kInsertion ||
                     patterns == std::set<std::string>{"AABB", "ABAB", "ABBA"});
    pass = pass && ok;
    detail << corpus::TaskName(t) << " n=" << samples.size() << " valid=" << valid
           << " p=" << Fmt("%.3f", p) << "; ";
  }
  const double secs = Seconds(start);
  pass = pass && secs < 60.0;
  detail << Fmt("%.1fs", secs);
  return {pass, detail.str()};
}

// ---- 2 ----

Outcome PartitionLaw() {
  Rng rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + UniformIndex(rng, 200);
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < n; ++i) ids.push_back("id" + std::to_string(rng()));
    const auto part = corpus::PartitionArticles(ids, rng());
    std::multiset<std::string> seen;
    std::size_t lo = SIZE_MAX, hi = 0;
    for (const auto& set : part.sets) {
      seen.insert(set.begin(), set.end());
      lo = std::min(lo, set.size());
      hi = std::max(hi, set.size());
    }
    const std::multiset<std::string> expect(ids.begin(), ids.end());
    if (seen != expect || hi - lo > 1) {
      return {false, "trial " + std::to_string(trial) + " n=" + std::to_string(n)};
    }
  }
  return {true, "1000 trials disjoint, exhaustive, balanced within 1"};
}

// ---- 3 ----

Outcome GradientCorrectness() {
  const auto start = Clock::now();
  const auto v = tokenizer::BuildVocab({"a b c d e f"}, 100, 1);
  model::Model m(testing::SmallConfig(static_cast<int>(v.size()), 16, 2, 13));
  // The match head starts at zero; move it so the GRU gradients are live.
  Rng rng(4);
  for (double& x : m.params().match_w.shared()->value) x = 2 * UniformUnit(rng) - 1;
  for (double& x : m.params().replace_w.shared()->value) x = 2 * UniformUnit(rng) - 1;
  const auto seq = tokenizer::AssembleResponseSelection({"a b", "c", "d e"}, "f", v, 64);
  std::vector<nd::Tensor> params;
  std::vector<std::string> names;
  for (const auto& [name, t] : m.named_parameters()) {
    params.push_back(t);
    names.push_back(name);
  }
  auto sot = [&](nd::Tape& t) {
    return model::Model::GatherSot(t, m.EncodeOne(t, seq), seq.sot_positions);
  };
  const std::vector<std::pair<std::string, nd::LossFn>> losses = {
      {"insertion", [&](nd::Tape& t) { return model::TaskLoss(t, model::Model::InsertionScores(t, sot(t)), 2); }},
      {"deletion", [&](nd::Tape& t) { return model::TaskLoss(t, model::Model::DeletionScores(t, sot(t)), 1); }},
      {"replacement", [&](nd::Tape& t) { return model::TaskLoss(t, m.ReplacementScores(t, sot(t)), 3); }},
      {"match", [&](nd::Tape& t) { return model::MatchLoss(t, m.MatchScore(t, sot(t)), 1); }},
  };
  bool pass = true;
  std::ostringstream detail;
  for (const auto& [name, fn] : losses) {
    const auto report = nd::FiniteDiffCheck(fn, params, names, 1e-5);
    pass = pass && report.max_rel_error < 1e-4;
    detail << name << "=" << Fmt("%.2e", report.max_rel_error) << " ";
  }
  const double secs = Seconds(start);
  detail << Fmt("%.1fs", secs);
  return {pass && secs < 120.0, detail.str()};
}

// ---- 4 ----

Outcome LossIdentities() {
  nd::Tape tape;
  double worst_ce = 0;
  for (std::size_t n = 2; n <= 12; ++n) {
    const auto scores = nd::Tensor::Constant({n}, std::vector<double>(n, 0.37));
    const double ce = model::TaskLoss(tape, scores, n / 2).item();
    worst_ce = std::max(worst_ce, std::abs(ce - std::log(static_cast<double>(n))));
  }
  Rng rng(8);
  bool sums = true;
  for (int i = 0; i < 1000; ++i) {
    const double a = UniformUnit(rng) * 3, b = UniformUnit(rng) * 3, c = UniformUnit(rng) * 3,
                 d = UniformUnit(rng) * 3;
    const auto ta = nd::Tensor::Scalar(a), tb = nd::Tensor::Scalar(b),
               tc = nd::Tensor::Scalar(c), td = nd::Tensor::Scalar(d);
    sums = sums && model::LGen(tape, ta, tb, tc).item() == (a + b) + c &&
           model::LFinal(tape, ta, tb, tc, td).item() == ((a + b) + c) + d &&
           model::LGen(a, b, c) == (a + b) + c &&
           model::LFinal(a, b, c, d) == ((a + b) + c) + d;
  }
  const auto half = nd::Tensor::Scalar(0.5);
  const double m1 = std::abs(model::MatchLoss(tape, half, 1).item() - std::log(2.0));
  const double m0 = std::abs(model::MatchLoss(tape, half, 0).item() - std::log(2.0));
  const bool pass = worst_ce < 1e-6 && sums && m1 < 1e-9 && m0 < 1e-9;
  return {pass, "ce err " + Fmt("%.1e", worst_ce) + ", sums " + (sums ? "bitwise" : "differ") +
                    ", match err " + Fmt("%.1e", std::max(m0, m1))};
}

// ---- 5 ----

Outcome Trainability() {
  const auto start = Clock::now();
  const auto suite = testing::MakePretrainSuite(64, 5, 60);
  const auto vocab = testing::VocabFor(testing::Flatten(suite));
  training::PretrainData data;
  data.train = suite.samples;
  data.valid = suite.samples;
  for (const auto& s : suite.samples) {
    if (s.size() != 64) return {false, "suite has " + std::to_string(s.size()) + " samples"};
  }
  auto mcfg = testing::SmallConfig(static_cast<int>(vocab.size()), 32, 2, 21);
  mcfg.heads = 4;
  model::Model m(mcfg);
  training::TrainConfig cfg;
  cfg.lr = 2e-3;
  cfg.batch_size = 8;
  cfg.epochs = 500;
  cfg.max_len = 128;
  cfg.seed = 3;
  cfg.stop_at = 0.95;
  const auto r = training::Pretrain(m, data, vocab, cfg);
  std::array<double, 3> acc{};
  for (corpus::Task t : corpus::kAllTasks) {
    const auto i = static_cast<std::size_t>(t);
    acc[i] = training::TaskAccuracyOf(m, data.train[i], vocab, 128);
  }
  const double epochs = static_cast<double>(r.losses.size()) / 8.0;
  const double secs = Seconds(start);
  const bool fit = acc[0] >= 0.95 && acc[1] >= 0.95 && acc[2] >= 0.95 && secs < 600;

  // Ablation isolation under shared seeds and independent data streams.
  auto trace = [&](training::TaskFlags flags) {
    model::Model fresh(mcfg);
    auto c = cfg;
    c.epochs = 3;
    c.stop_at = 0;
    c.tasks = flags;
    c.dry_run = true;
    return training::Pretrain(fresh, data, vocab, c).losses;
  };
  const auto full = trace({});
  bool isolated = true;
  for (std::size_t off = 0; off < 3; ++off) {
    training::TaskFlags flags;
    (off == 0 ? flags.insertion : off == 1 ? flags.deletion : flags.replacement) = false;
    const auto ablated = trace(flags);
    isolated = isolated && ablated.size() == full.size();
    for (std::size_t s = 0; isolated && s < full.size(); ++s) {
      for (std::size_t k = 0; k < 3; ++k) {
        if (k == off) {
          isolated = isolated && !ablated[s].terms[k];
        } else {
          isolated = isolated && ablated[s].terms[k] == full[s].terms[k];
        }
      }
    }
  }
  std::ostringstream detail;
  detail << "acc ins/del/rep " << Fmt("%.3f", acc[0]) << "/" << Fmt("%.3f", acc[1]) << "/"
         << Fmt("%.3f", acc[2]) << " after " << epochs << " epochs, " << Fmt("%.0fs", secs)
         << "; ablation traces " << (isolated ? "identical" : "differ");
  return {fit && isolated, detail.str()};
}

// ---- 6 ----

Outcome FinetuneSanity() {
  synth::DialogueOptions o;
  o.groups = 120;
  o.seed = 31;
  const auto train = synth::MakeDialogues(o);
  o.groups = 100;
  o.seed = 32;
  const auto valid = synth::MakeDialogues(o);
  auto all = train;
  all.insert(all.end(), valid.begin(), valid.end());
  const auto vocab = testing::VocabFor(all);
  const auto mcfg = testing::SmallConfig(static_cast<int>(vocab.size()), 16, 2, 9);
  training::TrainConfig cfg;
  cfg.lr = 3e-3;
  cfg.epochs = 20;
  cfg.batch_size = 8;
  cfg.max_len = 128;
  cfg.seed = 4;
  cfg.stop_at = 0.99;
  model::Model m(mcfg);
  const auto r = training::Finetune(m, train, valid, vocab, cfg);
  const auto report = training::EvaluateRanking(r.best.ToModel(), valid, vocab, 128);

  // Multitask with every auxiliary off against finetune, step by step.
  cfg.epochs = 2;
  cfg.stop_at = 0;
  model::Model a(mcfg), b(mcfg);
  const auto ft = training::Finetune(a, train, valid, vocab, cfg);
  cfg.tasks = {false, false, false, true};
  const auto mt = training::DomainMultitask(b, train, valid, vocab, cfg);
  bool same = ft.losses.size() == mt.losses.size();
  for (std::size_t i = 0; same && i < ft.losses.size(); ++i) {
    same = ft.losses[i].total == mt.losses[i].total;
  }
  std::ostringstream detail;
  detail << "R_2@1=" << Fmt("%.3f", report.recall_at_1) << " after " << r.history.size()
         << " epochs; multitask trace " << (same ? "identical" : "differs");
  return {report.n == 2 && report.recall_at_1 >= 0.99 && r.history.size() <= 20 && same,
          detail.str()};
}

// ---- 7 ----

struct Brute {
  double r1 = 0, r2 = 0, r5 = 0, map = 0, mrr = 0, p1 = 0;
};

// Positions by explicit tournament: candidate i beats j if its score is
// higher, or equal with a smaller index.
Brute BruteMetrics(const std::vector<evaluation::RankedGroup>& groups) {
  Brute b;
  std::size_t counted = 0;
  for (const auto& g : groups) {
    const std::size_t n = g.candidates.size();
    std::vector<std::size_t> rank(n, 0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (j != i && (g.candidates[j].score > g.candidates[i].score ||
                       (g.candidates[j].score == g.candidates[i].score && j < i)))
          ++rank[i];
    std::vector<int> by_rank(n);
    for (std::size_t i = 0; i < n; ++i) by_rank[rank[i]] = g.candidates[i].label;
    std::size_t total = 0;
    for (int l : by_rank) total += l;
    if (total == 0) continue;
    ++counted;
    std::size_t hits = 0;
    double ap = 0, rr = 0;
    std::size_t at[3] = {0, 0, 0};
    for (std::size_t r = 0; r < n; ++r) {
      if (!by_rank[r]) continue;
      ++hits;
      ap += static_cast<double>(hits) / static_cast<double>(r + 1);
      if (rr == 0) rr = 1.0 / static_cast<double>(r + 1);
      at[0] += r < 1;
      at[1] += r < 2;
      at[2] += r < 5;
    }
    const double t = static_cast<double>(total);
    b.r1 += at[0] / t;
    b.r2 += at[1] / t;
    b.r5 += at[2] / t;
    b.map += ap / t;
    b.mrr += rr;
    b.p1 += by_rank[0];
  }
  if (counted) {
    for (double* x : {&b.r1, &b.r2, &b.r5, &b.map, &b.mrr, &b.p1}) *x /= static_cast<double>(counted);
  }
  return b;
}

Outcome MetricOracles() {
  Rng rng(77);
  double worst = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + UniformIndex(rng, 14);
    std::vector<evaluation::RankedGroup> groups(1 + UniformIndex(rng, 4));
    for (auto& g : groups) {
      for (std::size_t c = 0; c < n; ++c) {
        g.candidates.push_back({static_cast<double>(UniformIndex(rng, 5)) * 0.25,
                                UniformIndex(rng, 3) == 0 ? 1 : 0});
      }
    }
    const auto r = evaluation::Evaluate(groups);
    const auto b = BruteMetrics(groups);
    for (auto [x, y] : {std::pair{r.recall_at_1, b.r1}, {r.recall_at_2, b.r2},
                        {r.recall_at_5, b.r5}, {r.map, b.map}, {r.mrr, b.mrr},
                        {r.precision_at_1, b.p1}}) {
      worst = std::max(worst, std::abs(x - y));
    }
  }
  // AP of labels [1,0,1,0] in rank order, accumulated in exact rationals.
  using Q = boost::rational<long long>;
  const std::vector<int> ranked{1, 0, 1, 0};
  Q sum(0);
  long long hits = 0;
  for (std::size_t r = 0; r < ranked.size(); ++r) {
    if (ranked[r]) sum += Q(++hits, static_cast<long long>(r + 1));
  }
  const Q exact = sum / Q(hits);
  evaluation::RankedGroup hand{"hand", {{4, 1}, {3, 0}, {2, 1}, {1, 0}}};
  const double ap = evaluation::AveragePrecision(hand);
  // The library works in doubles; it must sit within one rounding of 5/6.
  const double target = boost::rational_cast<double>(exact);
  const bool hand_ok = exact == Q(5, 6) && std::abs(ap - target) <= 2 * DBL_EPSILON;
  return {worst < 1e-9 && hand_ok,
          "max deviation " + Fmt("%.1e", worst) + " over 1000 groups; AP hand case " +
              "exact 5/6, library " + Fmt("%.17g", ap)};
}

// ---- 8 ----

Outcome CheckpointRoundTrip() {
  const auto suite = testing::MakePretrainSuite(8, 2, 20);
  const auto vocab = testing::VocabFor(testing::Flatten(suite));
  model::Model m(testing::SmallConfig(static_cast<int>(vocab.size()), 16, 2, 6));
  training::TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.max_len = 128;
  training::PretrainData data;
  data.train = suite.samples;
  data.valid = suite.samples;
  const auto r = training::Pretrain(m, data, vocab, cfg);
  const fs::path path = fs::temp_directory_path() / "dopt_acceptance.ckpt";
  training::SaveCheckpoint(r.last, path);
  const auto loaded = training::LoadCheckpoint(path).ToModel();
  fs::remove(path);
  std::size_t compared = 0;
  for (const auto& s : testing::Flatten(suite)) {
    const auto seq = tokenizer::Assemble(s, vocab, 128);
    nd::Tape ta, tb;
    const auto a = m.EncodeOne(ta, seq), b = loaded.EncodeOne(tb, seq);
    if (!std::equal(a.values().begin(), a.values().end(), b.values().begin())) {
      return {false, "encoder outputs differ"};
    }
    const auto sa = m.MatchScore(ta, model::Model::GatherSot(ta, a, seq.sot_positions));
    const auto sb = loaded.MatchScore(tb, model::Model::GatherSot(tb, b, seq.sot_positions));
    if (sa.item() != sb.item()) return {false, "match scores differ"};
    compared += a.size() + 1;
  }
  return {true, std::to_string(compared) + " probe values bit-identical"};
}

// ---- 9 and 10: the command-line pipeline ----

// Runs a shell command, returning its exit status and stdout.
std::pair<int, std::string> Run(const std::string& cmd) {
  std::string out;
  FILE* pipe = popen((cmd + " 2>/dev/null").c_str(), "r");
  if (!pipe) return {-1, out};
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof(buf), pipe)) out.append(buf, n);
  const int status = pclose(pipe);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

std::string Slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string Quote(const fs::path& p) { return "'" + p.string() + "'"; }

struct Pipeline {
  fs::path root;
  std::string failure;

  // Synthetic inputs plus a small config shared by both runs.
  bool Prepare() {
    fs::remove_all(root);
    fs::create_directories(root);
    const auto [code, out] = Run(Quote(DOPT_CLI_PATH) + " --seed 11 synth --dir " +
                                 Quote(root / "data") + " --articles 45 --groups 40");
    if (code != 0) {
      failure = "synth exited " + std::to_string(code);
      return false;
    }
    const nlohmann::json cfg = {
        {"profile", "desk"},
        {"seed", 11},
        {"corpus", {{"path", "corpus.jsonl"}}},
        {"dialogues",
         {{"train", "dialogues.train.jsonl"},
          {"valid", "dialogues.valid.jsonl"},
          {"test", "dialogues.test.jsonl"}}},
        {"encoder", {{"d_model", 16}, {"d_ff", 32}, {"heads", 2}, {"max_positions", 256}}},
        {"pretrain", {{"max_len", 256}, {"epochs", 1}}},
        {"finetune", {{"max_len", 256}, {"epochs", 2}}},
    };
    std::ofstream(root / "data" / "config.json") << cfg.dump(2);
    return true;
  }

  bool Chain(const std::string& out) {
    const std::string base = Quote(DOPT_CLI_PATH) + " -q -c " + Quote(root / "data" / "config.json") +
                             " --out " + Quote(root / out) + " ";
    for (const std::string& step : std::vector<std::string>{"ingest", "partition", "gen --task all", "vocab", "pretrain",
          "finetune --init " + Quote(root / out / "pretrain" / "best.ckpt"), "eval"}) {
      const auto [code, text] = Run(base + step);
      if (code != 0) {
        failure = out + ": `" + step + "` exited " + std::to_string(code);
        return false;
      }
    }
    return true;
  }
};

fs::path PipelineRoot() { return fs::temp_directory_path() / "dopt_acceptance_pipeline"; }

Outcome PipelineDeterminism() {
  Pipeline p{PipelineRoot(), ""};
  if (!p.Prepare() || !p.Chain("run_a") || !p.Chain("run_b")) return {false, p.failure};
  std::vector<fs::path> compared;
  for (const char* task : {"insertion", "deletion", "replacement"}) {
    for (const char* split : {"train", "valid"}) {
      compared.push_back(fs::path("samples") / (std::string(task) + "." + split + ".jsonl"));
    }
  }
  compared.push_back("vocab.json");
  compared.push_back("pretrain/loss.csv");
  compared.push_back("finetune/loss.csv");
  compared.push_back("eval/metrics.test.json");
  std::size_t bytes = 0;
  for (const auto& rel : compared) {
    const auto a = Slurp(p.root / "run_a" / rel), b = Slurp(p.root / "run_b" / rel);
    if (a.empty() || a != b) return {false, rel.string() + " differs or is empty"};
    bytes += a.size();
  }
  return {true, std::to_string(compared.size()) + " artifacts byte-identical (" +
                    std::to_string(bytes) + " bytes), metrics " +
                    nlohmann::json::parse(Slurp(p.root / "run_a" / "eval/metrics.test.json"))
                        .at("R_n@1")
                        .dump() +
                    " R_n@1"};
}

std::size_t CountLines(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) n += !line.empty();
  return n;
}

Outcome StatsShape() {
  const fs::path root = PipelineRoot();
  if (!fs::exists(root / "run_a" / "samples")) {
    Pipeline p{root, ""};
    if (!p.Prepare() || !p.Chain("run_a")) return {false, p.failure};
  }
  const auto [code, text] = Run(Quote(DOPT_CLI_PATH) + " -q -c " +
                                Quote(root / "data" / "config.json") + " --out " +
                                Quote(root / "run_a") + " stats");
  if (code != 0) return {false, "stats exited " + std::to_string(code)};
  std::istringstream lines(text);
  std::vector<std::string> rows;
  for (std::string line; std::getline(lines, line);) rows.push_back(line);
  if (rows.size() != 6) return {false, "expected 6 lines, got " + std::to_string(rows.size())};
  const std::regex header(R"(Statistics +\| +Train \| +Valid)");
  const std::regex rule(R"(-+\+-+\+-+)");
  const std::regex articles(R"(#articles/task +\| +[0-9/]+ \| +[0-9/]+)");
  bool ok = std::regex_match(rows[0], header) && std::regex_match(rows[1], rule) &&
            std::regex_match(rows[2], articles);
  const char* names[] = {"Insertion", "Deletion", "Replacement"};
  const char* files[] = {"insertion", "deletion", "replacement"};
  for (int t = 0; t < 3; ++t) {
    std::smatch m;
    const std::regex row(std::string(names[t]) + R"( +\| +([0-9]+) \| +([0-9]+))");
    if (!std::regex_match(rows[3 + t], m, row)) {
      ok = false;
      continue;
    }
    const auto samples = root / "run_a" / "samples";
    ok = ok && std::stoul(m[1]) == CountLines(samples / (std::string(files[t]) + ".train.jsonl")) &&
         std::stoul(m[2]) == CountLines(samples / (std::string(files[t]) + ".valid.jsonl"));
  }
  // Column bars line up on every row.
  const auto bar = rows[0].find('|');
  for (const auto& r : rows) ok = ok && (r.find('|') == bar || r.find('+') == bar);
  fs::remove_all(root);
  return {ok, ok ? "table rows and columns match the sample files" : "layout mismatch:\n" + text};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"sample construction oracle", SampleConstruction},
      {"partition law", PartitionLaw},
      {"gradient correctness", GradientCorrectness},
      {"loss identities", LossIdentities},
      {"overfit trainability and ablation isolation", Trainability},
      {"fine-tuning sanity", FinetuneSanity},
      {"metric oracles", MetricOracles},
      {"checkpoint round trip", CheckpointRoundTrip},
      {"pipeline determinism", PipelineDeterminism},
      {"stats table shape", StatsShape},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << "criterion " << id << " " << (o.pass ? "PASS" : "FAIL") << " "
              << criteria[i].first << ": " << o.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
