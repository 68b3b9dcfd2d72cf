// dopt: batch pipeline from raw articles to response-selection metrics.
//
//   dopt --config run.json ingest
//   dopt --config run.json partition
//   dopt --config run.json gen --task all
//   dopt --config run.json vocab
//   dopt --config run.json pretrain
//   dopt --config run.json finetune --init out/pretrain/best.ckpt
//   dopt --config run.json eval
//
// Every command writes under the configured output directory and records a
// manifest in <out>/manifests/.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dopt/common.h"
#include "dopt/corpus.h"
#include "dopt/evaluation.h"
#include "dopt/model.h"
#include "dopt/ndiff.h"
#include "dopt/samplegen.h"
#include "dopt/synth.h"
#include "dopt/tokenizer.h"
#include "dopt/training.h"
#include "manifest.h"
#include "run_config.h"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dopt;
using cli::Manifest;
using cli::RunConfig;

// A required artifact that another command produces.
class MissingPrerequisite : public std::runtime_error {
 public:
  MissingPrerequisite(const fs::path& path, std::string producer)
      : std::runtime_error("missing " + path.string() + "; run `dopt " +
                           producer + "` first"),
        producer_(std::move(producer)) {}
  const std::string& producer() const { return producer_; }

 private:
  std::string producer_;
};

const fs::path& Require(const fs::path& path, const std::string& producer) {
  if (!fs::exists(path)) throw MissingPrerequisite(path, producer);
  return path;
}

const fs::path& RequireConfigured(const fs::path& path, const std::string& key) {
  if (path.empty()) throw ConfigError(key + " is not set in the config");
  if (!fs::exists(path)) throw ConfigError(key + " does not exist: " + path.string());
  return path;
}

struct Layout {
  fs::path root;

  fs::path Articles() const { return root / "articles.jsonl"; }
  fs::path CorpusStats() const { return root / "corpus_stats.json"; }
  fs::path Partition() const { return root / "partition.json"; }
  fs::path Samples(corpus::Task t, const std::string& split) const {
    return root / "samples" / (std::string(corpus::TaskName(t)) + "." + split + ".jsonl");
  }
  fs::path SampleStats(corpus::Task t) const {
    return root / "samples" / (std::string(corpus::TaskName(t)) + ".stats.json");
  }
  fs::path Vocab() const { return root / "vocab.json"; }
  fs::path Regime(const std::string& name) const { return root / name; }
};

struct Session {
  RunConfig cfg;
  Layout out;
  std::vector<std::string> argv;
  bool quiet = false;

  Manifest NewManifest(const std::string& command) const {
    return Manifest(command, argv, cfg.resolved, out.root);
  }
};

void WriteJson(const fs::path& path, const json& j) {
  fs::create_directories(path.parent_path());
  std::ofstream f(path);
  f << j.dump(2) << '\n';
  if (!f) throw std::runtime_error("cannot write " + path.string());
}

json ReadJson(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw FormatError("cannot open " + path.string());
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::vector<corpus::Task> ParseTasks(const std::string& spec) {
  if (spec == "all") return {corpus::kAllTasks.begin(), corpus::kAllTasks.end()};
  return {corpus::ParseTask(spec)};
}

std::vector<corpus::Article> LoadArticles(const Session& s) {
  return corpus::IngestJsonl(Require(s.out.Articles(), "ingest"));
}

// ---- ingest / partition / gen ----

int Ingest(const Session& s, const std::optional<fs::path>& input) {
  const fs::path src = input ? *input : s.cfg.corpus_path;
  RequireConfigured(src, "corpus.path");
  const auto articles = s.cfg.corpus_format == "raw"
                            ? corpus::IngestRawText(src, s.cfg.split)
                            : corpus::IngestJsonl(src);
  {
    std::ofstream f(s.out.Articles());
    corpus::WriteArticlesJsonl(articles, f);
  }
  const auto stats = corpus::ComputeCorpusStats(articles);
  WriteJson(s.out.CorpusStats(), corpus::CorpusStatsToJson(stats));
  auto m = s.NewManifest("ingest");
  m.Input(src);
  m.Output(s.out.Articles());
  m.Output(s.out.CorpusStats());
  m.Write("ingest");
  std::cout << "ingested " << stats.articles << " articles, " << stats.paragraphs
            << " paragraphs, " << stats.sentences << " sentences\n";
  return 0;
}

int Partition(const Session& s) {
  const auto articles = LoadArticles(s);
  std::vector<std::string> ids;
  for (const auto& a : articles) ids.push_back(a.id);
  const auto part = corpus::PartitionArticles(ids, s.cfg.seed);
  json j = corpus::PartitionToJson(part);
  j["valid_fraction"] = s.cfg.valid_fraction;
  json splits = json::object();
  for (corpus::Task t : corpus::kAllTasks) {
    const auto [train, valid] = corpus::SplitTrainValid(part.set(t), s.cfg.valid_fraction);
    splits[corpus::TaskName(t)] = {{"train", train}, {"valid", valid}};
  }
  j["splits"] = splits;
  WriteJson(s.out.Partition(), j);
  auto m = s.NewManifest("partition");
  m.Input(s.out.Articles());
  m.Output(s.out.Partition());
  m.Write("partition");
  for (corpus::Task t : corpus::kAllTasks) {
    std::cout << corpus::TaskName(t) << ": "
              << splits[corpus::TaskName(t)]["train"].size() << " train, "
              << splits[corpus::TaskName(t)]["valid"].size() << " valid articles\n";
  }
  return 0;
}

int Gen(const Session& s, const std::string& task_spec) {
  const auto tasks = ParseTasks(task_spec);
  const auto articles = LoadArticles(s);
  const json part = ReadJson(Require(s.out.Partition(), "partition"));
  std::map<std::string, const corpus::Article*> by_id;
  for (const auto& a : articles) by_id[a.id] = &a;
  auto select = [&](const json& ids) {
    std::vector<corpus::Article> out;
    for (const auto& id : ids) {
      const auto it = by_id.find(id.get<std::string>());
      if (it == by_id.end()) {
        throw FormatError("partition names unknown article '" + id.get<std::string>() +
                          "'; rerun `dopt partition`");
      }
      out.push_back(*it->second);
    }
    return out;
  };
  for (corpus::Task t : tasks) {
    const std::string name = corpus::TaskName(t);
    const json& split = part.at("splits").at(name);
    const auto train_articles = select(split.at("train"));
    const auto valid_articles = select(split.at("valid"));
    const auto train = samplegen::GenerateGeneral(train_articles, t, s.cfg.generation);
    // Validation replacements borrow donors from the whole task set, so a
    // one-article validation split still has sentences to draw from.
    auto task_articles = train_articles;
    task_articles.insert(task_articles.end(), valid_articles.begin(), valid_articles.end());
    const auto valid =
        valid_articles.empty()
            ? std::vector<samplegen::Sample>{}
            : samplegen::GenerateGeneral(valid_articles, t, s.cfg.generation, task_articles);
    fs::create_directories(s.out.Samples(t, "train").parent_path());
    samplegen::WriteSamples(train, s.out.Samples(t, "train"));
    samplegen::WriteSamples(valid, s.out.Samples(t, "valid"));
    WriteJson(s.out.SampleStats(t), {{"schema_version", 1},
                                     {"task", name},
                                     {"train_articles", train_articles.size()},
                                     {"valid_articles", valid_articles.size()},
                                     {"train", train.size()},
                                     {"valid", valid.size()}});
    auto m = s.NewManifest("gen");
    m.Input(s.out.Articles());
    m.Input(s.out.Partition());
    m.Output(s.out.Samples(t, "train"));
    m.Output(s.out.Samples(t, "valid"));
    m.Output(s.out.SampleStats(t));
    m.Write("gen." + name);
    std::cout << name << ": " << train.size() << " train, " << valid.size()
              << " valid samples\n";
  }
  return 0;
}

// ---- vocab ----

void AddSampleText(tokenizer::VocabBuilder& b, const samplegen::Sample& sample) {
  std::visit(
      [&](const auto& x) {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, samplegen::InsertionSample>) {
          b.Add(x.anchor);
          for (const auto& u : x.tail) b.Add(u);
        } else if constexpr (std::is_same_v<T, samplegen::DeletionSample>) {
          for (const auto& u : x.remaining) b.Add(u);
          b.Add(x.deleted);
        } else {
          for (const auto& u : x.utterances) b.Add(u);
        }
      },
      sample);
}

int Vocab(const Session& s) {
  tokenizer::VocabBuilder b;
  auto m = s.NewManifest("vocab");
  bool any = false;
  for (corpus::Task t : corpus::kAllTasks) {
    const fs::path p = s.out.Samples(t, "train");
    if (!fs::exists(p)) continue;
    for (const auto& sample : samplegen::ReadSamples(p)) AddSampleText(b, sample);
    m.Input(p);
    any = true;
  }
  if (!s.cfg.dialogues_train.empty()) {
    for (const auto& ex : evaluation::ReadDialogueExamples(
             RequireConfigured(s.cfg.dialogues_train, "dialogues.train"))) {
      for (const auto& u : ex.context) b.Add(u);
      b.Add(ex.response);
    }
    m.Input(s.cfg.dialogues_train);
    any = true;
  }
  if (!any) throw MissingPrerequisite(s.out.Samples(corpus::Task::kInsertion, "train"), "gen");
  const auto vocab = b.Build(s.cfg.vocab_max_size, s.cfg.vocab_min_freq);
  vocab.Save(s.out.Vocab());
  m.Output(s.out.Vocab());
  m.Write("vocab");
  std::cout << "vocab: " << vocab.size() << " entries\n";
  return 0;
}

tokenizer::Vocab LoadVocab(const Session& s) {
  return tokenizer::Vocab::Load(Require(s.out.Vocab(), "vocab"));
}

model::Model FreshModel(const Session& s, const tokenizer::Vocab& vocab) {
  auto ec = s.cfg.encoder;
  ec.vocab_size = static_cast<int>(vocab.size());
  return model::Model(ec);
}

model::Model ModelFromCheckpoint(const fs::path& path, const tokenizer::Vocab& vocab) {
  const auto ckpt = training::LoadCheckpoint(path);
  if (static_cast<std::size_t>(ckpt.config.vocab_size) != vocab.size()) {
    throw ConfigError("checkpoint " + path.string() + " has vocab size " +
                      std::to_string(ckpt.config.vocab_size) + " but vocab.json has " +
                      std::to_string(vocab.size()));
  }
  return ckpt.ToModel();
}

// ---- training ----

training::StepCallback Progress(const Session& s, const std::string& regime) {
  if (s.quiet) return {};
  return [regime](const training::StepLoss& l) {
    if (l.step % 50 != 0) return;
    std::cerr << regime << " step " << l.step << " epoch " << l.epoch << " loss "
              << std::setprecision(5) << l.total << " lr " << l.lr << '\n';
  };
}

void WriteRun(const Session& s, const std::string& regime,
              const training::TrainResult& r, Manifest& m) {
  const fs::path dir = s.out.Regime(regime);
  fs::create_directories(dir);
  training::SaveCheckpoint(r.best, dir / "best.ckpt");
  training::SaveCheckpoint(r.last, dir / "last.ckpt");
  {
    std::ofstream f(dir / "loss.csv");
    training::WriteLossCsv(r.losses, f);
  }
  auto history = training::HistoryToJson(r.history, r.best.best);
  history["skipped"] = r.skipped;
  WriteJson(dir / "history.json", history);
  for (const char* f : {"best.ckpt", "last.ckpt", "loss.csv", "history.json"}) m.Output(dir / f);
  m.Write(regime);
  const auto& best = r.history.at(*r.best.best);
  std::cout << regime << ": " << r.losses.size() << " steps, best at step " << best.step
            << " " << best.metrics.dump() << '\n';
}

int Pretrain(const Session& s) {
  const auto vocab = LoadVocab(s);
  const auto& cfg = s.cfg.pretrain;
  auto m = s.NewManifest("pretrain");
  m.Input(s.out.Vocab());
  training::PretrainData data;
  for (corpus::Task t : corpus::kAllTasks) {
    const bool on = t == corpus::Task::kInsertion   ? cfg.tasks.insertion
                    : t == corpus::Task::kDeletion ? cfg.tasks.deletion
                                                   : cfg.tasks.replacement;
    if (!on) continue;
    const std::string producer = "gen --task " + std::string(corpus::TaskName(t));
    const auto i = static_cast<std::size_t>(t);
    for (const char* split : {"train", "valid"}) {
      const fs::path p = Require(s.out.Samples(t, split), producer);
      (std::string(split) == "train" ? data.train[i] : data.valid[i]) = samplegen::ReadSamples(p);
      m.Input(p);
    }
  }
  auto model = FreshModel(s, vocab);
  const auto r = training::Pretrain(model, data, vocab, cfg, Progress(s, "pretrain"));
  WriteRun(s, "pretrain", r, m);
  return 0;
}

int ResponseSelection(const Session& s, const std::string& regime,
                      const std::optional<fs::path>& init) {
  const auto vocab = LoadVocab(s);
  auto m = s.NewManifest(regime);
  m.Input(s.out.Vocab());
  const auto train = evaluation::ReadDialogueExamples(
      RequireConfigured(s.cfg.dialogues_train, "dialogues.train"));
  const auto valid = evaluation::ReadDialogueExamples(
      RequireConfigured(s.cfg.dialogues_valid, "dialogues.valid"));
  m.Input(s.cfg.dialogues_train);
  m.Input(s.cfg.dialogues_valid);
  std::optional<model::Model> model;
  if (init) {
    model.emplace(ModelFromCheckpoint(Require(*init, "pretrain"), vocab));
    m.Input(*init);
  } else {
    model.emplace(FreshModel(s, vocab));
  }
  const bool multitask = regime == "multitask";
  const auto& cfg = multitask ? s.cfg.multitask : s.cfg.finetune;
  const auto r = multitask
                     ? training::DomainMultitask(*model, train, valid, vocab, cfg,
                                                 s.cfg.generation, Progress(s, regime))
                     : training::Finetune(*model, train, valid, vocab, cfg, Progress(s, regime));
  WriteRun(s, regime, r, m);
  return 0;
}

// ---- evaluation ----

fs::path DefaultCheckpoint(const Session& s, const std::optional<fs::path>& given) {
  if (given) return Require(*given, "finetune");
  return Require(s.out.Regime("finetune") / "best.ckpt", "finetune");
}

std::string ReportTable(const evaluation::MetricReport& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "R_" << r.n << "@1 " << r.recall_at_1 << "  R_" << r.n << "@2 " << r.recall_at_2
     << "  R_" << r.n << "@5 " << r.recall_at_5 << "  MAP " << r.map << "  MRR " << r.mrr
     << "  P@1 " << r.precision_at_1 << "  (" << r.n_groups << " groups, " << r.n_excluded
     << " without positives)";
  return os.str();
}

int Eval(const Session& s, const std::optional<fs::path>& checkpoint,
         const std::optional<std::string>& split_opt,
         const std::optional<fs::path>& scores) {
  auto m = s.NewManifest("eval");
  evaluation::MetricReport report;
  std::string split;
  if (scores) {
    split = "scores";
    report = evaluation::Evaluate(evaluation::ReadScoredGroups(*scores));
    m.Input(*scores);
  } else {
    split = split_opt.value_or(s.cfg.dialogues_test.empty() ? "valid" : "test");
    if (split != "valid" && split != "test") throw ConfigError("--split must be valid or test");
    const fs::path data = split == "test" ? s.cfg.dialogues_test : s.cfg.dialogues_valid;
    const auto examples = evaluation::ReadDialogueExamples(
        RequireConfigured(data, "dialogues." + split));
    const auto vocab = LoadVocab(s);
    const fs::path ckpt = DefaultCheckpoint(s, checkpoint);
    const auto model = ModelFromCheckpoint(ckpt, vocab);
    report = training::EvaluateRanking(model, examples, vocab,
                                       static_cast<std::size_t>(s.cfg.finetune.max_len));
    for (const auto& p : {data, s.out.Vocab(), ckpt}) m.Input(p);
  }
  const fs::path out = s.out.root / "eval" / ("metrics." + split + ".json");
  WriteJson(out, report.ToJson());
  m.Output(out);
  m.Write("eval." + split);
  std::cout << ReportTable(report) << '\n';
  return 0;
}

int Inspect(const Session& s, const fs::path& example_file,
            const std::optional<fs::path>& checkpoint, std::optional<double> threshold) {
  std::ifstream in(example_file);
  if (!in) throw ConfigError("cannot open " + example_file.string());
  const auto vocab = LoadVocab(s);
  const auto model = ModelFromCheckpoint(DefaultCheckpoint(s, checkpoint), vocab);
  const auto max_len = static_cast<std::size_t>(s.cfg.finetune.max_len);
  std::string line;
  std::size_t line_no = 0, shown = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (Trim(line).empty()) continue;
    std::vector<std::string> context;
    std::string response;
    try {
      const json j = json::parse(line);
      context = j.at("context").get<std::vector<std::string>>();
      response = j.at("response").get<std::string>();
    } catch (const json::exception& e) {
      throw FormatError(example_file.string() + " line " + std::to_string(line_no) + ": " +
                        e.what());
    }
    const auto sims = model.InspectSimilarity(context, response, vocab, max_len);
    std::cout << "example " << ++shown << "\n  response: " << response << '\n'
              << "  turn  similarity  utterance\n";
    for (std::size_t i = 0; i < context.size(); ++i) {
      std::ostringstream cell;
      if (std::isnan(sims[i])) {
        cell << "   (cut)";
      } else {
        cell << std::fixed << std::setprecision(4) << std::setw(8) << sims[i];
      }
      const bool mark = threshold && !std::isnan(sims[i]) && sims[i] >= *threshold;
      std::cout << "  " << std::setw(4) << i + 1 << "  " << std::setw(9) << cell.str()
                << (mark ? " *" : "  ") << " " << context[i] << '\n';
    }
  }
  if (shown == 0) throw FormatError(example_file.string() + " has no examples");
  return 0;
}

// ---- checks and reports ----

int GradCheck(const Session& s, int d_model, int layers, double eps, double tolerance) {
  const auto vocab = tokenizer::BuildVocab({"a b c d e f"}, 100, 1);
  model::EncoderConfig ec;
  ec.layers = layers;
  ec.heads = 2;
  ec.d_model = d_model;
  ec.d_ff = 2 * d_model;
  ec.max_positions = 64;
  ec.vocab_size = static_cast<int>(vocab.size());
  ec.dropout = 0.0;
  ec.seed = s.cfg.seed;
  model::Model m(ec);
  Rng rng(StreamRng(s.cfg.seed, "gradcheck"));
  for (nd::Tensor t : {m.params().match_w, m.params().replace_w}) {
    for (double& x : t.mutable_values()) x = 2 * UniformUnit(rng) - 1;
  }
  const auto seq = tokenizer::AssembleResponseSelection({"a b", "c", "d e"}, "f", vocab, 64);
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
      {"insertion", [&](nd::Tape& t) { return model::TaskLoss(t, model::Model::InsertionScores(t, sot(t)), 0); }},
      {"deletion", [&](nd::Tape& t) { return model::TaskLoss(t, model::Model::DeletionScores(t, sot(t)), 0); }},
      {"replacement", [&](nd::Tape& t) { return model::TaskLoss(t, m.ReplacementScores(t, sot(t)), 0); }},
      {"match", [&](nd::Tape& t) { return model::MatchLoss(t, m.MatchScore(t, sot(t)), 1); }},
  };
  json report = {{"schema_version", 1}, {"eps", eps}, {"tolerance", tolerance}};
  bool ok = true;
  std::cout << "loss         max_rel_error  worst_parameter\n";
  for (const auto& [name, fn] : losses) {
    const auto r = nd::FiniteDiffCheck(fn, params, names, eps);
    std::string worst;
    double worst_err = -1;
    for (const auto& e : r.entries) {
      if (e.max_rel_error > worst_err) {
        worst_err = e.max_rel_error;
        worst = e.name;
      }
    }
    ok = ok && r.max_rel_error < tolerance;
    report["losses"][name] = {{"max_rel_error", r.max_rel_error}, {"worst", worst}};
    std::cout << std::left << std::setw(12) << name << " " << std::scientific
              << std::setprecision(3) << r.max_rel_error << "      " << worst << '\n'
              << std::defaultfloat << std::right;
  }
  report["pass"] = ok;
  const fs::path out = s.out.root / "gradcheck.json";
  WriteJson(out, report);
  auto m_ = s.NewManifest("gradcheck");
  m_.Output(out);
  m_.Write("gradcheck");
  std::cout << (ok ? "PASS" : "FAIL") << '\n';
  return ok ? 0 : 1;
}

int Stats(const Session& s) {
  samplegen::GenerationStats stats;
  auto m = s.NewManifest("stats");
  for (corpus::Task t : corpus::kAllTasks) {
    const fs::path p = Require(s.out.SampleStats(t), "gen --task " + std::string(corpus::TaskName(t)));
    const json j = ReadJson(p);
    auto& c = stats.tasks[static_cast<std::size_t>(t)];
    c.train_articles = j.at("train_articles").get<std::size_t>();
    c.valid_articles = j.at("valid_articles").get<std::size_t>();
    c.train_samples = j.at("train").get<std::size_t>();
    c.valid_samples = j.at("valid").get<std::size_t>();
    m.Input(p);
  }
  const fs::path out = s.out.root / "stats.json";
  WriteJson(out, samplegen::StatsToJson(stats));
  m.Output(out);
  m.Write("stats");
  std::cout << samplegen::RenderStatsTable(stats);
  return 0;
}

int Validate(const Session& s) {
  const auto articles = LoadArticles(s);
  samplegen::SourceIndex index;
  index.Add(articles);
  auto m = s.NewManifest("validate");
  m.Input(s.out.Articles());
  json files = json::object();
  std::size_t total = 0, passed = 0;
  bool any = false;
  for (corpus::Task t : corpus::kAllTasks) {
    for (const char* split : {"train", "valid"}) {
      const fs::path p = s.out.Samples(t, split);
      if (!fs::exists(p)) continue;
      any = true;
      m.Input(p);
      const auto samples = samplegen::ReadSamples(p);
      std::size_t ok = 0;
      json failures = json::array();
      for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto r = samplegen::ValidateSample(samples[i], index, &s.cfg.generation);
        if (r.ok) {
          ++ok;
        } else if (failures.size() < 10) {
          failures.push_back({{"index", i}, {"reasons", r.reasons}});
        }
      }
      total += samples.size();
      passed += ok;
      files[p.filename().string()] = {{"total", samples.size()}, {"passed", ok},
                                      {"failures", failures}};
      std::cout << p.filename().string() << ": " << ok << "/" << samples.size() << " valid\n";
    }
  }
  if (!any) throw MissingPrerequisite(s.out.Samples(corpus::Task::kInsertion, "train"), "gen");
  const fs::path out = s.out.root / "validate.json";
  WriteJson(out, {{"schema_version", 1}, {"total", total}, {"passed", passed}, {"files", files}});
  m.Output(out);
  m.Write("validate");
  return passed == total ? 0 : 1;
}

// Synthetic corpus, dialogue sets and a matching config for smoke runs.
int Synth(const Session& s, const fs::path& dir, int articles, int groups, int candidates) {
  fs::create_directories(dir);
  synth::CorpusOptions co;
  co.articles = articles;
  co.seed = s.cfg.seed;
  {
    std::ofstream f(dir / "corpus.jsonl");
    corpus::WriteArticlesJsonl(synth::MakeCorpus(co), f);
  }
  const std::pair<const char*, int> sets[] = {{"train", groups}, {"valid", std::max(2, groups / 5)},
                                               {"test", std::max(2, groups / 5)}};
  std::uint64_t offset = 1;
  for (const auto& [name, n] : sets) {
    synth::DialogueOptions o;
    o.groups = n;
    o.candidates = candidates;
    o.seed = s.cfg.seed + offset++;
    std::ofstream f(dir / ("dialogues." + std::string(name) + ".jsonl"));
    evaluation::WriteDialogueExamples(synth::MakeDialogues(o), f);
  }
  const json config = {{"profile", "desk"},
                       {"output_dir", "out"},
                       {"seed", s.cfg.seed},
                       {"corpus", {{"path", "corpus.jsonl"}}},
                       {"dialogues",
                        {{"train", "dialogues.train.jsonl"},
                         {"valid", "dialogues.valid.jsonl"},
                         {"test", "dialogues.test.jsonl"}}}};
  WriteJson(dir / "config.json", config);
  std::cout << "wrote " << (dir / "config.json").string() << '\n';
  return 0;
}

void PrintError(const std::string& kind, const std::string& message,
                const std::string& producer = "") {
  json e = {{"kind", kind}, {"message", message}};
  if (!producer.empty()) e["producer"] = producer;
  std::cerr << json{{"error", e}}.dump() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dialogue-oriented pre-training workbench"};
  app.require_subcommand(1);
  app.fallthrough();

  std::optional<fs::path> config_path;
  std::optional<std::string> out_dir, profile;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
  app.add_option("-c,--config", config_path, "JSON config file");
  app.add_option("-o,--out", out_dir, "output directory (overrides output_dir)");
  app.add_option("--profile", profile, "desk | paper-settings");
  app.add_option("--seed", seed, "global seed (overrides seed)");
  app.add_flag("-q,--quiet", quiet, "no progress output");

  std::optional<fs::path> ingest_input;
  auto* ingest = app.add_subcommand("ingest", "parse the corpus into articles.jsonl");
  ingest->add_option("--input", ingest_input, "corpus file (overrides corpus.path)");

  auto* partition = app.add_subcommand("partition", "split articles into three task sets");

  std::string task = "all";
  auto* gen = app.add_subcommand("gen", "generate pre-training samples");
  gen->add_option("--task", task, "insertion | deletion | replacement | all")
      ->check(CLI::IsMember({"insertion", "deletion", "replacement", "all"}));

  auto* vocab = app.add_subcommand("vocab", "build the vocabulary");
  auto* pretrain = app.add_subcommand("pretrain", "multi-task pre-training");

  std::optional<fs::path> init;
  auto* finetune = app.add_subcommand("finetune", "response-selection fine-tuning");
  finetune->add_option("--init", init, "checkpoint to start from");
  auto* multitask = app.add_subcommand("multitask", "domain multi-task learning");
  multitask->add_option("--init", init, "checkpoint to start from");

  std::optional<fs::path> checkpoint, scores;
  std::optional<std::string> split;
  auto* eval = app.add_subcommand("eval", "ranking metrics on a dialogue split");
  eval->add_option("--checkpoint", checkpoint, "defaults to <out>/finetune/best.ckpt");
  eval->add_option("--split", split, "valid | test");
  eval->add_option("--scores", scores, "JSONL of {scores, labels} groups instead of a model");

  fs::path example;
  std::optional<double> threshold;
  auto* inspect = app.add_subcommand("inspect", "response-to-utterance similarities");
  inspect->add_option("--example", example, "JSONL of {context, response}")->required();
  inspect->add_option("--checkpoint", checkpoint, "defaults to <out>/finetune/best.ckpt");
  inspect->add_option("--threshold", threshold, "mark similarities at or above this value");

  int gc_d = 16, gc_layers = 2;
  double gc_eps = 1e-5, gc_tol = 1e-4;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every loss");
  gradcheck->add_option("--d-model", gc_d);
  gradcheck->add_option("--layers", gc_layers);
  gradcheck->add_option("--eps", gc_eps);
  gradcheck->add_option("--tolerance", gc_tol);

  auto* stats = app.add_subcommand("stats", "per-task sample counts table");
  auto* validate = app.add_subcommand("validate", "re-derive every generated sample");

  fs::path synth_dir;
  int synth_articles = 60, synth_groups = 100, synth_candidates = 2;
  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic corpus and dialogue sets");
  synth_cmd->add_option("--dir", synth_dir, "destination directory")->required();
  synth_cmd->add_option("--articles", synth_articles);
  synth_cmd->add_option("--groups", synth_groups);
  synth_cmd->add_option("--candidates", synth_candidates);

  CLI11_PARSE(app, argc, argv);

  try {
    json overrides = json::object();
    if (out_dir) overrides["output_dir"] = *out_dir;
    if (profile) overrides["profile"] = *profile;
    if (seed) overrides["seed"] = *seed;
    Session s;
    s.cfg = cli::LoadRunConfig(config_path, overrides);
    s.out.root = s.cfg.output_dir;
    s.argv.assign(argv, argv + argc);
    s.quiet = quiet;
    if (!*synth_cmd) fs::create_directories(s.out.root);

    if (*ingest) return Ingest(s, ingest_input);
    if (*partition) return Partition(s);
    if (*gen) return Gen(s, task);
    if (*vocab) return Vocab(s);
    if (*pretrain) return Pretrain(s);
    if (*finetune) return ResponseSelection(s, "finetune", init);
    if (*multitask) return ResponseSelection(s, "multitask", init);
    if (*eval) return Eval(s, checkpoint, split, scores);
    if (*inspect) return Inspect(s, example, checkpoint, threshold);
    if (*gradcheck) return GradCheck(s, gc_d, gc_layers, gc_eps, gc_tol);
    if (*stats) return Stats(s);
    if (*validate) return Validate(s);
    if (*synth_cmd) {
      return Synth(s, synth_dir, synth_articles, synth_groups, synth_candidates);
    }
  } catch (const MissingPrerequisite& e) {
    PrintError("missing_prerequisite", e.what(), e.producer());
    return 3;
  } catch (const ConfigError& e) {
    PrintError("config", e.what());
    return 2;
  } catch (const FormatError& e) {
    PrintError("format", e.what());
    return 4;
  } catch (const std::exception& e) {
    PrintError("runtime", e.what());
    return 1;
  }
  return 0;
}
