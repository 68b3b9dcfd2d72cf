#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "dopt/common.h"
#include "dopt/corpus.h"
#include "dopt/evaluation.h"
#include "dopt/model.h"
#include "dopt/samplegen.h"
#include "dopt/synth.h"
#include "dopt/tokenizer.h"
#include "dopt/training.h"

namespace py = pybind11;
using nlohmann::json;
using namespace dopt;

namespace {

// Python objects cross the boundary as JSON text.
py::object ToPy(const json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

json FromPy(const py::handle& o) {
  return json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

std::vector<corpus::Article> ArticlesFromPy(const py::handle& o) {
  std::vector<corpus::Article> out;
  for (const auto& a : FromPy(o)) out.push_back(corpus::ArticleFromJson(a));
  return out;
}

samplegen::GenerationConfig GenFromPy(const py::dict& d) {
  samplegen::GenerationConfig c;
  const json j = FromPy(d);
  c.k = j.value("k", c.k);
  c.max_words = j.value("max_words", c.max_words);
  c.seed = j.value("seed", c.seed);
  c.min_para_sentences_insertion =
      j.value("min_para_sentences_insertion", c.min_para_sentences_insertion);
  c.dense = j.value("dense", c.dense);
  c.workers = j.value("workers", c.workers);
  return c;
}

std::vector<evaluation::DialogueExample> ExamplesFromPy(const py::handle& o) {
  std::vector<evaluation::DialogueExample> out;
  for (const auto& j : FromPy(o)) {
    out.push_back({j.at("group_id").get<std::string>(),
                   j.at("context").get<std::vector<std::string>>(),
                   j.at("response").get<std::string>(), j.at("label").get<int>()});
  }
  return out;
}

py::object ResultToPy(const training::TrainResult& r) {
  json losses = json::array();
  for (const auto& l : r.losses) losses.push_back(l.total);
  json out = training::HistoryToJson(r.history, r.best.best);
  out["losses"] = losses;
  out["skipped"] = r.skipped;
  return ToPy(out);
}

}  // namespace

PYBIND11_MODULE(_dopt, m) {
  m.doc() = "Dialogue-oriented pre-training workbench";

  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

  // ---- corpus ----
  m.def("ingest_jsonl", [](const std::filesystem::path& p) {
    json out = json::array();
    for (const auto& a : corpus::IngestJsonl(p)) out.push_back(corpus::ArticleToJson(a));
    return ToPy(out);
  });
  m.def("split_sentences", [](const std::string& text) {
    return corpus::SplitSentences(text, corpus::SplitConfig{});
  });
  m.def("partition_articles", [](const std::vector<std::string>& ids, std::uint64_t seed) {
    return ToPy(corpus::PartitionToJson(corpus::PartitionArticles(ids, seed)));
  });
  m.def("synthetic_corpus", [](int articles, std::uint64_t seed) {
    synth::CorpusOptions o;
    o.articles = articles;
    o.seed = seed;
    json out = json::array();
    for (const auto& a : synth::MakeCorpus(o)) out.push_back(corpus::ArticleToJson(a));
    return ToPy(out);
  }, py::arg("articles") = 50, py::arg("seed") = 0);
  m.def("synthetic_dialogues", [](int groups, int candidates, std::uint64_t seed) {
    synth::DialogueOptions o;
    o.groups = groups;
    o.candidates = candidates;
    o.seed = seed;
    json out = json::array();
    for (const auto& ex : synth::MakeDialogues(o)) {
      out.push_back({{"group_id", ex.group_id}, {"context", ex.context},
                     {"response", ex.response}, {"label", ex.label}});
    }
    return ToPy(out);
  }, py::arg("groups") = 100, py::arg("candidates") = 2, py::arg("seed") = 0);

  // ---- samples ----
  m.def("generate", [](const py::list& articles, const std::string& task, const py::dict& cfg) {
    json out = json::array();
    for (const auto& s : samplegen::GenerateGeneral(ArticlesFromPy(articles),
                                                    corpus::ParseTask(task), GenFromPy(cfg))) {
      out.push_back(samplegen::SampleToJson(s));
    }
    return ToPy(out);
  }, py::arg("articles"), py::arg("task"), py::arg("config") = py::dict());
  m.def("validate_samples", [](const py::list& samples, const py::list& articles) {
    const auto arts = ArticlesFromPy(articles);
    samplegen::SourceIndex index;
    index.Add(arts);
    std::vector<std::vector<std::string>> reasons;
    for (const auto& j : FromPy(samples)) {
      reasons.push_back(samplegen::ValidateSample(samplegen::SampleFromJson(j), index).reasons);
    }
    return reasons;
  }, "Failure reasons per sample; empty lists mean valid.");

  // ---- tokenizer ----
  m.def("tokenize", &tokenizer::Tokenize);
  py::class_<tokenizer::Vocab>(m, "Vocab")
      .def(py::init<>())
      .def(py::init<std::vector<std::string>>())
      .def_static("build", &tokenizer::BuildVocab, py::arg("texts"),
                  py::arg("max_size") = 30000, py::arg("min_freq") = 1)
      .def_static("load", &tokenizer::Vocab::Load)
      .def("save", &tokenizer::Vocab::Save)
      .def("encode", &tokenizer::Vocab::Encode)
      .def("id", &tokenizer::Vocab::Id)
      .def("token", &tokenizer::Vocab::Token)
      .def_property_readonly("tokens", &tokenizer::Vocab::tokens)
      .def("__len__", &tokenizer::Vocab::size);

  // ---- metrics ----
  m.def("evaluate", [](const std::vector<std::vector<double>>& scores,
                       const std::vector<std::vector<int>>& labels) {
    if (scores.size() != labels.size()) throw ConfigError("scores and labels differ in length");
    std::vector<evaluation::RankedGroup> groups(scores.size());
    for (std::size_t g = 0; g < scores.size(); ++g) {
      if (scores[g].size() != labels[g].size()) throw ConfigError("group " + std::to_string(g) + " is ragged");
      groups[g].group_id = std::to_string(g);
      for (std::size_t i = 0; i < scores[g].size(); ++i) {
        groups[g].candidates.push_back({scores[g][i], labels[g][i]});
      }
    }
    return ToPy(evaluation::Evaluate(groups).ToJson());
  }, py::arg("scores"), py::arg("labels"));

  // ---- model and training ----
  py::class_<model::Model>(m, "Model")
      .def(py::init([](const py::dict& cfg) {
        return model::Model(model::EncoderConfig::FromJson(FromPy(cfg)));
      }))
      .def_static("load", [](const std::filesystem::path& p) {
        return training::LoadCheckpoint(p).ToModel();
      })
      .def("save", [](const model::Model& self, const std::filesystem::path& p) {
        training::SaveCheckpoint(training::Checkpoint::Capture(self, nullptr), p);
      })
      .def_property_readonly("config", [](const model::Model& self) { return ToPy(self.config().ToJson()); })
      .def_property_readonly("parameter_count", &model::Model::parameter_count)
      .def("match_scores", [](const model::Model& self, const py::list& examples,
                              const tokenizer::Vocab& vocab, std::size_t max_len) {
        return training::ScoreExamples(self, ExamplesFromPy(examples), vocab, max_len);
      }, py::arg("examples"), py::arg("vocab"), py::arg("max_len") = 512)
      .def("inspect_similarity", &model::Model::InspectSimilarity, py::arg("context"),
           py::arg("response"), py::arg("vocab"), py::arg("max_len") = 512)
      .def("pretrain", [](model::Model& self, const py::dict& train, const py::dict& valid,
                          const tokenizer::Vocab& vocab, const py::dict& cfg) {
        training::PretrainData data;
        for (corpus::Task t : corpus::kAllTasks) {
          const auto i = static_cast<std::size_t>(t);
          const std::string name = corpus::TaskName(t);
          for (auto [src, dst] : {std::pair{&train, &data.train[i]}, {&valid, &data.valid[i]}}) {
            if (!src->contains(name)) continue;
            for (const auto& j : FromPy((*src)[name.c_str()])) dst->push_back(samplegen::SampleFromJson(j));
          }
        }
        return ResultToPy(training::Pretrain(self, data, vocab, training::TrainConfig::FromJson(FromPy(cfg))));
      }, py::arg("train"), py::arg("valid"), py::arg("vocab"), py::arg("config") = py::dict())
      .def("finetune", [](model::Model& self, const py::list& train, const py::list& valid,
                          const tokenizer::Vocab& vocab, const py::dict& cfg) {
        return ResultToPy(training::Finetune(self, ExamplesFromPy(train), ExamplesFromPy(valid),
                                             vocab, training::TrainConfig::FromJson(FromPy(cfg))));
      }, py::arg("train"), py::arg("valid"), py::arg("vocab"), py::arg("config") = py::dict())
      .def("multitask", [](model::Model& self, const py::list& train, const py::list& valid,
                           const tokenizer::Vocab& vocab, const py::dict& cfg) {
        return ResultToPy(training::DomainMultitask(self, ExamplesFromPy(train), ExamplesFromPy(valid),
                                                    vocab, training::TrainConfig::FromJson(FromPy(cfg))));
      }, py::arg("train"), py::arg("valid"), py::arg("vocab"), py::arg("config") = py::dict())
      .def("evaluate", [](const model::Model& self, const py::list& examples,
                          const tokenizer::Vocab& vocab, std::size_t max_len) {
        return ToPy(training::EvaluateRanking(self, ExamplesFromPy(examples), vocab, max_len).ToJson());
      }, py::arg("examples"), py::arg("vocab"), py::arg("max_len") = 512);
}
