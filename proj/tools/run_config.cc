#include "run_config.h"

#include <fstream>

#include "dopt/common.h"

namespace dopt::cli {
namespace {

using nlohmann::json;

json TrainDefaults(double lr, int epochs, int eval_every, int max_len,
                   bool aux, bool reselect) {
  return json{{"lr", lr},
              {"warmup_proportion", 0.1},
              {"batch_size", 8},
              {"epochs", epochs},
              {"eval_every", eval_every},
              {"tasks",
               {{"insertion", aux},
                {"deletion", aux},
                {"replacement", aux},
                {"reselect", reselect}}},
              {"precision", "double"},
              {"clip_norm", 1.0},
              {"max_len", max_len},
              {"stop_at", 0.0},
              {"dry_run", false}};
}

// Rejects keys absent from the defaults, recursing into objects.
void CheckKeys(const json& user, const json& defaults, const std::string& where) {
  for (const auto& [key, value] : user.items()) {
    if (!defaults.contains(key)) {
      throw ConfigError("unknown config key '" + where + key + "'");
    }
    if (value.is_object() && defaults.at(key).is_object()) {
      CheckKeys(value, defaults.at(key), where + key + ".");
    }
  }
}

fs::path Resolve(const std::string& p, const fs::path& base) {
  if (p.empty()) return {};
  const fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

training::TrainConfig TrainFrom(const json& j, std::uint64_t seed) {
  auto c = training::TrainConfig::FromJson(j);
  c.seed = seed;
  c.Validate();
  return c;
}

}  // namespace

json ProfileDefaults(const std::string& profile) {
  json d = {
      {"profile", profile},
      {"output_dir", "dopt-out"},
      {"seed", 0},
      {"corpus",
       {{"path", ""},
        {"format", "jsonl"},
        {"article_delimiter", "====="},
        {"heading_blacklist", {"References", "Literature"}},
        {"abbreviations", json::array()},
        {"valid_fraction", 0.1}}},
      {"generation",
       {{"k", 5},
        {"max_words", 400},
        {"min_para_sentences_insertion", 5},
        {"dense", false},
        {"workers", 1}}},
      {"vocab", {{"max_size", 30000}, {"min_freq", 1}}},
      {"encoder",
       {{"layers", 2},
        {"heads", 4},
        {"d_model", 64},
        {"d_ff", 256},
        {"max_positions", 512},
        {"dropout", 0.1}}},
      {"pretrain", TrainDefaults(1e-3, 1, 0, 512, true, false)},
      {"finetune", TrainDefaults(1e-3, 3, 0, 350, false, true)},
      {"multitask", TrainDefaults(1e-3, 3, 0, 350, true, true)},
      {"dialogues", {{"train", ""}, {"valid", ""}, {"test", ""}}},
  };
  if (profile == "desk") return d;
  if (profile == "paper-settings") {
    d["encoder"] = {{"layers", 12},     {"heads", 12},
                    {"d_model", 768},   {"d_ff", 3072},
                    {"max_positions", 512}, {"dropout", 0.1}};
    for (const char* regime : {"pretrain", "finetune", "multitask"}) {
      d[regime]["lr"] = 2e-5;
      d[regime]["eval_every"] = 10000;
    }
    return d;
  }
  throw ConfigError("unknown profile '" + profile +
                    "' (expected \"desk\" or \"paper-settings\")");
}

RunConfig ResolveRunConfig(const json& user, const fs::path& base_dir) {
  if (!user.is_object()) throw ConfigError("config must be a JSON object");
  const std::string profile = user.value("profile", std::string("desk"));
  json merged = ProfileDefaults(profile);
  CheckKeys(user, merged, "");
  merged.merge_patch(user);

  RunConfig c;
  c.resolved = merged;
  try {
    c.profile = profile;
    c.output_dir = Resolve(merged.at("output_dir").get<std::string>(), base_dir);
    c.seed = merged.at("seed").get<std::uint64_t>();

    const json& corpus = merged.at("corpus");
    c.corpus_path = Resolve(corpus.at("path").get<std::string>(), base_dir);
    c.corpus_format = corpus.at("format").get<std::string>();
    if (c.corpus_format != "jsonl" && c.corpus_format != "raw") {
      throw ConfigError("corpus.format must be \"jsonl\" or \"raw\"");
    }
    c.split.article_delimiter = corpus.at("article_delimiter").get<std::string>();
    c.split.heading_blacklist =
        corpus.at("heading_blacklist").get<std::vector<std::string>>();
    c.split.abbreviations = corpus.at("abbreviations").get<std::vector<std::string>>();
    c.valid_fraction = corpus.at("valid_fraction").get<double>();
    if (!(c.valid_fraction >= 0.0 && c.valid_fraction < 1.0)) {
      throw ConfigError("corpus.valid_fraction must be in [0, 1)");
    }

    const json& gen = merged.at("generation");
    c.generation.k = gen.at("k").get<int>();
    c.generation.max_words = gen.at("max_words").get<int>();
    c.generation.min_para_sentences_insertion =
        gen.at("min_para_sentences_insertion").get<int>();
    c.generation.dense = gen.at("dense").get<bool>();
    c.generation.workers = gen.at("workers").get<int>();
    c.generation.seed = c.seed;
    c.generation.Validate();

    c.vocab_max_size = merged.at("vocab").at("max_size").get<std::size_t>();
    c.vocab_min_freq = merged.at("vocab").at("min_freq").get<std::size_t>();

    c.encoder = model::EncoderConfig::FromJson(merged.at("encoder"));
    c.encoder.seed = c.seed;

    c.pretrain = TrainFrom(merged.at("pretrain"), c.seed);
    c.finetune = TrainFrom(merged.at("finetune"), c.seed);
    c.multitask = TrainFrom(merged.at("multitask"), c.seed);

    const json& dlg = merged.at("dialogues");
    c.dialogues_train = Resolve(dlg.at("train").get<std::string>(), base_dir);
    c.dialogues_valid = Resolve(dlg.at("valid").get<std::string>(), base_dir);
    c.dialogues_test = Resolve(dlg.at("test").get<std::string>(), base_dir);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

RunConfig LoadRunConfig(const std::optional<fs::path>& path,
                        const json& overrides) {
  json user = json::object();
  fs::path base = fs::current_path();
  if (path) {
    std::ifstream in(*path);
    if (!in) throw ConfigError("cannot open config " + path->string());
    try {
      user = json::parse(in);
    } catch (const json::exception& e) {
      throw ConfigError("config " + path->string() + ": " + e.what());
    }
    base = fs::absolute(*path).parent_path();
  }
  if (!overrides.is_null()) {
    // Command-line overrides resolve against the working directory.
    if (overrides.contains("output_dir")) {
      user["output_dir"] =
          fs::absolute(overrides.at("output_dir").get<std::string>()).string();
    }
    for (const auto& [key, value] : overrides.items()) {
      if (key != "output_dir") user[key] = value;
    }
  }
  return ResolveRunConfig(user, base);
}

}  // namespace dopt::cli
