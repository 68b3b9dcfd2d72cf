// Pipeline configuration: one JSON file overlaid on a named profile.

#ifndef DOPT_TOOLS_RUN_CONFIG_H_
#define DOPT_TOOLS_RUN_CONFIG_H_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "dopt/corpus.h"
#include "dopt/model.h"
#include "dopt/samplegen.h"
#include "dopt/training.h"
#include "json.hpp"

namespace dopt::cli {

namespace fs = std::filesystem;

struct RunConfig {
  std::string profile = "desk";
  fs::path output_dir;
  std::uint64_t seed = 0;

  fs::path corpus_path;
  std::string corpus_format;  // "jsonl" or "raw"
  corpus::SplitConfig split;
  double valid_fraction = 0.1;

  samplegen::GenerationConfig generation;
  std::size_t vocab_max_size = 0;
  std::size_t vocab_min_freq = 1;
  model::EncoderConfig encoder;  // vocab_size is filled from the vocab
  training::TrainConfig pretrain, finetune, multitask;

  fs::path dialogues_train, dialogues_valid, dialogues_test;

  // Fully resolved configuration, hashed into every manifest.
  nlohmann::json resolved;
};

// Every knob of a profile ("desk" or "paper-settings").
nlohmann::json ProfileDefaults(const std::string& profile);

// Overlays `user` on its profile's defaults. Unknown keys are errors.
// Relative paths resolve against `base_dir`.
RunConfig ResolveRunConfig(const nlohmann::json& user, const fs::path& base_dir);

RunConfig LoadRunConfig(const std::optional<fs::path>& path,
                        const nlohmann::json& overrides);

}  // namespace dopt::cli

#endif  // DOPT_TOOLS_RUN_CONFIG_H_
