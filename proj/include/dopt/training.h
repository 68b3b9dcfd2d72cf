// Pre-training over the three sample streams, response-selection
// fine-tuning and domain multi-task learning, plus the optimizer and the
// checkpoint file format.

#ifndef DOPT_TRAINING_H_
#define DOPT_TRAINING_H_

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "dopt/evaluation.h"
#include "dopt/model.h"
#include "dopt/samplegen.h"
#include "dopt/tokenizer.h"
#include "json.hpp"

namespace dopt::training {

using evaluation::DialogueExample;
using model::Model;
using samplegen::Sample;

struct TaskFlags {
  bool insertion = true;
  bool deletion = true;
  bool replacement = true;
  bool reselect = true;

  bool operator==(const TaskFlags&) const = default;
};

struct TrainConfig {
  double lr = 1e-3;
  double warmup_proportion = 0.1;
  int batch_size = 8;  // per task
  int epochs = 1;
  // 0 evaluates at the end of every epoch.
  int eval_every = 0;
  TaskFlags tasks;
  std::uint64_t seed = 0;
  std::string precision = "double";
  double clip_norm = 1.0;  // 0 disables clipping
  int max_len = 512;
  // Stop once every validation metric used for selection reaches this value
  // (0 disables).
  double stop_at = 0.0;
  // Compute losses and gradients without touching the parameters.
  bool dry_run = false;

  void Validate() const;
  nlohmann::json ToJson() const;
  static TrainConfig FromJson(const nlohmann::json& j);
};

// ---- optimizer ----

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 1.0;
};

struct AdamState {
  std::vector<std::vector<double>> m, v;
  std::uint64_t step = 0;  // updates taken so far

  bool empty() const { return m.empty(); }
  bool operator==(const AdamState&) const = default;
};

// Linear warmup from 0 to base_lr over round(warmup_proportion * total)
// steps, then linear decay to 0 at `total`.
double ScheduledLr(std::uint64_t step, std::uint64_t total, double base_lr,
                   double warmup_proportion);

// Global gradient norm before clipping.
double GradientNorm(const std::vector<nd::Tensor>& params);

// One bias-corrected Adam update at learning rate `lr` after clipping the
// global gradient norm to cfg.clip_norm. Returns the pre-clip norm.
double OptimizerStep(const std::vector<nd::Tensor>& params, AdamState& state,
                     double lr, const AdamConfig& cfg);

// ---- records ----

struct StepLoss {
  std::uint64_t step = 0;
  std::uint64_t epoch = 0;
  double lr = 0.0;
  // insertion, deletion, replacement, reselect; nullopt when disabled.
  std::array<std::optional<double>, 4> terms;
  double total = 0.0;
  double grad_norm = 0.0;
};

struct EvalRecord {
  std::uint64_t step = 0;
  double primary = 0.0;    // mean task accuracy or R_n@1
  double secondary = 0.0;  // 0 or MAP
  nlohmann::json metrics;

  bool operator==(const EvalRecord&) const = default;
};

nlohmann::json EvalRecordToJson(const EvalRecord& r);
EvalRecord EvalRecordFromJson(const nlohmann::json& j);

// Index of the best record: highest primary, then secondary, then earliest.
std::size_t SelectBest(const std::vector<EvalRecord>& history);

void WriteLossCsv(const std::vector<StepLoss>& losses, std::ostream& out);
nlohmann::json HistoryToJson(const std::vector<EvalRecord>& history,
                             std::optional<std::size_t> best);

// ---- checkpoints ----

struct Checkpoint {
  model::EncoderConfig config;
  std::vector<std::string> names;
  std::vector<nd::Shape> shapes;
  std::vector<std::vector<double>> values;
  AdamState optimizer;
  std::uint64_t step = 0;
  std::vector<EvalRecord> history;
  std::optional<std::size_t> best;  // index into history
  nlohmann::json train_config;

  static Checkpoint Capture(const Model& model, const AdamState* optimizer);
  // Overwrites the model's parameters; names and shapes must match.
  void Restore(Model& model) const;
  Model ToModel() const;
};

inline constexpr int kCheckpointVersion = 1;

void SaveCheckpoint(const Checkpoint& ckpt, std::ostream& out);
void SaveCheckpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
// Throws FormatError on bad magic, version mismatch or checksum failure.
Checkpoint LoadCheckpoint(std::istream& in);
Checkpoint LoadCheckpoint(const std::filesystem::path& path);

// ---- regimes ----

struct TrainResult {
  Checkpoint best;  // selected checkpoint
  Checkpoint last;  // state after the final step
  std::vector<StepLoss> losses;
  std::vector<EvalRecord> history;
  std::size_t skipped = 0;  // samples longer than max_len
};

struct PretrainData {
  std::array<std::vector<Sample>, 3> train;  // indexed by corpus::Task
  std::array<std::vector<Sample>, 3> valid;
};

// Observes every step; used by tests and progress output.
using StepCallback = std::function<void(const StepLoss&)>;

// Per-task accuracy (argmax == label) of `samples`.
double TaskAccuracyOf(const Model& model, const std::vector<Sample>& samples,
                      const tokenizer::TextEncoder& encoder,
                      std::size_t max_len);

// One batch per enabled task per step; the loss is the sum of the per-task
// batch means. Each task has its own data and dropout streams.
TrainResult Pretrain(Model& model, const PretrainData& data,
                     const tokenizer::TextEncoder& encoder,
                     const TrainConfig& cfg, const StepCallback& on_step = {});

// Match scores of every example in order.
std::vector<double> ScoreExamples(const Model& model,
                                  const std::vector<DialogueExample>& examples,
                                  const tokenizer::TextEncoder& encoder,
                                  std::size_t max_len);

evaluation::MetricReport EvaluateRanking(
    const Model& model, const std::vector<DialogueExample>& examples,
    const tokenizer::TextEncoder& encoder, std::size_t max_len);

// Minimizes match_loss; ranking metrics on `valid` after every epoch.
TrainResult Finetune(Model& model, const std::vector<DialogueExample>& train,
                     const std::vector<DialogueExample>& valid,
                     const tokenizer::TextEncoder& encoder,
                     const TrainConfig& cfg, const StepCallback& on_step = {});

// Domain auxiliary samples for one batch: one sample per enabled task per
// unique context with at least 3 utterances. `dialogues` receives the
// sources so the samples can be validated.
std::vector<Sample> BuildAuxiliarySamples(
    const std::vector<const DialogueExample*>& batch, const TaskFlags& flags,
    const samplegen::GenerationConfig& gen, Rng& rng,
    std::vector<samplegen::Dialogue>* dialogues = nullptr);

// Finetune plus the enabled auxiliary losses built from each batch.
TrainResult DomainMultitask(Model& model,
                            const std::vector<DialogueExample>& train,
                            const std::vector<DialogueExample>& valid,
                            const tokenizer::TextEncoder& encoder,
                            const TrainConfig& cfg,
                            const samplegen::GenerationConfig& gen = {},
                            const StepCallback& on_step = {});

}  // namespace dopt::training

#endif  // DOPT_TRAINING_H_
