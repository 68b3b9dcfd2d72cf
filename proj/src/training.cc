#include "dopt/training.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "dopt/common.h"

namespace dopt::training {
namespace {

using nlohmann::json;
using nd::Tape;
using nd::Tensor;
using tokenizer::TokenSequence;

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is written in host byte order");

constexpr std::array<const char*, 4> kTermNames = {"insertion", "deletion",
                                                   "replacement", "reselect"};
constexpr char kMagic[8] = {'D', 'O', 'P', 'T', 'C', 'K', 'P', 'T'};

std::vector<Tensor> ParameterTensors(const Model& model) {
  std::vector<Tensor> out;
  for (const auto& [name, t] : model.named_parameters()) out.push_back(t);
  return out;
}

bool Enabled(const TaskFlags& f, corpus::Task t) {
  switch (t) {
    case corpus::Task::kInsertion: return f.insertion;
    case corpus::Task::kDeletion: return f.deletion;
    case corpus::Task::kReplacement: return f.replacement;
  }
  return false;
}

struct Prepared {
  TokenSequence seq;
  std::size_t label = 0;
  corpus::Task task = corpus::Task::kInsertion;
};

// Sequences that fit the encoder; the rest are counted in `skipped`.
std::vector<Prepared> Prepare(const std::vector<Sample>& samples,
                              const tokenizer::TextEncoder& encoder,
                              std::size_t max_len, std::size_t max_positions,
                              std::size_t* skipped) {
  std::vector<Prepared> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    Prepared p{tokenizer::Assemble(s, encoder, max_len),
               static_cast<std::size_t>(samplegen::LabelOf(s)),
               samplegen::TaskOf(s)};
    if (p.seq.truncated || p.seq.size() > max_positions) {
      if (skipped) ++*skipped;
      continue;
    }
    out.push_back(std::move(p));
  }
  return out;
}

Tensor TaskScores(Tape& tape, const Model& model, const Prepared& p,
                  model::ForwardMode mode) {
  const Tensor states = model.EncodeOne(tape, p.seq, mode);
  const Tensor sot = Model::GatherSot(tape, states, p.seq.sot_positions);
  switch (p.task) {
    case corpus::Task::kInsertion: return Model::InsertionScores(tape, sot);
    case corpus::Task::kDeletion: return Model::DeletionScores(tape, sot);
    case corpus::Task::kReplacement: return model.ReplacementScores(tape, sot);
  }
  throw std::logic_error("unknown task");
}

// Mean task loss over a batch, or an undefined tensor for an empty batch.
Tensor BatchTaskLoss(Tape& tape, const Model& model,
                     const std::vector<const Prepared*>& batch, Rng& dropout) {
  if (batch.empty()) return {};
  std::vector<Tensor> losses;
  losses.reserve(batch.size());
  for (const Prepared* p : batch) {
    const Tensor scores = TaskScores(tape, model, *p, {&dropout});
    losses.push_back(model::TaskLoss(tape, scores, p->label));
  }
  return nd::Mean(tape, nd::Stack(tape, losses));
}

double Accuracy(const Model& model, const std::vector<Prepared>& samples) {
  std::vector<std::size_t> predictions, labels;
  for (const auto& p : samples) {
    Tape tape;
    const Tensor scores = TaskScores(tape, model, p, {});
    predictions.push_back(model::Argmax(scores.values()));
    labels.push_back(p.label);
  }
  return evaluation::TaskAccuracy(predictions, labels);
}

// Endless shuffled pass over [0, n); reshuffles at every wrap.
class IndexStream {
 public:
  IndexStream(std::size_t n, Rng rng) : order_(n), rng_(std::move(rng)) {
    std::iota(order_.begin(), order_.end(), 0);
    Shuffle(order_, rng_);
  }

  std::vector<std::size_t> Next(std::size_t count) {
    std::vector<std::size_t> out;
    out.reserve(count);
    while (out.size() < count) {
      if (pos_ == order_.size()) {
        Shuffle(order_, rng_);
        pos_ = 0;
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  Rng rng_;
};

std::size_t CeilDiv(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

// Bookkeeping shared by every regime: schedule, evaluation points, best
// snapshot, loss trace.
class Run {
 public:
  Run(Model& model, const TrainConfig& cfg, std::size_t steps_per_epoch)
      : model_(model),
        cfg_(cfg),
        params_(ParameterTensors(model)),
        steps_per_epoch_(steps_per_epoch),
        total_(steps_per_epoch * static_cast<std::size_t>(cfg.epochs)) {
    adam_.clip_norm = cfg.clip_norm;
    for (const auto& p : params_) p.node()->grad.clear();
  }

  std::uint64_t total() const { return total_; }
  std::uint64_t epoch_of(std::uint64_t step) const {
    return step / steps_per_epoch_;
  }

  // Backpropagates `loss`, updates parameters and records the step.
  StepLoss Update(Tape& tape, const Tensor& loss, std::uint64_t step,
                  const std::array<Tensor, 4>& terms) {
    StepLoss rec;
    rec.step = step;
    rec.epoch = epoch_of(step);
    rec.lr = ScheduledLr(step, total_, cfg_.lr, cfg_.warmup_proportion);
    for (std::size_t i = 0; i < terms.size(); ++i) {
      if (terms[i].defined()) rec.terms[i] = terms[i].item();
    }
    rec.total = loss.item();
    tape.Backward(loss);
    if (cfg_.dry_run) {
      rec.grad_norm = GradientNorm(params_);
      for (auto& p : params_) p.zero_grad();
    } else {
      rec.grad_norm = OptimizerStep(params_, state_, rec.lr, adam_);
    }
    result_.losses.push_back(rec);
    return rec;
  }

  bool ShouldEvaluate(std::uint64_t done) const {
    if (done == total_) return true;
    const std::uint64_t every =
        cfg_.eval_every > 0 ? static_cast<std::uint64_t>(cfg_.eval_every)
                            : steps_per_epoch_;
    return done % every == 0;
  }

  // Returns true when training may stop early.
  bool Record(EvalRecord rec, double floor) {
    result_.history.push_back(std::move(rec));
    const std::size_t idx = result_.history.size() - 1;
    if (!best_index_ ||
        SelectBest({result_.history[*best_index_], result_.history[idx]}) == 1) {
      best_index_ = idx;
      result_.best = Checkpoint::Capture(model_, &state_);
      result_.best.step = result_.history[idx].step;
    }
    return cfg_.stop_at > 0.0 && floor >= cfg_.stop_at;
  }

  TrainResult Finish(std::uint64_t steps_done, std::size_t skipped) {
    result_.last = Checkpoint::Capture(model_, &state_);
    result_.last.step = steps_done;
    const json tc = cfg_.ToJson();
    for (Checkpoint* c : {&result_.best, &result_.last}) {
      c->history = result_.history;
      c->best = best_index_;
      c->train_config = tc;
    }
    result_.skipped = skipped;
    return std::move(result_);
  }

 private:
  Model& model_;
  const TrainConfig& cfg_;
  std::vector<Tensor> params_;
  AdamState state_;
  AdamConfig adam_;
  std::uint64_t steps_per_epoch_;
  std::uint64_t total_;
  std::optional<std::size_t> best_index_;
  TrainResult result_;
};

}  // namespace

// ---- config ----

void TrainConfig::Validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) {
    throw ConfigError("learning rate must be > 0");
  }
  if (!(warmup_proportion >= 0.0 && warmup_proportion < 1.0)) {
    throw ConfigError("warmup proportion must be in [0, 1)");
  }
  if (batch_size <= 0) throw ConfigError("batch size must be > 0");
  if (epochs <= 0) throw ConfigError("epochs must be > 0");
  if (eval_every < 0) throw ConfigError("eval_every must be >= 0");
  if (!tasks.insertion && !tasks.deletion && !tasks.replacement &&
      !tasks.reselect) {
    throw ConfigError("at least one task must be enabled");
  }
  if (precision != "double") {
    throw ConfigError("unsupported precision '" + precision +
                      "' (only \"double\" is implemented)");
  }
  if (clip_norm < 0.0) throw ConfigError("clip_norm must be >= 0");
  if (max_len < 4) throw ConfigError("max_len must be >= 4");
}

json TrainConfig::ToJson() const {
  return json{{"lr", lr},
              {"warmup_proportion", warmup_proportion},
              {"batch_size", batch_size},
              {"epochs", epochs},
              {"eval_every", eval_every},
              {"tasks",
               {{"insertion", tasks.insertion},
                {"deletion", tasks.deletion},
                {"replacement", tasks.replacement},
                {"reselect", tasks.reselect}}},
              {"seed", seed},
              {"precision", precision},
              {"clip_norm", clip_norm},
              {"max_len", max_len},
              {"stop_at", stop_at},
              {"dry_run", dry_run}};
}

TrainConfig TrainConfig::FromJson(const json& j) {
  TrainConfig c;
  c.lr = j.value("lr", c.lr);
  c.warmup_proportion = j.value("warmup_proportion", c.warmup_proportion);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.eval_every = j.value("eval_every", c.eval_every);
  if (j.contains("tasks")) {
    const json& t = j.at("tasks");
    c.tasks.insertion = t.value("insertion", c.tasks.insertion);
    c.tasks.deletion = t.value("deletion", c.tasks.deletion);
    c.tasks.replacement = t.value("replacement", c.tasks.replacement);
    c.tasks.reselect = t.value("reselect", c.tasks.reselect);
  }
  c.seed = j.value("seed", c.seed);
  c.precision = j.value("precision", c.precision);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.max_len = j.value("max_len", c.max_len);
  c.stop_at = j.value("stop_at", c.stop_at);
  c.dry_run = j.value("dry_run", c.dry_run);
  return c;
}

// ---- optimizer ----

double ScheduledLr(std::uint64_t step, std::uint64_t total, double base_lr,
                   double warmup_proportion) {
  if (total == 0 || step >= total) return 0.0;
  const auto warmup = static_cast<std::uint64_t>(
      std::llround(warmup_proportion * static_cast<double>(total)));
  if (step < warmup) {
    return base_lr * static_cast<double>(step) / static_cast<double>(warmup);
  }
  return base_lr * static_cast<double>(total - step) /
         static_cast<double>(total - warmup);
}

double GradientNorm(const std::vector<Tensor>& params) {
  double sq = 0.0;
  for (const auto& p : params) {
    for (double g : p.grad()) sq += g * g;
  }
  return std::sqrt(sq);
}

double OptimizerStep(const std::vector<Tensor>& params, AdamState& state,
                     double lr, const AdamConfig& cfg) {
  if (state.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.size(), 0.0);
      state.v.emplace_back(p.size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) {
    throw std::invalid_argument("optimizer state does not match parameters");
  }
  const double norm = GradientNorm(params);
  const double scale =
      cfg.clip_norm > 0.0 && norm > cfg.clip_norm ? cfg.clip_norm / norm : 1.0;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i];
    const auto grad = p.grad();
    auto value = p.mutable_values();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < value.size(); ++j) {
      const double g = grad.empty() ? 0.0 : grad[j] * scale;
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
      value[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg.epsilon);
    }
    p.zero_grad();
  }
  return norm;
}

// ---- records ----

json EvalRecordToJson(const EvalRecord& r) {
  return json{{"step", r.step},
              {"primary", r.primary},
              {"secondary", r.secondary},
              {"metrics", r.metrics}};
}

EvalRecord EvalRecordFromJson(const json& j) {
  EvalRecord r;
  r.step = j.at("step").get<std::uint64_t>();
  r.primary = j.at("primary").get<double>();
  r.secondary = j.at("secondary").get<double>();
  r.metrics = j.value("metrics", json::object());
  return r;
}

std::size_t SelectBest(const std::vector<EvalRecord>& history) {
  if (history.empty()) throw std::invalid_argument("empty evaluation history");
  std::size_t best = 0;
  for (std::size_t i = 1; i < history.size(); ++i) {
    const auto& a = history[i];
    const auto& b = history[best];
    if (a.primary > b.primary ||
        (a.primary == b.primary && a.secondary > b.secondary)) {
      best = i;
    }
  }
  return best;
}

void WriteLossCsv(const std::vector<StepLoss>& losses, std::ostream& out) {
  out << "step,epoch,lr";
  for (const char* name : kTermNames) out << ',' << name;
  out << ",total,grad_norm\n";
  std::ostringstream row;
  row.precision(17);
  for (const auto& l : losses) {
    row.str("");
    row << l.step << ',' << l.epoch << ',' << l.lr;
    for (const auto& t : l.terms) {
      row << ',';
      if (t) row << *t;
    }
    row << ',' << l.total << ',' << l.grad_norm << '\n';
    out << row.str();
  }
}

json HistoryToJson(const std::vector<EvalRecord>& history,
                   std::optional<std::size_t> best) {
  json records = json::array();
  for (const auto& r : history) records.push_back(EvalRecordToJson(r));
  json j{{"schema_version", 1}, {"history", records}};
  j["best"] = best ? json(*best) : json(nullptr);
  return j;
}

// ---- checkpoints ----

Checkpoint Checkpoint::Capture(const Model& model, const AdamState* optimizer) {
  Checkpoint c;
  c.config = model.config();
  for (const auto& [name, t] : model.named_parameters()) {
    c.names.push_back(name);
    c.shapes.push_back(t.shape());
    c.values.emplace_back(t.values().begin(), t.values().end());
  }
  if (optimizer) c.optimizer = *optimizer;
  return c;
}

void Checkpoint::Restore(Model& model) const {
  const auto& named = model.named_parameters();
  if (named.size() != names.size()) {
    throw FormatError("checkpoint has " + std::to_string(names.size()) +
                      " tensors, model has " + std::to_string(named.size()));
  }
  for (std::size_t i = 0; i < named.size(); ++i) {
    Tensor t = named[i].second;
    if (named[i].first != names[i] || t.shape() != shapes[i]) {
      throw FormatError("checkpoint tensor '" + names[i] + "' " +
                        nd::ShapeToString(shapes[i]) + " does not match '" +
                        named[i].first + "' " + nd::ShapeToString(t.shape()));
    }
    std::copy(values[i].begin(), values[i].end(), t.mutable_values().begin());
  }
}

Model Checkpoint::ToModel() const {
  Model m(config);
  Restore(m);
  return m;
}

namespace {

void AppendDoubles(std::string& buf, const std::vector<double>& v) {
  const std::size_t at = buf.size();
  buf.resize(at + v.size() * sizeof(double));
  std::memcpy(buf.data() + at, v.data(), v.size() * sizeof(double));
}

std::string Hex64(std::uint64_t x) {
  static const char* kDigits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, x >>= 4) s[static_cast<std::size_t>(i)] = kDigits[x & 0xf];
  return s;
}

}  // namespace

void SaveCheckpoint(const Checkpoint& ckpt, std::ostream& out) {
  std::string payload;
  for (const auto& v : ckpt.values) AppendDoubles(payload, v);
  for (const auto& v : ckpt.optimizer.m) AppendDoubles(payload, v);
  for (const auto& v : ckpt.optimizer.v) AppendDoubles(payload, v);

  json tensors = json::array();
  for (std::size_t i = 0; i < ckpt.names.size(); ++i) {
    tensors.push_back({{"name", ckpt.names[i]}, {"shape", ckpt.shapes[i]}});
  }
  json history = json::array();
  for (const auto& r : ckpt.history) history.push_back(EvalRecordToJson(r));
  json header{{"schema_version", kCheckpointVersion},
              {"config", ckpt.config.ToJson()},
              {"step", ckpt.step},
              {"tensors", tensors},
              {"optimizer",
               {{"present", !ckpt.optimizer.empty()},
                {"step", ckpt.optimizer.step}}},
              {"history", history},
              {"train_config", ckpt.train_config},
              {"payload_bytes", payload.size()},
              {"checksum", Hex64(Fnv1a64(payload))}};
  header["best"] = ckpt.best ? json(*ckpt.best) : json(nullptr);
  const std::string h = header.dump();
  const std::uint64_t len = h.size();
  out.write(kMagic, sizeof(kMagic));
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw FormatError("failed to write checkpoint");
}

void SaveCheckpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  SaveCheckpoint(ckpt, out);
}

Checkpoint LoadCheckpoint(std::istream& in) {
  char magic[sizeof(kMagic)];
  if (!in.read(magic, sizeof(magic)) ||
      std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw FormatError("not a checkpoint file (bad magic)");
  }
  std::uint64_t len = 0;
  if (!in.read(reinterpret_cast<char*>(&len), sizeof(len)) || len > (1u << 30)) {
    throw FormatError("truncated checkpoint header");
  }
  std::string h(len, '\0');
  if (!in.read(h.data(), static_cast<std::streamsize>(len))) {
    throw FormatError("truncated checkpoint header");
  }
  json header;
  try {
    header = json::parse(h);
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }
  const int version = header.value("schema_version", -1);
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint schema_version " + std::to_string(version) +
                      " is not supported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  const auto bytes = header.at("payload_bytes").get<std::size_t>();
  std::string payload(bytes, '\0');
  if (!in.read(payload.data(), static_cast<std::streamsize>(bytes))) {
    throw FormatError("truncated checkpoint payload");
  }
  if (Hex64(Fnv1a64(payload)) != header.at("checksum").get<std::string>()) {
    throw FormatError("checkpoint checksum mismatch");
  }

  Checkpoint c;
  c.config = model::EncoderConfig::FromJson(header.at("config"));
  c.step = header.at("step").get<std::uint64_t>();
  for (const auto& t : header.at("tensors")) {
    c.names.push_back(t.at("name").get<std::string>());
    c.shapes.push_back(t.at("shape").get<nd::Shape>());
  }
  for (const auto& r : header.at("history")) {
    c.history.push_back(EvalRecordFromJson(r));
  }
  if (!header.at("best").is_null()) c.best = header.at("best").get<std::size_t>();
  c.train_config = header.value("train_config", json());

  const bool has_opt = header.at("optimizer").at("present").get<bool>();
  std::size_t expected = 0;
  for (const auto& s : c.shapes) expected += nd::NumElements(s);
  if (bytes != expected * sizeof(double) * (has_opt ? 3 : 1)) {
    throw FormatError("checkpoint payload size does not match tensor shapes");
  }
  std::size_t offset = 0;
  auto take = [&](std::size_t n) {
    std::vector<double> v(n);
    std::memcpy(v.data(), payload.data() + offset, n * sizeof(double));
    offset += n * sizeof(double);
    return v;
  };
  for (const auto& s : c.shapes) c.values.push_back(take(nd::NumElements(s)));
  if (has_opt) {
    for (const auto& s : c.shapes) c.optimizer.m.push_back(take(nd::NumElements(s)));
    for (const auto& s : c.shapes) c.optimizer.v.push_back(take(nd::NumElements(s)));
    c.optimizer.step = header.at("optimizer").at("step").get<std::uint64_t>();
  }
  return c;
}

Checkpoint LoadCheckpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return LoadCheckpoint(in);
}

// ---- pre-training ----

double TaskAccuracyOf(const Model& model, const std::vector<Sample>& samples,
                      const tokenizer::TextEncoder& encoder,
                      std::size_t max_len) {
  const auto prepared =
      Prepare(samples, encoder, max_len,
              static_cast<std::size_t>(model.config().max_positions), nullptr);
  return Accuracy(model, prepared);
}

TrainResult Pretrain(Model& model, const PretrainData& data,
                     const tokenizer::TextEncoder& encoder,
                     const TrainConfig& cfg, const StepCallback& on_step) {
  cfg.Validate();
  if (!cfg.tasks.insertion && !cfg.tasks.deletion && !cfg.tasks.replacement) {
    throw ConfigError("pre-training needs at least one of insertion, "
                      "deletion, replacement");
  }
  const auto max_len = static_cast<std::size_t>(cfg.max_len);
  const auto max_pos = static_cast<std::size_t>(model.config().max_positions);
  std::size_t skipped = 0;

  std::array<std::vector<Prepared>, 3> train, valid;
  std::array<std::optional<IndexStream>, 3> streams;
  std::array<std::optional<Rng>, 3> dropout;
  std::array<std::size_t, 3> batch{};
  std::size_t steps_per_epoch = 0;
  for (corpus::Task t : corpus::kAllTasks) {
    const auto i = static_cast<std::size_t>(t);
    if (!Enabled(cfg.tasks, t)) continue;
    const std::string name = corpus::TaskName(t);
    for (const auto& s : data.train[i]) {
      if (samplegen::TaskOf(s) != t) {
        throw FormatError(name + " stream contains a " +
                          corpus::TaskName(samplegen::TaskOf(s)) + " sample");
      }
    }
    train[i] = Prepare(data.train[i], encoder, max_len, max_pos, &skipped);
    valid[i] = Prepare(data.valid[i], encoder, max_len, max_pos, &skipped);
    if (train[i].empty() || valid[i].empty()) {
      throw ConfigError(name + " needs non-empty train and valid sets");
    }
    batch[i] = std::min(static_cast<std::size_t>(cfg.batch_size), train[i].size());
    streams[i].emplace(train[i].size(), StreamRng(cfg.seed, "data:" + name));
    dropout[i] = StreamRng(cfg.seed, "dropout:" + name);
    steps_per_epoch = std::max(steps_per_epoch, CeilDiv(train[i].size(), batch[i]));
  }

  Run run(model, cfg, steps_per_epoch);
  std::uint64_t step = 0;
  while (step < run.total()) {
    Tape tape;
    std::array<Tensor, 4> terms;
    for (corpus::Task t : corpus::kAllTasks) {
      const auto i = static_cast<std::size_t>(t);
      if (!streams[i]) continue;
      std::vector<const Prepared*> b;
      for (std::size_t idx : streams[i]->Next(batch[i])) b.push_back(&train[i][idx]);
      terms[i] = BatchTaskLoss(tape, model, b, *dropout[i]);
    }
    const Tensor loss = model::LGen(tape, terms[0], terms[1], terms[2]);
    const StepLoss rec = run.Update(tape, loss, step, terms);
    if (on_step) on_step(rec);
    ++step;
    if (!run.ShouldEvaluate(step)) continue;
    EvalRecord er;
    er.step = step;
    er.metrics = json::object();
    double sum = 0.0, floor = 1.0;
    int enabled = 0;
    for (corpus::Task t : corpus::kAllTasks) {
      const auto i = static_cast<std::size_t>(t);
      if (!streams[i]) continue;
      const double acc = Accuracy(model, valid[i]);
      er.metrics[corpus::TaskName(t)] = acc;
      sum += acc;
      floor = std::min(floor, acc);
      ++enabled;
    }
    er.primary = sum / enabled;
    er.metrics["mean"] = er.primary;
    if (run.Record(std::move(er), floor)) break;
  }
  return run.Finish(step, skipped);
}

// ---- response selection ----

namespace {

struct PreparedExample {
  TokenSequence seq;
  int label = 0;
};

PreparedExample PrepareExample(const DialogueExample& ex,
                               const tokenizer::TextEncoder& encoder,
                               std::size_t max_len) {
  return {tokenizer::AssembleResponseSelection(ex.context, ex.response,
                                               encoder, max_len),
          ex.label};
}

Tensor MatchOf(Tape& tape, const Model& model, const TokenSequence& seq,
               model::ForwardMode mode) {
  const Tensor states = model.EncodeOne(tape, seq, mode);
  return model.MatchScore(tape, Model::GatherSot(tape, states, seq.sot_positions));
}

void CheckGroupSizes(const std::vector<DialogueExample>& examples) {
  const std::vector<double> zeros(examples.size(), 0.0);
  for (const auto& g : evaluation::GroupScores(examples, zeros)) {
    if (g.candidates.size() < 2) {
      throw FormatError("group '" + g.group_id + "' has fewer than 2 candidates");
    }
  }
}

TrainResult RunResponseSelection(Model& model,
                                 const std::vector<DialogueExample>& train,
                                 const std::vector<DialogueExample>& valid,
                                 const tokenizer::TextEncoder& encoder,
                                 const TrainConfig& cfg, const TaskFlags& flags,
                                 const samplegen::GenerationConfig& gen,
                                 const StepCallback& on_step) {
  cfg.Validate();
  const bool aux = flags.insertion || flags.deletion || flags.replacement;
  if (!flags.reselect && !aux) {
    throw ConfigError("at least one task must be enabled");
  }
  if (aux) gen.Validate();
  if (train.empty()) throw ConfigError("empty training set");
  if (valid.empty()) throw ConfigError("empty validation set");
  CheckGroupSizes(valid);
  const auto max_len = static_cast<std::size_t>(cfg.max_len);
  const auto max_pos = static_cast<std::size_t>(model.config().max_positions);
  if (max_len > max_pos) {
    throw ConfigError("max_len exceeds the encoder's max_positions");
  }

  std::vector<PreparedExample> prepared;
  prepared.reserve(train.size());
  for (const auto& ex : train) prepared.push_back(PrepareExample(ex, encoder, max_len));

  const std::size_t b = std::min(static_cast<std::size_t>(cfg.batch_size), train.size());
  IndexStream stream(train.size(), StreamRng(cfg.seed, "data:reselect"));
  Rng dropout = StreamRng(cfg.seed, "dropout:reselect");
  std::array<Rng, 3> aux_dropout = {StreamRng(cfg.seed, "dropout:insertion"),
                                    StreamRng(cfg.seed, "dropout:deletion"),
                                    StreamRng(cfg.seed, "dropout:replacement")};
  Rng aux_rng = StreamRng(cfg.seed, "aux-samples");

  Run run(model, cfg, CeilDiv(train.size(), b));
  std::size_t skipped = 0;
  std::uint64_t step = 0;
  while (step < run.total()) {
    Tape tape;
    std::array<Tensor, 4> terms;
    const auto idx = stream.Next(b);
    if (flags.reselect) {
      std::vector<Tensor> losses;
      for (std::size_t i : idx) {
        const Tensor s = MatchOf(tape, model, prepared[i].seq, {&dropout});
        losses.push_back(model::MatchLoss(tape, s, prepared[i].label));
      }
      terms[3] = nd::Mean(tape, nd::Stack(tape, losses));
    }
    if (aux) {
      std::vector<const DialogueExample*> batch;
      for (std::size_t i : idx) batch.push_back(&train[i]);
      const auto samples = BuildAuxiliarySamples(batch, flags, gen, aux_rng);
      const auto ready = Prepare(samples, encoder, max_len, max_pos, &skipped);
      for (corpus::Task t : corpus::kAllTasks) {
        const auto ti = static_cast<std::size_t>(t);
        std::vector<const Prepared*> of_task;
        for (const auto& p : ready) {
          if (p.task == t) of_task.push_back(&p);
        }
        terms[ti] = BatchTaskLoss(tape, model, of_task, aux_dropout[ti]);
      }
    }
    Tensor loss;
    if (terms[0].defined() || terms[1].defined() || terms[2].defined() ||
        terms[3].defined()) {
      loss = model::LFinal(tape, terms[0], terms[1], terms[2], terms[3]);
    } else {
      loss = Tensor::Scalar(0.0);  // every context too short for auxiliaries
    }
    StepLoss rec;
    if (loss.requires_grad()) {
      rec = run.Update(tape, loss, step, terms);
    } else {
      rec.step = step;
      rec.epoch = run.epoch_of(step);
      rec.lr = ScheduledLr(step, run.total(), cfg.lr, cfg.warmup_proportion);
    }
    if (on_step) on_step(rec);
    ++step;
    if (!run.ShouldEvaluate(step)) continue;
    const auto report = EvaluateRanking(model, valid, encoder, max_len);
    EvalRecord er{step, report.recall_at_1, report.map, report.ToJson()};
    if (run.Record(std::move(er), report.recall_at_1)) break;
  }
  return run.Finish(step, skipped);
}

}  // namespace

std::vector<double> ScoreExamples(const Model& model,
                                  const std::vector<DialogueExample>& examples,
                                  const tokenizer::TextEncoder& encoder,
                                  std::size_t max_len) {
  std::vector<double> scores;
  scores.reserve(examples.size());
  for (const auto& ex : examples) {
    Tape tape;
    scores.push_back(
        MatchOf(tape, model, PrepareExample(ex, encoder, max_len).seq, {}).item());
  }
  return scores;
}

evaluation::MetricReport EvaluateRanking(
    const Model& model, const std::vector<DialogueExample>& examples,
    const tokenizer::TextEncoder& encoder, std::size_t max_len) {
  const auto scores = ScoreExamples(model, examples, encoder, max_len);
  return evaluation::Evaluate(evaluation::GroupScores(examples, scores));
}

TrainResult Finetune(Model& model, const std::vector<DialogueExample>& train,
                     const std::vector<DialogueExample>& valid,
                     const tokenizer::TextEncoder& encoder,
                     const TrainConfig& cfg, const StepCallback& on_step) {
  TaskFlags only_reselect{false, false, false, true};
  return RunResponseSelection(model, train, valid, encoder, cfg, only_reselect,
                              {}, on_step);
}

std::vector<Sample> BuildAuxiliarySamples(
    const std::vector<const DialogueExample*>& batch, const TaskFlags& flags,
    const samplegen::GenerationConfig& gen, Rng& rng,
    std::vector<samplegen::Dialogue>* dialogues) {
  std::vector<samplegen::Dialogue> unique;
  std::set<std::vector<std::string>> seen;
  for (const DialogueExample* ex : batch) {
    if (ex->context.size() < 3) continue;
    if (!seen.insert(ex->context).second) continue;
    unique.push_back({"ctx:" + ex->group_id, ex->context});
  }
  std::vector<Sample> out;
  if (!unique.empty()) {
    const samplegen::DonorPool donors(unique);
    for (const auto& d : unique) {
      if (flags.insertion) {
        if (auto s = samplegen::GenInsertionDomain(d, gen, rng)) out.push_back(*s);
      }
      if (flags.deletion) {
        if (auto s = samplegen::GenDeletionDomain(d, gen, rng)) out.push_back(*s);
      }
      if (flags.replacement) {
        if (auto s = samplegen::GenReplacementDomain(d, donors, gen, rng)) {
          out.push_back(*s);
        }
      }
    }
  }
  if (dialogues) *dialogues = std::move(unique);
  return out;
}

TrainResult DomainMultitask(Model& model,
                            const std::vector<DialogueExample>& train,
                            const std::vector<DialogueExample>& valid,
                            const tokenizer::TextEncoder& encoder,
                            const TrainConfig& cfg,
                            const samplegen::GenerationConfig& gen,
                            const StepCallback& on_step) {
  return RunResponseSelection(model, train, valid, encoder, cfg, cfg.tasks,
                              gen, on_step);
}

}  // namespace dopt::training
