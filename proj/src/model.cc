#include "dopt/model.h"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace dopt::model {
namespace {

using nlohmann::json;

constexpr double kMaskValue = -1e9;

Tensor Param(nd::Shape shape) { return Tensor::Zeros(std::move(shape), true); }

std::size_t D(int v) { return static_cast<std::size_t>(v); }

}  // namespace

void EncoderConfig::Validate() const {
  if (layers < 1) throw ConfigError("layers must be >= 1");
  if (heads < 1) throw ConfigError("heads must be >= 1");
  if (d_model < 1 || d_model % heads != 0) {
    throw ConfigError("d_model must be a positive multiple of heads");
  }
  if (d_ff < 1) throw ConfigError("d_ff must be >= 1");
  if (max_positions < 4) throw ConfigError("max_positions must be >= 4");
  if (vocab_size <= static_cast<int>(tokenizer::kNumSpecials)) {
    throw ConfigError("vocab_size must exceed the special tokens");
  }
  if (dropout < 0.0 || dropout >= 1.0) {
    throw ConfigError("dropout must be in [0, 1)");
  }
}

json EncoderConfig::ToJson() const {
  return json{{"layers", layers},         {"heads", heads},
              {"d_model", d_model},       {"d_ff", d_ff},
              {"max_positions", max_positions},
              {"vocab_size", vocab_size}, {"dropout", dropout},
              {"seed", seed}};
}

EncoderConfig EncoderConfig::FromJson(const json& j) {
  EncoderConfig c;
  c.layers = j.value("layers", c.layers);
  c.heads = j.value("heads", c.heads);
  c.d_model = j.value("d_model", c.d_model);
  c.d_ff = j.value("d_ff", c.d_ff);
  c.max_positions = j.value("max_positions", c.max_positions);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.dropout = j.value("dropout", c.dropout);
  c.seed = j.value("seed", c.seed);
  return c;
}

Model::Model(EncoderConfig config) : config_(std::move(config)) {
  config_.Validate();
  const std::size_t d = D(config_.d_model), ff = D(config_.d_ff);
  ModelParams& p = params_;
  p.token_embedding = Param({D(config_.vocab_size), d});
  p.position_embedding = Param({D(config_.max_positions), d});
  p.segment_embedding = Param({2, d});
  p.embed_norm_gain = Param({d});
  p.embed_norm_bias = Param({d});
  for (int l = 0; l < config_.layers; ++l) {
    LayerParams layer;
    layer.wq = Param({d, d});
    layer.bq = Param({d});
    layer.wk = Param({d, d});
    layer.bk = Param({d});
    layer.wv = Param({d, d});
    layer.bv = Param({d});
    layer.wo = Param({d, d});
    layer.bo = Param({d});
    layer.attn_norm_gain = Param({d});
    layer.attn_norm_bias = Param({d});
    layer.ff_in = Param({d, ff});
    layer.ff_in_bias = Param({ff});
    layer.ff_out = Param({ff, d});
    layer.ff_out_bias = Param({d});
    layer.ff_norm_gain = Param({d});
    layer.ff_norm_bias = Param({d});
    p.layers.push_back(std::move(layer));
  }
  p.replace_w = Param({d, 1});
  p.replace_b = Param({1});
  GruParams& g = p.gru;
  for (Tensor* w : {&g.w_update, &g.u_update, &g.w_reset, &g.u_reset,
                    &g.w_candidate, &g.u_candidate}) {
    *w = Param({d, d});
  }
  for (Tensor* b : {&g.b_update, &g.b_reset, &g.b_candidate}) *b = Param({d});
  p.match_w = Param({d, 1});
  p.match_b = Param({1});
  IndexParameters();

  // Matrices: U(-1/sqrt(fan_in), 1/sqrt(fan_in)); embedding tables use the
  // row width. Norm gains start at 1, biases at 0. The matcher output starts
  // at zero so an untrained model scores every pair 0.5.
  Rng rng(SplitMix64(config_.seed));
  for (auto& [name, t] : named_) {
    auto v = t.mutable_values();
    if (name.ends_with("norm.gain")) {
      std::fill(v.begin(), v.end(), 1.0);
    } else if (t.rank() == 2 && !name.starts_with("match.")) {
      const bool table = name.starts_with("embeddings.");
      const double bound =
          1.0 / std::sqrt(static_cast<double>(table ? t.dim(1) : t.dim(0)));
      for (double& x : v) x = (2.0 * UniformUnit(rng) - 1.0) * bound;
    }
  }
}

void Model::IndexParameters() {
  named_.clear();
  const ModelParams& p = params_;
  named_.emplace_back("embeddings.token", p.token_embedding);
  named_.emplace_back("embeddings.position", p.position_embedding);
  named_.emplace_back("embeddings.segment", p.segment_embedding);
  named_.emplace_back("embeddings.norm.gain", p.embed_norm_gain);
  named_.emplace_back("embeddings.norm.bias", p.embed_norm_bias);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const LayerParams& L = p.layers[l];
    const std::string pre = "layer" + std::to_string(l) + ".";
    named_.emplace_back(pre + "attn.wq", L.wq);
    named_.emplace_back(pre + "attn.bq", L.bq);
    named_.emplace_back(pre + "attn.wk", L.wk);
    named_.emplace_back(pre + "attn.bk", L.bk);
    named_.emplace_back(pre + "attn.wv", L.wv);
    named_.emplace_back(pre + "attn.bv", L.bv);
    named_.emplace_back(pre + "attn.wo", L.wo);
    named_.emplace_back(pre + "attn.bo", L.bo);
    named_.emplace_back(pre + "attn.norm.gain", L.attn_norm_gain);
    named_.emplace_back(pre + "attn.norm.bias", L.attn_norm_bias);
    named_.emplace_back(pre + "ff.in", L.ff_in);
    named_.emplace_back(pre + "ff.in_bias", L.ff_in_bias);
    named_.emplace_back(pre + "ff.out", L.ff_out);
    named_.emplace_back(pre + "ff.out_bias", L.ff_out_bias);
    named_.emplace_back(pre + "ff.norm.gain", L.ff_norm_gain);
    named_.emplace_back(pre + "ff.norm.bias", L.ff_norm_bias);
  }
  named_.emplace_back("replace.w", p.replace_w);
  named_.emplace_back("replace.b", p.replace_b);
  const GruParams& g = p.gru;
  named_.emplace_back("gru.w_update", g.w_update);
  named_.emplace_back("gru.u_update", g.u_update);
  named_.emplace_back("gru.b_update", g.b_update);
  named_.emplace_back("gru.w_reset", g.w_reset);
  named_.emplace_back("gru.u_reset", g.u_reset);
  named_.emplace_back("gru.b_reset", g.b_reset);
  named_.emplace_back("gru.w_candidate", g.w_candidate);
  named_.emplace_back("gru.u_candidate", g.u_candidate);
  named_.emplace_back("gru.b_candidate", g.b_candidate);
  named_.emplace_back("match.w", p.match_w);
  named_.emplace_back("match.b", p.match_b);
}

Model Model::Clone() const {
  Model copy(config_);
  const auto& src = named_;
  const auto& dst = copy.named_;
  for (std::size_t i = 0; i < src.size(); ++i) {
    auto out = dst[i].second;
    std::copy(src[i].second.values().begin(), src[i].second.values().end(),
              out.mutable_values().begin());
  }
  return copy;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named_) n += t.size();
  return n;
}

Tensor Model::EncoderLayer(Tape& tape, const LayerParams& layer,
                           const Tensor& x, const Tensor& mask,
                           ForwardMode mode) const {
  const std::size_t heads = D(config_.heads);
  const std::size_t dh = D(config_.d_model) / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const Tensor q = nd::Add(tape, nd::MatMul(tape, x, layer.wq), layer.bq);
  const Tensor k = nd::Add(tape, nd::MatMul(tape, x, layer.wk), layer.bk);
  const Tensor v = nd::Add(tape, nd::MatMul(tape, x, layer.wv), layer.bv);
  std::vector<Tensor> outputs;
  outputs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const Tensor qh = nd::SliceCols(tape, q, h * dh, dh);
    const Tensor kh = nd::SliceCols(tape, k, h * dh, dh);
    const Tensor vh = nd::SliceCols(tape, v, h * dh, dh);
    Tensor scores = nd::Scale(tape, nd::MatMulTransposed(tape, qh, kh), scale);
    if (mask.defined()) scores = nd::Add(tape, scores, mask);
    outputs.push_back(nd::MatMul(tape, nd::Softmax(tape, scores), vh));
  }
  Tensor attn = heads == 1 ? outputs[0] : nd::ConcatCols(tape, outputs);
  attn = nd::Add(tape, nd::MatMul(tape, attn, layer.wo), layer.bo);
  if (mode.dropout_rng) {
    attn = nd::Dropout(tape, attn, config_.dropout, *mode.dropout_rng);
  }
  Tensor h = nd::LayerNorm(tape, nd::Add(tape, x, attn), layer.attn_norm_gain,
                           layer.attn_norm_bias);
  Tensor ff = nd::Gelu(
      tape, nd::Add(tape, nd::MatMul(tape, h, layer.ff_in), layer.ff_in_bias));
  ff = nd::Add(tape, nd::MatMul(tape, ff, layer.ff_out), layer.ff_out_bias);
  if (mode.dropout_rng) {
    ff = nd::Dropout(tape, ff, config_.dropout, *mode.dropout_rng);
  }
  return nd::LayerNorm(tape, nd::Add(tape, h, ff), layer.ff_norm_gain,
                       layer.ff_norm_bias);
}

Tensor Model::EncodeOne(Tape& tape, std::span<const TokenId> ids,
                        std::span<const TokenId> segments,
                        std::size_t valid_length, ForwardMode mode) const {
  const std::size_t len = ids.size();
  if (len == 0) throw std::invalid_argument("EncodeOne: empty sequence");
  if (len > D(config_.max_positions)) {
    throw std::out_of_range("EncodeOne: length " + std::to_string(len) +
                            " exceeds max_positions " +
                            std::to_string(config_.max_positions));
  }
  if (segments.size() != len) {
    throw nd::ShapeError("EncodeOne", "segments length " +
                                          std::to_string(segments.size()) +
                                          " vs ids " + std::to_string(len));
  }
  if (valid_length == 0 || valid_length > len) {
    throw std::out_of_range("EncodeOne: valid_length out of range");
  }
  for (TokenId s : segments) {
    if (s != 0 && s != 1) throw std::out_of_range("EncodeOne: segment id");
  }
  const ModelParams& p = params_;
  Tensor x = nd::Add(
      tape,
      nd::Add(tape, nd::EmbeddingLookup(tape, p.token_embedding, ids),
              nd::SliceRows(tape, p.position_embedding, 0, len)),
      nd::EmbeddingLookup(tape, p.segment_embedding, segments));
  x = nd::LayerNorm(tape, x, p.embed_norm_gain, p.embed_norm_bias);
  if (mode.dropout_rng) {
    x = nd::Dropout(tape, x, config_.dropout, *mode.dropout_rng);
  }
  Tensor mask;
  if (valid_length < len) {
    std::vector<double> m(len * len, 0.0);
    for (std::size_t r = 0; r < len; ++r) {
      for (std::size_t c = valid_length; c < len; ++c) m[r * len + c] = kMaskValue;
    }
    mask = Tensor::Constant({len, len}, std::move(m));
  }
  for (const auto& layer : p.layers) x = EncoderLayer(tape, layer, x, mask, mode);
  return x;
}

Tensor Model::EncodeOne(Tape& tape, const TokenSequence& seq,
                        ForwardMode mode) const {
  return EncodeOne(tape, seq.ids, seq.segments, seq.ids.size(), mode);
}

Tensor Model::Encode(Tape& tape, const std::vector<TokenSequence>& batch,
                     ForwardMode mode) const {
  if (batch.empty()) throw std::invalid_argument("Encode: empty batch");
  std::size_t len = 0;
  for (const auto& s : batch) len = std::max(len, s.ids.size());
  std::vector<Tensor> rows;
  rows.reserve(batch.size());
  for (const auto& s : batch) {
    std::vector<TokenId> ids = s.ids, segs = s.segments;
    ids.resize(len, tokenizer::kPad);
    segs.resize(len, 0);
    rows.push_back(EncodeOne(tape, ids, segs, s.ids.size(), mode));
  }
  const std::size_t d = D(config_.d_model);
  return nd::Reshape(tape, nd::ConcatRows(tape, rows), {batch.size(), len, d});
}

Tensor Model::GatherSot(Tape& tape, const Tensor& states,
                        std::span<const std::size_t> sot_positions) {
  return nd::GatherRows(tape, states, sot_positions);
}

Tensor Model::InsertionScores(Tape& tape, const Tensor& sot) {
  if (sot.rank() != 2 || sot.dim(0) < 2) {
    throw std::invalid_argument("InsertionScores: need an anchor and >= 1 candidate");
  }
  const Tensor anchor = nd::SliceRows(tape, sot, 0, 1);
  std::vector<Tensor> scores;
  for (std::size_t j = 1; j < sot.dim(0); ++j) {
    scores.push_back(
        nd::CosineSimilarity(tape, anchor, nd::SliceRows(tape, sot, j, 1)));
  }
  return nd::Stack(tape, scores);
}

Tensor Model::DeletionScores(Tape& tape, const Tensor& sot) {
  if (sot.rank() != 2 || sot.dim(0) < 2) {
    throw std::invalid_argument("DeletionScores: need a query and >= 1 candidate");
  }
  const std::size_t n = sot.dim(0);
  const Tensor query = nd::SliceRows(tape, sot, n - 1, 1);
  std::vector<Tensor> scores;
  for (std::size_t j = 0; j + 1 < n; ++j) {
    scores.push_back(
        nd::CosineSimilarity(tape, query, nd::SliceRows(tape, sot, j, 1)));
  }
  return nd::Stack(tape, scores);
}

Tensor Model::ReplacementScores(Tape& tape, const Tensor& sot) const {
  if (sot.rank() != 2 || sot.dim(0) < 1) {
    throw std::invalid_argument("ReplacementScores: empty input");
  }
  const Tensor scores =
      nd::Add(tape, nd::MatMul(tape, sot, params_.replace_w), params_.replace_b);
  return nd::Reshape(tape, scores, {sot.dim(0)});
}

Tensor Model::MatchScore(Tape& tape, const Tensor& sot) const {
  if (sot.rank() != 2 || sot.dim(0) == 0) {
    throw std::invalid_argument("MatchScore: empty [SOT] sequence");
  }
  const GruParams& g = params_.gru;
  const std::size_t d = D(config_.d_model);
  Tensor h = Tensor::Zeros({1, d});
  for (std::size_t t = 0; t < sot.dim(0); ++t) {
    const Tensor x = nd::SliceRows(tape, sot, t, 1);
    auto gate = [&](const Tensor& w, const Tensor& u, const Tensor& b) {
      return nd::Sigmoid(
          tape, nd::Add(tape,
                        nd::Add(tape, nd::MatMul(tape, x, w),
                                nd::MatMul(tape, h, u)),
                        b));
    };
    const Tensor update = gate(g.w_update, g.u_update, g.b_update);
    const Tensor reset = gate(g.w_reset, g.u_reset, g.b_reset);
    const Tensor candidate = nd::Tanh(
        tape,
        nd::Add(tape,
                nd::Add(tape, nd::MatMul(tape, x, g.w_candidate),
                        nd::Mul(tape, reset, nd::MatMul(tape, h, g.u_candidate))),
                g.b_candidate));
    // h' = (1 - z) * n + z * h = n + z * (h - n)
    h = nd::Add(tape, candidate,
                nd::Mul(tape, update, nd::Sub(tape, h, candidate)));
  }
  const Tensor logit =
      nd::Add(tape, nd::MatMul(tape, h, params_.match_w), params_.match_b);
  return nd::Reshape(tape, nd::Sigmoid(tape, logit), {});
}

std::vector<double> Model::InspectSimilarity(
    const std::vector<std::string>& context, const std::string& response,
    const tokenizer::TextEncoder& encoder, std::size_t max_len) const {
  const TokenSequence seq =
      tokenizer::AssembleResponseSelection(context, response, encoder, max_len);
  Tape tape;
  const Tensor states = EncodeOne(tape, seq);
  const Tensor sot = GatherSot(tape, states, seq.sot_positions);
  const std::size_t kept = seq.sot_positions.size() - 1;
  const Tensor resp = nd::SliceRows(tape, sot, kept, 1);
  // Context turns dropped by truncation have no encoding.
  std::vector<double> out(context.size() - kept,
                          std::numeric_limits<double>::quiet_NaN());
  for (std::size_t i = 0; i < kept; ++i) {
    out.push_back(
        nd::CosineSimilarity(tape, resp, nd::SliceRows(tape, sot, i, 1)).item());
  }
  return out;
}

Tensor TaskLoss(Tape& tape, const Tensor& scores, std::size_t label) {
  return nd::CrossEntropy(tape, scores, label);
}

Tensor MatchLoss(Tape& tape, const Tensor& score, int label) {
  if (label != 0 && label != 1) {
    throw std::invalid_argument("MatchLoss: label must be 0 or 1");
  }
  // sY + (1 - s)(1 - Y) = (2Y - 1) s + (1 - Y)
  const double y = label;
  const Tensor likelihood = nd::Affine(tape, score, 2.0 * y - 1.0, 1.0 - y);
  return nd::Scale(tape, nd::Log(tape, likelihood), -1.0);
}

namespace {

Tensor SumDefined(Tape& tape, std::initializer_list<Tensor> terms) {
  Tensor total;
  for (const Tensor& t : terms) {
    if (!t.defined()) continue;
    total = total.defined() ? nd::Add(tape, total, t) : t;
  }
  if (!total.defined()) throw ConfigError("loss sum has no enabled terms");
  return total;
}

}  // namespace

Tensor LGen(Tape& tape, const Tensor& insertion, const Tensor& deletion,
            const Tensor& replacement) {
  return SumDefined(tape, {insertion, deletion, replacement});
}

Tensor LFinal(Tape& tape, const Tensor& insertion, const Tensor& deletion,
              const Tensor& replacement, const Tensor& reselect) {
  return SumDefined(tape, {insertion, deletion, replacement, reselect});
}

double LGen(double insertion, double deletion, double replacement) {
  return insertion + deletion + replacement;
}

double LFinal(double insertion, double deletion, double replacement,
              double reselect) {
  return insertion + deletion + replacement + reselect;
}

std::size_t Argmax(std::span<const double> scores) {
  if (scores.empty()) throw std::invalid_argument("Argmax: empty scores");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  return best;
}

}  // namespace dopt::model
