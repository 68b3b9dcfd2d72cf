// Transformer encoder, the three [SOT]-based pre-training heads and the GRU
// response matcher.

#ifndef DOPT_MODEL_H_
#define DOPT_MODEL_H_

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dopt/common.h"
#include "dopt/ndiff.h"
#include "dopt/tokenizer.h"
#include "json.hpp"

namespace dopt::model {

using nd::Tape;
using nd::Tensor;
using tokenizer::TokenId;
using tokenizer::TokenSequence;

struct EncoderConfig {
  int layers = 2;
  int heads = 4;
  int d_model = 64;
  int d_ff = 256;
  int max_positions = 512;
  int vocab_size = 0;
  double dropout = 0.1;
  std::uint64_t seed = 0;

  void Validate() const;
  nlohmann::json ToJson() const;
  static EncoderConfig FromJson(const nlohmann::json& j);
  bool operator==(const EncoderConfig&) const = default;
};

struct LayerParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor attn_norm_gain, attn_norm_bias;
  Tensor ff_in, ff_in_bias, ff_out, ff_out_bias;
  Tensor ff_norm_gain, ff_norm_bias;
};

struct GruParams {
  // Input weights [d,d], hidden weights [d,d], biases [d].
  Tensor w_update, u_update, b_update;
  Tensor w_reset, u_reset, b_reset;
  Tensor w_candidate, u_candidate, b_candidate;
};

struct ModelParams {
  Tensor token_embedding, position_embedding, segment_embedding;
  Tensor embed_norm_gain, embed_norm_bias;
  std::vector<LayerParams> layers;
  Tensor replace_w, replace_b;  // [d,1], [1]
  GruParams gru;
  Tensor match_w, match_b;  // [d,1], [1]
};

using NamedTensor = std::pair<std::string, Tensor>;

// Dropout is active only when a random stream is supplied.
struct ForwardMode {
  Rng* dropout_rng = nullptr;
};

class Model {
 public:
  // Parameters drawn uniformly in +-1/sqrt(fan_in) under config.seed.
  explicit Model(EncoderConfig config);

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  // Deep copy with independent parameter storage.
  Model Clone() const;

  const EncoderConfig& config() const { return config_; }
  const ModelParams& params() const { return params_; }
  // Fixed order; names are stable across builds and used by checkpoints.
  const std::vector<NamedTensor>& named_parameters() const { return named_; }
  std::size_t parameter_count() const;

  // Encodes one sequence to [L, d_model]. Tokens at positions >=
  // valid_length are padding and are never attended to.
  Tensor EncodeOne(Tape& tape, std::span<const TokenId> ids,
                   std::span<const TokenId> segments, std::size_t valid_length,
                   ForwardMode mode = {}) const;
  Tensor EncodeOne(Tape& tape, const TokenSequence& seq,
                   ForwardMode mode = {}) const;
  // Pads to the longest sequence and returns [B, L, d_model].
  Tensor Encode(Tape& tape, const std::vector<TokenSequence>& batch,
                ForwardMode mode = {}) const;

  // Rows of `states` ([L,d]) at the [SOT] positions, in order.
  static Tensor GatherSot(Tape& tape, const Tensor& states,
                          std::span<const std::size_t> sot_positions);

  // cos(E[0], E[j+1]) for every row after the anchor.
  static Tensor InsertionScores(Tape& tape, const Tensor& sot);
  // cos(E[last], E[j]) for every row before the query.
  static Tensor DeletionScores(Tape& tape, const Tensor& sot);
  // W_r . E[j] + b_r for every row.
  Tensor ReplacementScores(Tape& tape, const Tensor& sot) const;
  // GRU over rows (context turns then response); sigmoid(W.H + b).
  Tensor MatchScore(Tape& tape, const Tensor& sot) const;

  // Per-utterance cosine between the response [SOT] and each context [SOT]
  // under the response-selection layout.
  std::vector<double> InspectSimilarity(
      const std::vector<std::string>& context, const std::string& response,
      const tokenizer::TextEncoder& encoder, std::size_t max_len) const;

 private:
  void IndexParameters();
  Tensor EncoderLayer(Tape& tape, const LayerParams& layer, const Tensor& x,
                      const Tensor& mask, ForwardMode mode) const;

  EncoderConfig config_;
  ModelParams params_;
  std::vector<NamedTensor> named_;
};

// Cross entropy of softmax(scores) at `label`.
Tensor TaskLoss(Tape& tape, const Tensor& scores, std::size_t label);
// -log(sY + (1-s)(1-Y)).
Tensor MatchLoss(Tape& tape, const Tensor& score, int label);

// Unweighted sums in argument order. Undefined tensors (disabled tasks)
// contribute nothing.
Tensor LGen(Tape& tape, const Tensor& insertion, const Tensor& deletion,
            const Tensor& replacement);
Tensor LFinal(Tape& tape, const Tensor& insertion, const Tensor& deletion,
              const Tensor& replacement, const Tensor& reselect);
double LGen(double insertion, double deletion, double replacement);
double LFinal(double insertion, double deletion, double replacement,
              double reselect);

// Index of the largest score; first occurrence wins ties.
std::size_t Argmax(std::span<const double> scores);

}  // namespace dopt::model

#endif  // DOPT_MODEL_H_
