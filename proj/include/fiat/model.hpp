#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fiat/ops.hpp"
#include "fiat/tokenizer.hpp"

namespace fiat {

struct AdapterSet;  // peft module

struct ModelConfig {
  int n_layers = 4;
  int d_model = 64;
  int n_heads = 4;
  int d_ff = 256;
  int vocab_size = kMinVocabSize;
  int max_seq_len = 512;

  int head_dim() const { return d_model / n_heads; }
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

enum class CheckpointKind { RawPretrained, InstructionPretrained };
std::string to_string(CheckpointKind kind);
CheckpointKind checkpoint_kind_from_string(const std::string& s);

/// Weight matrices a low-rank adapter may attach to. All are stored and
/// shipped in (d_out × d_in) orientation; activations are row vectors, so a
/// projection is x · Wᵀ.
enum class Target { Q, K, V, O, FfIn, FfOut };
std::string to_string(Target t);
Target target_from_string(const std::string& s);

struct LayerParams {
  Mat ln1_g, ln1_b;
  Mat wq, wk, wv, wo;          // d_model × d_model
  Mat ln2_g, ln2_b;
  Mat w_ff_in;                 // d_ff × d_model
  Mat b_ff_in;                 // 1 × d_ff
  Mat w_ff_out;                // d_model × d_ff
  Mat b_ff_out;                // 1 × d_model
};

/// Pre-norm decoder-only transformer with learned positional embeddings and
/// a byte-level vocabulary.
struct ModelParams {
  ModelConfig config;
  CheckpointKind kind = CheckpointKind::RawPretrained;
  uint64_t seed = 0;

  Mat embedding;               // vocab × d_model
  Mat positional;              // max_seq_len × d_model
  std::vector<LayerParams> layers;
  Mat ln_f_g, ln_f_b;
  Mat w_out;                   // vocab × d_model

  static ModelParams init(const ModelConfig& config, uint64_t seed);

  /// Canonical (name, tensor) listing; defines checkpoint order.
  std::vector<std::pair<std::string, const Mat*>> named_tensors() const;
  std::vector<std::pair<std::string, Mat*>> named_tensors();

  const Mat& target_matrix(int layer, Target t) const;
  Mat& target_matrix(int layer, Target t);

  size_t parameter_count() const;
};

struct DecodeParams {
  int max_new_tokens = 64;
  std::vector<std::string> stop;  // decoding halts when output ends with any of these
};

void to_json(nlohmann::json& j, const DecodeParams& dp);
void from_json(const nlohmann::json& j, DecodeParams& dp);

// --- tape-level forward, shared by training and inference ---

struct AdapterPairVars {
  Var a, b;
};

struct LayerVars {
  Var ln1_g, ln1_b, wq, wk, wv, wo, ln2_g, ln2_b, w_ff_in, b_ff_in, w_ff_out, b_ff_out;
  std::map<Target, AdapterPairVars> adapters;
};

struct ModelVars {
  const ModelConfig* config = nullptr;
  Var embedding, positional;
  std::vector<LayerVars> layers;
  Var ln_f_g, ln_f_b, w_out;
  double adapter_scale = 0.0;  // alpha / rank when adapters are bound
};

ModelVars bind_model(Tape& tape, const ModelParams& params, bool trainable);
void bind_adapters(ModelVars& vars, Tape& tape, const AdapterSet& adapters, bool trainable);

/// Final hidden states (len × d_model) before the output projection.
Var forward_hidden(Tape& tape, const ModelVars& vars, const std::vector<int>& tokens);

/// Causal logits, one row per input token.
Var forward_tokens(Tape& tape, const ModelVars& vars, const std::vector<int>& tokens);

// --- convenience inference entry points (tape-free signatures) ---

Mat forward_logits(const ModelParams& params, const std::vector<int>& tokens,
                   const AdapterSet* adapters = nullptr);

/// Greedy decoding (argmax, ties to the lowest token id). Stops at EOS, any
/// reserved token, a stop sequence, or max_new_tokens.
std::string greedy_decode(const ModelParams& params, const std::vector<int>& prompt_tokens,
                          const DecodeParams& dp, const AdapterSet* adapters = nullptr);

/// Sum of per-token log-probabilities of `continuation` given `prompt_tokens`.
double sequence_logprob(const ModelParams& params, const std::vector<int>& prompt_tokens,
                        const std::vector<int>& continuation,
                        const AdapterSet* adapters = nullptr);

}  // namespace fiat
