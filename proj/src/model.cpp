#include "fiat/model.hpp"

#include <cmath>

#include "fiat/lora.hpp"
#include "fiat/rng.hpp"

namespace fiat {

void ModelConfig::validate() const {
  require(n_layers > 0 && d_model > 0 && n_heads > 0 && d_ff > 0 && max_seq_len > 0,
          ErrorKind::ConfigError, "model config: all dimensions must be positive");
  require(d_model % n_heads == 0, ErrorKind::ConfigError,
          "model config: d_model must be divisible by n_heads");
  require(vocab_size >= kMinVocabSize, ErrorKind::ConfigError,
          "model config: vocab_size must be at least " + std::to_string(kMinVocabSize));
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"n_layers", c.n_layers},   {"d_model", c.d_model},
       {"n_heads", c.n_heads},     {"d_ff", c.d_ff},
       {"vocab_size", c.vocab_size}, {"max_seq_len", c.max_seq_len}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("n_layers").get_to(c.n_layers);
  j.at("d_model").get_to(c.d_model);
  j.at("n_heads").get_to(c.n_heads);
  j.at("d_ff").get_to(c.d_ff);
  j.at("vocab_size").get_to(c.vocab_size);
  j.at("max_seq_len").get_to(c.max_seq_len);
}

std::string to_string(CheckpointKind kind) {
  return kind == CheckpointKind::RawPretrained ? "raw-pretrained" : "instruction-pretrained";
}

CheckpointKind checkpoint_kind_from_string(const std::string& s) {
  if (s == "raw-pretrained") return CheckpointKind::RawPretrained;
  if (s == "instruction-pretrained") return CheckpointKind::InstructionPretrained;
  raise(ErrorKind::ConfigError, "unknown checkpoint kind: " + s);
}

std::string to_string(Target t) {
  switch (t) {
    case Target::Q: return "q";
    case Target::K: return "k";
    case Target::V: return "v";
    case Target::O: return "o";
    case Target::FfIn: return "ff_in";
    case Target::FfOut: return "ff_out";
  }
  return "?";
}

Target target_from_string(const std::string& s) {
  if (s == "q") return Target::Q;
  if (s == "k") return Target::K;
  if (s == "v") return Target::V;
  if (s == "o") return Target::O;
  if (s == "ff_in") return Target::FfIn;
  if (s == "ff_out") return Target::FfOut;
  raise(ErrorKind::ConfigError, "unknown adapter target: " + s);
}

void to_json(nlohmann::json& j, const DecodeParams& dp) {
  j = {{"max_new_tokens", dp.max_new_tokens}, {"stop", dp.stop}};
}

void from_json(const nlohmann::json& j, DecodeParams& dp) {
  j.at("max_new_tokens").get_to(dp.max_new_tokens);
  if (j.contains("stop")) j.at("stop").get_to(dp.stop);
}

ModelParams ModelParams::init(const ModelConfig& config, uint64_t seed) {
  config.validate();
  Rng rng(seed);
  auto gauss = [&rng](Eigen::Index r, Eigen::Index c) {
    Mat m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
      for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.gaussian(0.0, 0.02);
    return m;
  };

  ModelParams p;
  p.config = config;
  p.seed = seed;
  p.embedding = gauss(config.vocab_size, config.d_model);
  p.positional = gauss(config.max_seq_len, config.d_model);
  p.layers.resize(config.n_layers);
  for (LayerParams& layer : p.layers) {
    layer.ln1_g = Mat::Ones(1, config.d_model);
    layer.ln1_b = Mat::Zero(1, config.d_model);
    layer.wq = gauss(config.d_model, config.d_model);
    layer.wk = gauss(config.d_model, config.d_model);
    layer.wv = gauss(config.d_model, config.d_model);
    layer.wo = gauss(config.d_model, config.d_model);
    layer.ln2_g = Mat::Ones(1, config.d_model);
    layer.ln2_b = Mat::Zero(1, config.d_model);
    layer.w_ff_in = gauss(config.d_ff, config.d_model);
    layer.b_ff_in = Mat::Zero(1, config.d_ff);
    layer.w_ff_out = gauss(config.d_model, config.d_ff);
    layer.b_ff_out = Mat::Zero(1, config.d_model);
  }
  p.ln_f_g = Mat::Ones(1, config.d_model);
  p.ln_f_b = Mat::Zero(1, config.d_model);
  p.w_out = gauss(config.vocab_size, config.d_model);
  return p;
}

namespace {

template <typename Params, typename MatPtr>
std::vector<std::pair<std::string, MatPtr>> list_tensors(Params& p) {
  std::vector<std::pair<std::string, MatPtr>> out;
  out.emplace_back("embedding", &p.embedding);
  out.emplace_back("positional", &p.positional);
  for (size_t i = 0; i < p.layers.size(); ++i) {
    auto& l = p.layers[i];
    std::string prefix = "layers." + std::to_string(i) + ".";
    out.emplace_back(prefix + "ln1_g", &l.ln1_g);
    out.emplace_back(prefix + "ln1_b", &l.ln1_b);
    out.emplace_back(prefix + "wq", &l.wq);
    out.emplace_back(prefix + "wk", &l.wk);
    out.emplace_back(prefix + "wv", &l.wv);
    out.emplace_back(prefix + "wo", &l.wo);
    out.emplace_back(prefix + "ln2_g", &l.ln2_g);
    out.emplace_back(prefix + "ln2_b", &l.ln2_b);
    out.emplace_back(prefix + "w_ff_in", &l.w_ff_in);
    out.emplace_back(prefix + "b_ff_in", &l.b_ff_in);
    out.emplace_back(prefix + "w_ff_out", &l.w_ff_out);
    out.emplace_back(prefix + "b_ff_out", &l.b_ff_out);
  }
  out.emplace_back("ln_f_g", &p.ln_f_g);
  out.emplace_back("ln_f_b", &p.ln_f_b);
  out.emplace_back("w_out", &p.w_out);
  return out;
}

}  // namespace

std::vector<std::pair<std::string, const Mat*>> ModelParams::named_tensors() const {
  return list_tensors<const ModelParams, const Mat*>(*this);
}

std::vector<std::pair<std::string, Mat*>> ModelParams::named_tensors() {
  return list_tensors<ModelParams, Mat*>(*this);
}

const Mat& ModelParams::target_matrix(int layer, Target t) const {
  return const_cast<ModelParams*>(this)->target_matrix(layer, t);
}

Mat& ModelParams::target_matrix(int layer, Target t) {
  LayerParams& l = layers.at(layer);
  switch (t) {
    case Target::Q: return l.wq;
    case Target::K: return l.wk;
    case Target::V: return l.wv;
    case Target::O: return l.wo;
    case Target::FfIn: return l.w_ff_in;
    case Target::FfOut: return l.w_ff_out;
  }
  raise(ErrorKind::ConfigError, "bad adapter target");
}

size_t ModelParams::parameter_count() const {
  size_t n = 0;
  for (const auto& [name, mat] : named_tensors()) n += static_cast<size_t>(mat->size());
  return n;
}

ModelVars bind_model(Tape& tape, const ModelParams& params, bool trainable) {
  ModelVars v;
  v.config = &params.config;
  v.embedding = tape.leaf(params.embedding, trainable);
  v.positional = tape.leaf(params.positional, trainable);
  v.layers.resize(params.layers.size());
  for (size_t i = 0; i < params.layers.size(); ++i) {
    const LayerParams& l = params.layers[i];
    LayerVars& lv = v.layers[i];
    lv.ln1_g = tape.leaf(l.ln1_g, trainable);
    lv.ln1_b = tape.leaf(l.ln1_b, trainable);
    lv.wq = tape.leaf(l.wq, trainable);
    lv.wk = tape.leaf(l.wk, trainable);
    lv.wv = tape.leaf(l.wv, trainable);
    lv.wo = tape.leaf(l.wo, trainable);
    lv.ln2_g = tape.leaf(l.ln2_g, trainable);
    lv.ln2_b = tape.leaf(l.ln2_b, trainable);
    lv.w_ff_in = tape.leaf(l.w_ff_in, trainable);
    lv.b_ff_in = tape.leaf(l.b_ff_in, trainable);
    lv.w_ff_out = tape.leaf(l.w_ff_out, trainable);
    lv.b_ff_out = tape.leaf(l.b_ff_out, trainable);
  }
  v.ln_f_g = tape.leaf(params.ln_f_g, trainable);
  v.ln_f_b = tape.leaf(params.ln_f_b, trainable);
  v.w_out = tape.leaf(params.w_out, trainable);
  return v;
}

void bind_adapters(ModelVars& vars, Tape& tape, const AdapterSet& adapters, bool trainable) {
  require(vars.layers.size() == adapters.layers.size(), ErrorKind::ShapeMismatch,
          "bind_adapters: adapter set was built for a different layer count");
  vars.adapter_scale = adapters.config.alpha / static_cast<double>(adapters.config.rank);
  for (size_t i = 0; i < adapters.layers.size(); ++i) {
    for (const auto& [target, pair] : adapters.layers[i]) {
      AdapterPairVars pv;
      pv.a = tape.leaf(pair.a, trainable);
      pv.b = tape.leaf(pair.b, trainable);
      vars.layers[i].adapters.emplace(target, pv);
    }
  }
}

namespace {

// x · Wᵀ, plus the low-rank path (alpha/r) · (x · Aᵀ) · Bᵀ when attached.
Var project(const ModelVars& vars, const LayerVars& layer, Target target, const Var& w,
            const Var& x) {
  Var y = matmul_nt(x, w);
  auto it = layer.adapters.find(target);
  if (it != layer.adapters.end()) {
    Var low = matmul_nt(matmul_nt(x, it->second.a), it->second.b);
    y = add(y, scale(low, vars.adapter_scale));
  }
  return y;
}

Var affine_layernorm(const Var& x, const Var& gain, const Var& bias) {
  return add_rowvec(mul_rowvec(layernorm(x), gain), bias);
}

}  // namespace

Var forward_hidden(Tape& tape, const ModelVars& vars, const std::vector<int>& tokens) {
  const ModelConfig& cfg = *vars.config;
  tape.check_owns(vars.embedding, "forward_hidden");
  require(!tokens.empty(), ErrorKind::ShapeMismatch, "forward: empty token sequence");
  require(static_cast<int>(tokens.size()) <= cfg.max_seq_len, ErrorKind::SequenceTooLong,
          "forward: sequence of " + std::to_string(tokens.size()) + " exceeds max_seq_len " +
              std::to_string(cfg.max_seq_len));
  for (int id : tokens)
    require(id >= 0 && id < cfg.vocab_size, ErrorKind::IndexOutOfRange,
            "forward: token id " + std::to_string(id) + " outside vocab");

  std::vector<int> positions(tokens.size());
  for (size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int>(i);

  Var x = add(gather_rows(vars.embedding, tokens), gather_rows(vars.positional, positions));

  const int dh = cfg.head_dim();
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  for (const LayerVars& layer : vars.layers) {
    Var h = affine_layernorm(x, layer.ln1_g, layer.ln1_b);
    Var q = project(vars, layer, Target::Q, layer.wq, h);
    Var k = project(vars, layer, Target::K, layer.wk, h);
    Var v = project(vars, layer, Target::V, layer.wv, h);
    std::vector<Var> heads;
    heads.reserve(cfg.n_heads);
    for (int head = 0; head < cfg.n_heads; ++head) {
      Var qh = slice_cols(q, head * dh, (head + 1) * dh);
      Var kh = slice_cols(k, head * dh, (head + 1) * dh);
      Var vh = slice_cols(v, head * dh, (head + 1) * dh);
      Var probs = causal_softmax(scale(matmul_nt(qh, kh), inv_sqrt_dh));
      heads.push_back(matmul(probs, vh));
    }
    Var ctx = cfg.n_heads == 1 ? heads.front() : concat_cols(heads);
    x = add(x, project(vars, layer, Target::O, layer.wo, ctx));

    Var h2 = affine_layernorm(x, layer.ln2_g, layer.ln2_b);
    Var ff = add_rowvec(project(vars, layer, Target::FfIn, layer.w_ff_in, h2),
                        layer.b_ff_in);
    ff = gelu(ff);
    ff = add_rowvec(project(vars, layer, Target::FfOut, layer.w_ff_out, ff),
                    layer.b_ff_out);
    x = add(x, ff);
  }
  return affine_layernorm(x, vars.ln_f_g, vars.ln_f_b);
}

Var forward_tokens(Tape& tape, const ModelVars& vars, const std::vector<int>& tokens) {
  return matmul_nt(forward_hidden(tape, vars, tokens), vars.w_out);
}

Mat forward_logits(const ModelParams& params, const std::vector<int>& tokens,
                   const AdapterSet* adapters) {
  Tape tape;
  ModelVars vars = bind_model(tape, params, false);
  if (adapters != nullptr) bind_adapters(vars, tape, *adapters, false);
  Var logits = forward_tokens(tape, vars, tokens);
  return tape.value(logits);
}

namespace {

int argmax_lowest_id(const Mat& logits_row) {
  int best = 0;
  double best_value = logits_row(0, 0);
  for (Eigen::Index j = 1; j < logits_row.cols(); ++j) {
    if (logits_row(0, j) > best_value) {
      best_value = logits_row(0, j);
      best = static_cast<int>(j);
    }
  }
  return best;
}

}  // namespace

std::string greedy_decode(const ModelParams& params, const std::vector<int>& prompt_tokens,
                          const DecodeParams& dp, const AdapterSet* adapters) {
  require(dp.max_new_tokens >= 0, ErrorKind::ConfigError, "max_new_tokens must be >= 0");
  require(static_cast<int>(prompt_tokens.size()) + dp.max_new_tokens <= params.config.max_seq_len,
          ErrorKind::SequenceTooLong,
          "decode: prompt of " + std::to_string(prompt_tokens.size()) +
              " does not leave room for " + std::to_string(dp.max_new_tokens) + " new tokens");

  std::vector<int> tokens = prompt_tokens;
  std::string out;
  for (int step = 0; step < dp.max_new_tokens; ++step) {
    // only the last position needs the output projection
    Tape tape;
    ModelVars vars = bind_model(tape, params, false);
    if (adapters != nullptr) bind_adapters(vars, tape, *adapters, false);
    Var hidden = forward_hidden(tape, vars, tokens);
    Var last = gather_rows(hidden, {static_cast<int>(tokens.size()) - 1});
    Mat logits = tape.value(matmul_nt(last, vars.w_out));
    int next = argmax_lowest_id(logits.row(0));
    if (is_reserved_token(next)) break;
    out.push_back(static_cast<char>(static_cast<unsigned char>(next)));
    tokens.push_back(next);
    bool stopped = false;
    for (const std::string& s : dp.stop) {
      if (!s.empty() && out.size() >= s.size() && out.compare(out.size() - s.size(), s.size(), s) == 0) {
        out.erase(out.size() - s.size());
        stopped = true;
        break;
      }
    }
    if (stopped) break;
  }
  return out;
}

double sequence_logprob(const ModelParams& params, const std::vector<int>& prompt_tokens,
                        const std::vector<int>& continuation, const AdapterSet* adapters) {
  if (continuation.empty()) return 0.0;
  require(!prompt_tokens.empty(), ErrorKind::ShapeMismatch,
          "sequence_logprob: empty prompt");
  std::vector<int> all = prompt_tokens;
  all.insert(all.end(), continuation.begin(), continuation.end());
  require(static_cast<int>(all.size()) <= params.config.max_seq_len, ErrorKind::SequenceTooLong,
          "sequence_logprob: combined length exceeds max_seq_len");
  for (int tok : continuation)
    require(tok >= 0 && tok < params.config.vocab_size, ErrorKind::IndexOutOfRange,
            "sequence_logprob: token outside vocab");

  // project only the rows that score the continuation
  Tape tape;
  ModelVars vars = bind_model(tape, params, false);
  if (adapters != nullptr) bind_adapters(vars, tape, *adapters, false);
  Var hidden = forward_hidden(tape, vars, all);
  std::vector<int> rows(continuation.size());
  for (size_t i = 0; i < continuation.size(); ++i)
    rows[i] = static_cast<int>(prompt_tokens.size() - 1 + i);
  Mat logits = tape.value(matmul_nt(gather_rows(hidden, rows), vars.w_out));
  Mat logp = log_softmax_rows(logits);
  double total = 0.0;
  for (size_t i = 0; i < continuation.size(); ++i)
    total += logp(static_cast<Eigen::Index>(i), continuation[i]);
  return total;
}

}  // namespace fiat
