#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "fd_check.hpp"
#include "fiat/adam.hpp"
#include "fiat/checkpoint.hpp"
#include "fiat/model.hpp"

using namespace fiat;
using fiat::testing::fd_check;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.n_layers = 2;
  c.d_model = 8;
  c.n_heads = 2;
  c.d_ff = 16;
  c.vocab_size = kMinVocabSize;
  c.max_seq_len = 32;
  return c;
}

}  // namespace

TEST_CASE("tokenize round trips") {
  CHECK(tokenize("") == std::vector<int>{kBosToken, kEosToken});
  CHECK(detokenize(tokenize("")) == "");
  CHECK(tokenize("ab") == std::vector<int>{kBosToken, 97, 98, kEosToken});
  CHECK(detokenize(tokenize("ab")) == "ab");

  Rng rng(99);
  for (int trial = 0; trial < 8; ++trial) {
    std::string s;
    for (int i = 0; i < 1024; ++i) s.push_back(static_cast<char>(rng.below(256)));
    CHECK(detokenize(tokenize(s)) == s);
  }
}

TEST_CASE("detokenize rejects interior reserved tokens") {
  CHECK_THROWS_AS(detokenize({kBosToken, 97, kPadToken, kEosToken}), Error);
  CHECK_THROWS_AS(detokenize({97, kBosToken, 98}), Error);
  try {
    detokenize({97, 300});
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ReservedToken);
  }
}

TEST_CASE("forward is causal") {
  ModelParams params = ModelParams::init(tiny_config(), 42);
  std::vector<int> prefix = tokenize_bytes("hello");
  prefix.insert(prefix.begin(), kBosToken);
  std::vector<int> extended = prefix;
  for (int t : tokenize_bytes(" world")) extended.push_back(t);

  Mat short_logits = forward_logits(params, prefix);
  Mat long_logits = forward_logits(params, extended);
  double max_diff =
      (long_logits.topRows(short_logits.rows()) - short_logits).cwiseAbs().maxCoeff();
  CHECK(max_diff <= 1e-10);
}

TEST_CASE("forward is deterministic for a fixed seed") {
  ModelParams a = ModelParams::init(tiny_config(), 7);
  ModelParams b = ModelParams::init(tiny_config(), 7);
  std::vector<int> tokens = tokenize("abc");
  CHECK(forward_logits(a, tokens) == forward_logits(b, tokens));
}

TEST_CASE("forward rejects over-long and invalid sequences") {
  ModelParams params = ModelParams::init(tiny_config(), 1);
  std::vector<int> too_long(params.config.max_seq_len + 1, 65);
  CHECK_THROWS_AS(forward_logits(params, too_long), Error);
  CHECK_THROWS_AS(forward_logits(params, std::vector<int>{kMinVocabSize}), Error);
}

// Scalar re-implementation of the forward pass for a 1-layer, 1-head,
// d_model=2 model, written with plain loops and doubles.
TEST_CASE("hand-computed forward pass on a rigged tiny model") {
  ModelConfig cfg;
  cfg.n_layers = 1;
  cfg.d_model = 2;
  cfg.n_heads = 1;
  cfg.d_ff = 2;
  cfg.vocab_size = kMinVocabSize;
  cfg.max_seq_len = 8;
  ModelParams p = ModelParams::init(cfg, 0);

  // hand-set weights
  p.embedding.setZero();
  p.embedding.row(10) << 0.3, -0.1;
  p.embedding.row(11) << -0.2, 0.4;
  p.positional.setZero();
  p.positional.row(0) << 0.05, 0.0;
  p.positional.row(1) << 0.0, -0.05;
  LayerParams& l = p.layers[0];
  l.ln1_g << 1.0, 0.9;
  l.ln1_b << 0.1, -0.1;
  l.wq << 0.2, -0.3, 0.4, 0.1;
  l.wk << -0.1, 0.2, 0.3, -0.4;
  l.wv << 0.5, 0.1, -0.2, 0.3;
  l.wo << 0.3, 0.0, -0.1, 0.2;
  l.ln2_g << 1.1, 1.0;
  l.ln2_b << 0.0, 0.05;
  l.w_ff_in << 0.4, -0.2, 0.1, 0.3;
  l.b_ff_in << 0.02, -0.02;
  l.w_ff_out << 0.2, 0.1, -0.3, 0.4;
  l.b_ff_out << 0.01, 0.0;
  p.ln_f_g << 1.0, 1.0;
  p.ln_f_b << 0.0, 0.0;
  p.w_out.setZero();
  p.w_out.row(5) << 0.7, -0.6;
  p.w_out.row(6) << -0.5, 0.8;

  const std::vector<int> tokens = {10, 11};
  Mat got = forward_logits(p, tokens);

  // scalar recomputation
  auto ln = [](double x0, double x1, double g0, double g1, double b0, double b1, double eps,
               double* y0, double* y1) {
    double mean = 0.5 * (x0 + x1);
    double var = 0.5 * ((x0 - mean) * (x0 - mean) + (x1 - mean) * (x1 - mean));
    double inv = 1.0 / std::sqrt(var + eps);
    *y0 = (x0 - mean) * inv * g0 + b0;
    *y1 = (x1 - mean) * inv * g1 + b1;
  };
  auto gelu_scalar = [](double x) {
    double u = std::sqrt(2.0 / M_PI) * (x + 0.044715 * x * x * x);
    return 0.5 * x * (1.0 + std::tanh(u));
  };

  double x[2][2] = {{0.3 + 0.05, -0.1 + 0.0}, {-0.2 + 0.0, 0.4 - 0.05}};
  double h[2][2], q[2][2], k[2][2], v[2][2];
  for (int i = 0; i < 2; ++i) ln(x[i][0], x[i][1], 1.0, 0.9, 0.1, -0.1, 1e-5, &h[i][0], &h[i][1]);
  for (int i = 0; i < 2; ++i) {
    q[i][0] = h[i][0] * 0.2 + h[i][1] * (-0.3);
    q[i][1] = h[i][0] * 0.4 + h[i][1] * 0.1;
    k[i][0] = h[i][0] * (-0.1) + h[i][1] * 0.2;
    k[i][1] = h[i][0] * 0.3 + h[i][1] * (-0.4);
    v[i][0] = h[i][0] * 0.5 + h[i][1] * 0.1;
    v[i][1] = h[i][0] * (-0.2) + h[i][1] * 0.3;
  }
  double inv_sqrt = 1.0 / std::sqrt(2.0);
  double s10 = (q[1][0] * k[0][0] + q[1][1] * k[0][1]) * inv_sqrt;
  double s11 = (q[1][0] * k[1][0] + q[1][1] * k[1][1]) * inv_sqrt;
  double mx = std::max(s10, s11);
  double e0 = std::exp(s10 - mx), e1 = std::exp(s11 - mx);
  double p0 = e0 / (e0 + e1), p1 = e1 / (e0 + e1);
  double ctx[2][2];
  ctx[0][0] = v[0][0];
  ctx[0][1] = v[0][1];  // row 0 attends only to itself
  ctx[1][0] = p0 * v[0][0] + p1 * v[1][0];
  ctx[1][1] = p0 * v[0][1] + p1 * v[1][1];
  for (int i = 0; i < 2; ++i) {
    double a0 = ctx[i][0] * 0.3 + ctx[i][1] * 0.0;
    double a1 = ctx[i][0] * (-0.1) + ctx[i][1] * 0.2;
    x[i][0] += a0;
    x[i][1] += a1;
  }
  for (int i = 0; i < 2; ++i) {
    double h0, h1;
    ln(x[i][0], x[i][1], 1.1, 1.0, 0.0, 0.05, 1e-5, &h0, &h1);
    double f0 = gelu_scalar(h0 * 0.4 + h1 * (-0.2) + 0.02);
    double f1 = gelu_scalar(h0 * 0.1 + h1 * 0.3 - 0.02);
    x[i][0] += f0 * 0.2 + f1 * 0.1 + 0.01;  // + b_ff_out
    x[i][1] += f0 * (-0.3) + f1 * 0.4 + 0.0;
  }
  for (int i = 0; i < 2; ++i) {
    double h0, h1;
    ln(x[i][0], x[i][1], 1.0, 1.0, 0.0, 0.0, 1e-5, &h0, &h1);
    double logit5 = h0 * 0.7 + h1 * (-0.6);
    double logit6 = h0 * (-0.5) + h1 * 0.8;
    CHECK(got(i, 5) == doctest::Approx(logit5).epsilon(1e-9));
    CHECK(got(i, 6) == doctest::Approx(logit6).epsilon(1e-9));
    CHECK(got(i, 7) == doctest::Approx(0.0).epsilon(1e-9));
  }
}

TEST_CASE("model gradients match finite differences across seeds") {
  ModelConfig cfg = tiny_config();
  for (uint64_t seed = 1; seed <= 10; ++seed) {
    ModelParams params = ModelParams::init(cfg, seed);
    std::vector<int> tokens = tokenize("grad");
    std::vector<int> targets(tokens.begin() + 1, tokens.end());
    std::vector<int> inputs(tokens.begin(), tokens.end() - 1);
    std::vector<double> weights(targets.size(), 1.0);

    auto names = params.named_tensors();
    std::vector<Mat> values;
    for (auto& [name, mat] : names) values.push_back(*mat);

    auto install = [&](const std::vector<Mat>& vals) {
      ModelParams p = params;
      auto slots = p.named_tensors();
      for (size_t i = 0; i < slots.size(); ++i) *slots[i].second = vals[i];
      return p;
    };
    auto loss_fn = [&](const std::vector<Mat>& vals) {
      ModelParams p = install(vals);
      Tape tape;
      ModelVars vars = bind_model(tape, p, false);
      Var loss = cross_entropy(forward_tokens(tape, vars, inputs), targets, weights);
      return tape.value(loss)(0, 0);
    };
    auto grad_fn = [&](const std::vector<Mat>& vals) {
      ModelParams p = install(vals);
      Tape tape;
      ModelVars vars = bind_model(tape, p, true);
      Var loss = cross_entropy(forward_tokens(tape, vars, inputs), targets, weights);
      tape.backward(loss);
      std::vector<Mat> grads;
      for (int i = 0; i < static_cast<int>(vals.size()); ++i) {
        Var leaf{&tape, i};
        grads.push_back(tape.has_grad(leaf) ? tape.grad(leaf)
                                            : Mat::Zero(vals[i].rows(), vals[i].cols()));
      }
      return grads;
    };
    Rng rng(seed * 31 + 1);
    auto report = fd_check(values, loss_fn, grad_fn, rng, 2);
    CHECK(report.max_rel_error < 1e-4);
  }
}

TEST_CASE("greedy decode trivial stops") {
  ModelParams params = ModelParams::init(tiny_config(), 3);
  std::vector<int> prompt = {kBosToken, 104, 105};

  DecodeParams dp;
  dp.max_new_tokens = 0;
  CHECK(greedy_decode(params, prompt, dp) == "");

  // rig the output head so EOS always wins
  ModelParams rigged = params;
  rigged.ln_f_b(0, 0) = 10.0;
  rigged.w_out.setZero();
  rigged.w_out(kEosToken, 0) = 100.0;
  dp.max_new_tokens = 8;
  CHECK(greedy_decode(rigged, prompt, dp) == "");
}

TEST_CASE("greedy decode respects stop sequences and length budget") {
  ModelParams params = ModelParams::init(tiny_config(), 3);
  std::vector<int> prompt = {kBosToken, 104};
  DecodeParams dp;
  dp.max_new_tokens = 100;  // prompt 2 + 100 > max_seq_len 32
  CHECK_THROWS_AS(greedy_decode(params, prompt, dp), Error);

  dp.max_new_tokens = 8;
  std::string full = greedy_decode(params, prompt, dp);
  if (full.size() >= 2) {
    DecodeParams stopped = dp;
    stopped.stop = {full.substr(1, 1)};
    std::string cut = greedy_decode(params, prompt, stopped);
    CHECK(cut == full.substr(0, 1));
  }
}

TEST_CASE("memorization: an overfit model reproduces its training targets") {
  ModelConfig cfg = tiny_config();
  cfg.d_model = 16;
  cfg.d_ff = 32;
  ModelParams params = ModelParams::init(cfg, 5);

  const std::vector<std::pair<std::string, std::string>> examples = {
      {"a:", "x"}, {"b:", "y"}, {"c:", "z"}};

  auto make_row = [](const std::string& prompt, const std::string& target) {
    std::vector<int> tokens = {kBosToken};
    for (int t : tokenize_bytes(prompt)) tokens.push_back(t);
    size_t target_from = tokens.size();
    for (int t : tokenize_bytes(target)) tokens.push_back(t);
    tokens.push_back(kEosToken);
    return std::make_pair(tokens, target_from);
  };

  auto slots = params.named_tensors();
  std::vector<Mat*> mats;
  std::vector<const Mat*> cmat;
  for (auto& [name, m] : slots) {
    mats.push_back(m);
    cmat.push_back(m);
  }
  AdamConfig acfg;
  acfg.lr = 5e-3;
  AdamState opt(cmat, acfg);

  double loss_value = 1.0;
  for (int step = 0; step < 400 && loss_value >= 0.01; ++step) {
    Tape tape;
    ModelVars vars = bind_model(tape, params, true);
    std::vector<Var> losses;
    for (const auto& [prompt, target] : examples) {
      auto [tokens, target_from] = make_row(prompt, target);
      std::vector<int> inputs(tokens.begin(), tokens.end() - 1);
      std::vector<int> targets(tokens.begin() + 1, tokens.end());
      std::vector<double> weights(targets.size(), 0.0);
      for (size_t i = target_from - 1; i < targets.size(); ++i) weights[i] = 1.0;
      losses.push_back(cross_entropy(forward_tokens(tape, vars, inputs), targets, weights));
    }
    Var loss = scale(add_n(losses), 1.0 / static_cast<double>(losses.size()));
    tape.backward(loss);
    loss_value = tape.value(loss)(0, 0);
    std::vector<const Mat*> grads;
    std::vector<Mat> grad_storage;
    grad_storage.reserve(mats.size());
    for (size_t i = 0; i < mats.size(); ++i) {
      Var leaf{&tape, static_cast<int>(i)};
      grad_storage.push_back(tape.has_grad(leaf)
                                 ? tape.grad(leaf)
                                 : Mat::Zero(mats[i]->rows(), mats[i]->cols()));
    }
    for (const Mat& g : grad_storage) grads.push_back(&g);
    opt.step(mats, grads);
  }
  REQUIRE(loss_value < 0.01);

  DecodeParams dp;
  dp.max_new_tokens = 4;
  for (const auto& [prompt, target] : examples) {
    std::vector<int> ptokens = {kBosToken};
    for (int t : tokenize_bytes(prompt)) ptokens.push_back(t);
    CHECK(greedy_decode(params, ptokens, dp) == target);
  }
}

TEST_CASE("sequence_logprob basics and per-step oracle") {
  ModelParams params = ModelParams::init(tiny_config(), 21);
  std::vector<int> prompt = {kBosToken, 113, 114};

  CHECK(sequence_logprob(params, prompt, {}) == 0.0);

  std::vector<int> continuation = tokenize_bytes("yes");
  double lp = sequence_logprob(params, prompt, continuation);
  CHECK(lp <= 0.0);
  CHECK(std::exp(lp) > 0.0);
  CHECK(std::exp(lp) <= 1.0);

  // per-step recomputation: product of stepwise softmax probabilities
  double product = 1.0;
  std::vector<int> ctx = prompt;
  for (int tok : continuation) {
    Mat logits = forward_logits(params, ctx);
    Mat probs = softmax_rows(logits.row(logits.rows() - 1));
    product *= probs(0, tok);
    ctx.push_back(tok);
  }
  CHECK(std::exp(lp) == doctest::Approx(product).epsilon(1e-10));

  std::vector<int> too_long(40, 65);
  CHECK_THROWS_AS(sequence_logprob(params, prompt, too_long), Error);
}

TEST_CASE("single-token label scores agree with greedy argmax") {
  ModelParams params = ModelParams::init(tiny_config(), 33);
  std::vector<int> prompt = {kBosToken, 113};
  Mat logits = forward_logits(params, prompt);
  Mat last = logits.row(logits.rows() - 1);
  int best = 0;
  for (Eigen::Index j = 1; j < 256; ++j)
    if (last(0, j) > last(0, best)) best = static_cast<int>(j);
  double best_score = sequence_logprob(params, prompt, {best});
  for (int other : {65, 66, 97, 98, 120}) {
    CHECK(best_score >= sequence_logprob(params, prompt, {other}));
  }
}

TEST_CASE("checkpoint save/load round trip is bit-exact") {
  ModelParams params = ModelParams::init(tiny_config(), 77);
  params.kind = CheckpointKind::InstructionPretrained;
  auto path = std::filesystem::temp_directory_path() / "fiat_test_ckpt.bin";
  save_checkpoint(path, params);
  ModelParams loaded = load_checkpoint(path);
  CHECK(loaded.kind == CheckpointKind::InstructionPretrained);
  CHECK(loaded.seed == 77);
  CHECK(loaded.config == params.config);
  auto a = params.named_tensors();
  auto b = loaded.named_tensors();
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].first == b[i].first);
    CHECK(*a[i].second == *b[i].second);
  }
  // identical bytes on re-save
  auto path2 = std::filesystem::temp_directory_path() / "fiat_test_ckpt2.bin";
  save_checkpoint(path2, loaded);
  CHECK(sha256_file(path) == sha256_file(path2));
  std::filesystem::remove(path);
  std::filesystem::remove(path2);
}
