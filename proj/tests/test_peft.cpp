#include <doctest.h>

#include <filesystem>

#include "fd_check.hpp"
#include "fiat/adam.hpp"
#include "fiat/checkpoint.hpp"
#include "fiat/lora.hpp"

using namespace fiat;
using fiat::testing::fd_check;
using fiat::testing::random_mat;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.n_layers = 2;
  c.d_model = 8;
  c.n_heads = 2;
  c.d_ff = 16;
  c.max_seq_len = 32;
  return c;
}

std::vector<int> probe_tokens(uint64_t seed) {
  Rng rng(seed);
  std::vector<int> tokens = {kBosToken};
  for (int i = 0; i < 6; ++i) tokens.push_back(static_cast<int>(rng.below(256)));
  return tokens;
}

}  // namespace

TEST_CASE("zero-init adapters reproduce the base model bit for bit") {
  for (uint64_t seed = 1; seed <= 10; ++seed) {
    ModelParams params = ModelParams::init(tiny_config(), seed);
    AdapterSet adapters = init_adapters(params, AdapterConfig{}, seed + 100);
    std::vector<int> tokens = probe_tokens(seed);
    CHECK(forward_logits(params, tokens) == adapted_forward(params, adapters, tokens));
  }
}

TEST_CASE("trainable fraction below five percent at defaults") {
  ModelConfig cfg;  // the full-size default configuration
  ModelParams params = ModelParams::init(cfg, 1);
  AdapterConfig acfg;  // r=4, alpha=8, targets {Q, V}
  AdapterSet adapters = init_adapters(params, acfg, 2);

  // direct-count oracle
  size_t expected = 0;
  for (int layer = 0; layer < cfg.n_layers; ++layer)
    for (Target t : acfg.targets) {
      const Mat& w = params.target_matrix(layer, t);
      expected += static_cast<size_t>(acfg.rank) * w.cols() + w.rows() * acfg.rank;
    }
  CHECK(adapters.parameter_count() == expected);
  CHECK(trainable_fraction(params, adapters) < 0.05);
}

TEST_CASE("rank bound is enforced") {
  ModelParams params = ModelParams::init(tiny_config(), 1);
  AdapterConfig acfg;
  acfg.rank = tiny_config().d_model;  // r >= d_model
  CHECK_THROWS_AS(init_adapters(params, acfg, 1), Error);
  try {
    init_adapters(params, acfg, 1);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::RankTooLarge);
  }
}

TEST_CASE("factorization invariance: (cA, B/c) leaves the output unchanged") {
  for (uint64_t seed = 1; seed <= 10; ++seed) {
    ModelParams params = ModelParams::init(tiny_config(), seed);
    AdapterSet adapters = init_adapters(params, AdapterConfig{}, seed);
    Rng rng(seed * 7);
    for (auto& layer : adapters.layers)
      for (auto& [t, pair] : layer) pair.b = random_mat(rng, pair.b.rows(), pair.b.cols(), 0.1);

    std::vector<int> tokens = probe_tokens(seed);
    Mat base = adapted_forward(params, adapters, tokens);

    const double c = 3.7;
    AdapterSet scaled = adapters;
    for (auto& layer : scaled.layers)
      for (auto& [t, pair] : layer) {
        pair.a *= c;
        pair.b /= c;
      }
    Mat rescaled = adapted_forward(params, scaled, tokens);
    CHECK((base - rescaled).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("adapted forward equals dense materialization") {
  for (uint64_t seed = 1; seed <= 10; ++seed) {
    ModelParams params = ModelParams::init(tiny_config(), seed);
    AdapterConfig acfg;
    acfg.targets = {Target::Q, Target::V, Target::FfIn};
    AdapterSet adapters = init_adapters(params, acfg, seed);
    Rng rng(seed * 13);
    for (auto& layer : adapters.layers)
      for (auto& [t, pair] : layer) {
        pair.a = random_mat(rng, pair.a.rows(), pair.a.cols(), 0.2);
        pair.b = random_mat(rng, pair.b.rows(), pair.b.cols(), 0.2);
      }

    // dense W' = W + (alpha/r) B A, materialized by hand
    ModelParams dense = params;
    for (size_t i = 0; i < adapters.layers.size(); ++i)
      for (auto& [t, pair] : adapters.layers[i])
        dense.target_matrix(static_cast<int>(i), t) += adapters.scaling() * (pair.b * pair.a);

    std::vector<int> tokens = probe_tokens(seed + 3);
    Mat a = adapted_forward(params, adapters, tokens);
    Mat b = forward_logits(dense, tokens);
    CHECK((a - b).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("merge matches adapted forward and guards double merges") {
  ModelParams params = ModelParams::init(tiny_config(), 4);
  AdapterSet adapters = init_adapters(params, AdapterConfig{}, 5);
  Rng rng(6);
  for (auto& layer : adapters.layers)
    for (auto& [t, pair] : layer) pair.b = random_mat(rng, pair.b.rows(), pair.b.cols(), 0.1);

  AdapterSet for_merge = adapters;
  ModelParams merged = merge(params, for_merge);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<int> tokens = probe_tokens(1000 + trial);
    Mat via_adapters = adapted_forward(params, adapters, tokens);
    Mat via_merge = forward_logits(merged, tokens);
    CHECK((via_adapters - via_merge).cwiseAbs().maxCoeff() < 1e-6);
  }
  CHECK_THROWS_AS(merge(params, for_merge), Error);

  // B = 0 means merge is the identity on parameters
  AdapterSet zero = init_adapters(params, AdapterConfig{}, 9);
  ModelParams same = merge(params, zero);
  auto a = params.named_tensors();
  auto b = same.named_tensors();
  for (size_t i = 0; i < a.size(); ++i) CHECK(*a[i].second == *b[i].second);
}

TEST_CASE("adapter gradients match finite differences") {
  ModelConfig cfg = tiny_config();
  for (uint64_t seed = 1; seed <= 10; ++seed) {
    ModelParams params = ModelParams::init(cfg, seed);
    AdapterConfig acfg;
    acfg.targets = {Target::Q, Target::V, Target::O, Target::FfOut};
    AdapterSet adapters = init_adapters(params, acfg, seed + 50);
    Rng init_rng(seed);
    for (auto& layer : adapters.layers)
      for (auto& [t, pair] : layer) pair.b = random_mat(init_rng, pair.b.rows(), pair.b.cols(), 0.1);

    std::vector<int> tokens = tokenize("lo");
    std::vector<int> inputs(tokens.begin(), tokens.end() - 1);
    std::vector<int> targets(tokens.begin() + 1, tokens.end());
    std::vector<double> weights(targets.size(), 1.0);

    auto slot_list = adapters.named_tensors();
    std::vector<Mat> values;
    for (auto& [name, m] : slot_list) values.push_back(*m);

    auto install = [&](const std::vector<Mat>& vals) {
      AdapterSet s = adapters;
      auto slots = s.named_tensors();
      for (size_t i = 0; i < slots.size(); ++i) *slots[i].second = vals[i];
      return s;
    };
    auto loss_of = [&](const AdapterSet& s, bool trainable, std::vector<Mat>* grads) {
      Tape tape;
      ModelVars vars = bind_model(tape, params, false);
      size_t first_adapter_leaf = tape.size();
      bind_adapters(vars, tape, s, trainable);
      Var loss = cross_entropy(forward_tokens(tape, vars, inputs), targets, weights);
      double value = tape.value(loss)(0, 0);
      if (grads != nullptr) {
        tape.backward(loss);
        for (size_t i = 0; i < values.size(); ++i) {
          Var leaf{&tape, static_cast<int>(first_adapter_leaf + i)};
          grads->push_back(tape.has_grad(leaf)
                               ? tape.grad(leaf)
                               : Mat::Zero(values[i].rows(), values[i].cols()));
        }
      }
      return value;
    };
    auto loss_fn = [&](const std::vector<Mat>& vals) { return loss_of(install(vals), false, nullptr); };
    auto grad_fn = [&](const std::vector<Mat>& vals) {
      std::vector<Mat> grads;
      loss_of(install(vals), true, &grads);
      return grads;
    };
    Rng rng(seed * 17 + 3);
    auto report = fd_check(values, loss_fn, grad_fn, rng, 2);
    CHECK(report.max_rel_error < 1e-4);
  }
}

TEST_CASE("PEFT training leaves base parameters bit-identical") {
  ModelParams params = ModelParams::init(tiny_config(), 8);
  ModelParams snapshot = params;
  AdapterSet adapters = init_adapters(params, AdapterConfig{}, 9);

  std::vector<int> tokens = tokenize("peft!");
  std::vector<int> inputs(tokens.begin(), tokens.end() - 1);
  std::vector<int> targets(tokens.begin() + 1, tokens.end());
  std::vector<double> weights(targets.size(), 1.0);

  auto slots = adapters.named_tensors();
  std::vector<Mat*> mats;
  std::vector<const Mat*> cmats;
  for (auto& [name, m] : slots) {
    mats.push_back(m);
    cmats.push_back(m);
  }
  AdamState opt(cmats);
  for (int step = 0; step < 20; ++step) {
    Tape tape;
    ModelVars vars = bind_model(tape, params, false);
    size_t first = tape.size();
    bind_adapters(vars, tape, adapters, true);
    Var loss = cross_entropy(forward_tokens(tape, vars, inputs), targets, weights);
    tape.backward(loss);
    std::vector<Mat> grad_storage;
    std::vector<const Mat*> grads;
    for (size_t i = 0; i < mats.size(); ++i) {
      Var leaf{&tape, static_cast<int>(first + i)};
      grad_storage.push_back(tape.has_grad(leaf)
                                 ? tape.grad(leaf)
                                 : Mat::Zero(mats[i]->rows(), mats[i]->cols()));
    }
    for (const Mat& g : grad_storage) grads.push_back(&g);
    opt.step(mats, grads);
  }

  auto before = snapshot.named_tensors();
  auto after = params.named_tensors();
  for (size_t i = 0; i < before.size(); ++i) CHECK(*before[i].second == *after[i].second);

  // the adapters themselves did move
  bool any_b_nonzero = false;
  for (auto& layer : adapters.layers)
    for (auto& [t, pair] : layer) any_b_nonzero = any_b_nonzero || pair.b.cwiseAbs().maxCoeff() > 0;
  CHECK(any_b_nonzero);
}

TEST_CASE("adapter file round trip") {
  ModelParams params = ModelParams::init(tiny_config(), 12);
  AdapterSet adapters = init_adapters(params, AdapterConfig{}, 13);
  adapters.base_checkpoint_sha256 = "deadbeef";
  Rng rng(14);
  for (auto& layer : adapters.layers)
    for (auto& [t, pair] : layer) pair.b = random_mat(rng, pair.b.rows(), pair.b.cols(), 0.1);

  auto path = std::filesystem::temp_directory_path() / "fiat_test_adapters.bin";
  save_adapters(path, adapters);
  AdapterSet loaded = load_adapters(path);
  CHECK(loaded.config == adapters.config);
  CHECK(loaded.seed == adapters.seed);
  CHECK(loaded.base_checkpoint_sha256 == "deadbeef");
  auto a = adapters.named_tensors();
  auto b = loaded.named_tensors();
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].first == b[i].first);
    CHECK(*a[i].second == *b[i].second);
  }
  std::filesystem::remove(path);
}
