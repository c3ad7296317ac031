#include "fiat/trainer.hpp"

#include <cmath>

#include "fiat/rng.hpp"

namespace fiat {

void to_json(nlohmann::json& j, const TrainingConfig& c) {
  j = {{"steps", c.steps},
       {"batch_size", c.batch_size},
       {"lr", c.lr},
       {"eval_every", c.eval_every},
       {"patience", c.patience},
       {"dev_subset", c.dev_subset}};
}

void from_json(const nlohmann::json& j, TrainingConfig& c) {
  if (j.contains("steps")) j.at("steps").get_to(c.steps);
  if (j.contains("batch_size")) j.at("batch_size").get_to(c.batch_size);
  if (j.contains("lr")) j.at("lr").get_to(c.lr);
  if (j.contains("eval_every")) j.at("eval_every").get_to(c.eval_every);
  if (j.contains("patience")) j.at("patience").get_to(c.patience);
  if (j.contains("dev_subset")) j.at("dev_subset").get_to(c.dev_subset);
}

TrainRow make_train_row(const std::string& prompt, const std::string& target, int max_seq_len) {
  TrainRow row;
  row.tokens.push_back(kBosToken);
  for (int t : tokenize_bytes(prompt)) row.tokens.push_back(t);
  row.target_from = row.tokens.size();
  for (int t : tokenize_bytes(" " + target)) row.tokens.push_back(t);
  row.tokens.push_back(kEosToken);
  require(static_cast<int>(row.tokens.size()) <= max_seq_len, ErrorKind::SequenceTooLong,
          "training row of " + std::to_string(row.tokens.size()) + " tokens exceeds max_seq_len " +
              std::to_string(max_seq_len));
  return row;
}

namespace {

// Deterministic epoch-shuffled index stream.
class BatchStream {
 public:
  BatchStream(size_t n, uint64_t seed) : rng_(seed), order_(n) {
    for (size_t i = 0; i < n; ++i) order_[i] = i;
    rng_.shuffle(order_);
  }

  size_t next() {
    if (cursor_ >= order_.size()) {
      rng_.shuffle(order_);
      cursor_ = 0;
    }
    return order_[cursor_++];
  }

 private:
  Rng rng_;
  std::vector<size_t> order_;
  size_t cursor_ = 0;
};

struct TrainableSlots {
  std::vector<Mat*> mats;
  std::vector<const Mat*> cmats;
};

TrainableSlots collect_slots(ModelParams& params, AdapterSet* adapters) {
  TrainableSlots slots;
  if (adapters != nullptr) {
    for (auto& [name, m] : adapters->named_tensors()) {
      slots.mats.push_back(m);
      slots.cmats.push_back(m);
    }
  } else {
    for (auto& [name, m] : params.named_tensors()) {
      slots.mats.push_back(m);
      slots.cmats.push_back(m);
    }
  }
  return slots;
}

// One optimizer step over a batch of rows; returns the batch loss.
double sgd_step(ModelParams& params, AdapterSet* adapters, const TrainableSlots& slots,
                AdamState& opt, const std::vector<const TrainRow*>& batch) {
  Tape tape;
  ModelVars vars = bind_model(tape, params, adapters == nullptr);
  size_t first_leaf = 0;
  if (adapters != nullptr) {
    first_leaf = tape.size();
    bind_adapters(vars, tape, *adapters, true);
  }

  std::vector<Var> losses;
  losses.reserve(batch.size());
  for (const TrainRow* row : batch) {
    std::vector<int> inputs(row->tokens.begin(), row->tokens.end() - 1);
    Var hidden = forward_hidden(tape, vars, inputs);
    // only target positions go through the output projection
    std::vector<int> positions;
    std::vector<int> targets;
    for (size_t i = row->target_from - 1; i + 1 < row->tokens.size(); ++i) {
      positions.push_back(static_cast<int>(i));
      targets.push_back(row->tokens[i + 1]);
    }
    Var logits = matmul_nt(gather_rows(hidden, positions), vars.w_out);
    losses.push_back(
        cross_entropy(logits, targets, std::vector<double>(targets.size(), 1.0)));
  }
  Var loss = scale(add_n(losses), 1.0 / static_cast<double>(losses.size()));
  double loss_value = tape.value(loss)(0, 0);
  require(std::isfinite(loss_value), ErrorKind::DivergedTraining,
          "training loss is not finite at optimizer step " + std::to_string(opt.steps_taken()));
  tape.backward(loss);

  std::vector<Mat> grad_storage;
  grad_storage.reserve(slots.mats.size());
  for (size_t i = 0; i < slots.mats.size(); ++i) {
    Var leaf{&tape, static_cast<int>(first_leaf + i)};
    grad_storage.push_back(tape.has_grad(leaf)
                               ? tape.grad(leaf)
                               : Mat::Zero(slots.mats[i]->rows(), slots.mats[i]->cols()));
  }
  std::vector<const Mat*> grads;
  grads.reserve(grad_storage.size());
  for (const Mat& g : grad_storage) grads.push_back(&g);
  opt.step(slots.mats, grads);

  for (const Mat* m : slots.mats)
    require(m->allFinite(), ErrorKind::DivergedTraining,
            "parameters became non-finite at optimizer step " +
                std::to_string(opt.steps_taken()));
  return loss_value;
}

}  // namespace

TrainOutcome train_model(ModelParams& params, AdapterSet* adapters,
                         const std::vector<TrainRow>& rows, const TrainingConfig& config,
                         uint64_t seed, const DevEval& dev_eval) {
  require(!rows.empty(), ErrorKind::ConfigError, "train_model: no training rows");
  require(config.batch_size >= 1 && config.steps >= 0 && config.eval_every >= 1,
          ErrorKind::ConfigError, "train_model: bad training configuration");

  TrainableSlots slots = collect_slots(params, adapters);
  AdamConfig adam_cfg;
  adam_cfg.lr = config.lr;
  AdamState opt(slots.cmats, adam_cfg);
  BatchStream stream(rows.size(), seed);

  TrainOutcome outcome;
  std::vector<Mat> best_snapshot;
  int evals_since_best = 0;

  auto snapshot = [&] {
    best_snapshot.clear();
    for (const Mat* m : slots.mats) best_snapshot.push_back(*m);
  };
  auto evaluate = [&](int step) {
    double metric = dev_eval != nullptr ? dev_eval(params, adapters) : 0.0;
    outcome.curve.emplace_back(step, metric);
    if (outcome.curve.size() == 1 || metric > outcome.best_metric) {
      outcome.best_metric = metric;
      outcome.best_step = step;
      evals_since_best = 0;
      snapshot();
    } else {
      ++evals_since_best;
    }
    return metric;
  };

  evaluate(0);
  for (int step = 1; step <= config.steps; ++step) {
    std::vector<const TrainRow*> batch;
    batch.reserve(config.batch_size);
    for (int b = 0; b < config.batch_size; ++b) batch.push_back(&rows[stream.next()]);
    sgd_step(params, adapters, slots, opt, batch);
    outcome.steps_run = step;
    if (step % config.eval_every == 0 || step == config.steps) {
      evaluate(step);
      if (evals_since_best >= config.patience) break;
    }
  }

  // restore the best-dev snapshot
  if (!best_snapshot.empty())
    for (size_t i = 0; i < slots.mats.size(); ++i) *slots.mats[i] = best_snapshot[i];
  return outcome;
}

namespace {

void pretrain_rows(ModelParams& params, const std::vector<TrainRow>& rows, int steps,
                   int batch_size, double lr, uint64_t seed) {
  require(!rows.empty(), ErrorKind::ConfigError, "pretraining needs a corpus");
  TrainableSlots slots = collect_slots(params, nullptr);
  AdamConfig adam_cfg;
  adam_cfg.lr = lr;
  AdamState opt(slots.cmats, adam_cfg);
  BatchStream stream(rows.size(), seed);
  for (int step = 1; step <= steps; ++step) {
    std::vector<const TrainRow*> batch;
    batch.reserve(batch_size);
    for (int b = 0; b < batch_size; ++b) batch.push_back(&rows[stream.next()]);
    sgd_step(params, nullptr, slots, opt, batch);
  }
}

}  // namespace

void pretrain_lm(ModelParams& params, const std::vector<std::string>& texts, int steps,
                 int batch_size, double lr, uint64_t seed) {
  std::vector<TrainRow> rows;
  rows.reserve(texts.size());
  for (const std::string& text : texts) {
    TrainRow row;
    row.tokens = tokenize(text);  // BOS .. EOS
    if (static_cast<int>(row.tokens.size()) > params.config.max_seq_len)
      row.tokens.resize(params.config.max_seq_len);
    row.target_from = 1;  // every position is a prediction target
    rows.push_back(std::move(row));
  }
  pretrain_rows(params, rows, steps, batch_size, lr, seed);
}

void pretrain_instruction(ModelParams& params, const std::vector<TrainRow>& rows, int steps,
                          int batch_size, double lr, uint64_t seed) {
  pretrain_rows(params, rows, steps, batch_size, lr, seed);
}

}  // namespace fiat
