#pragma once

#include <functional>

#include "fiat/adam.hpp"
#include "fiat/lora.hpp"

namespace fiat {

struct TrainingConfig {
  int steps = 500;
  int batch_size = 8;
  double lr = 1e-3;
  int eval_every = 25;
  int patience = 5;    // evals without improvement before stopping
  int dev_subset = 0;  // cap on validation examples per training-time eval; 0 = all
};

void to_json(nlohmann::json& j, const TrainingConfig& c);
void from_json(const nlohmann::json& j, TrainingConfig& c);

/// One training row: full token sequence (BOS .. EOS) and the index of the
/// first target token. The loss covers target tokens only.
struct TrainRow {
  std::vector<int> tokens;
  size_t target_from = 0;
};

/// prompt + " " + target + EOS, tokenized. Raises SequenceTooLong when the
/// row cannot fit max_seq_len.
TrainRow make_train_row(const std::string& prompt, const std::string& target, int max_seq_len);

using DevEval = std::function<double(const ModelParams&, const AdapterSet*)>;

struct TrainOutcome {
  std::vector<std::pair<int, double>> curve;  // (step, dev metric), step 0 included
  int best_step = 0;
  double best_metric = 0.0;
  int steps_run = 0;
};

/// Trains `adapters` when given (base parameters stay untouched), otherwise
/// all of `params`. Evaluates at step 0 and every eval_every steps, keeps the
/// best-dev snapshot, stops early after `patience` evals without improvement,
/// and restores the best snapshot before returning. NaN/Inf in the loss or
/// parameters aborts with DivergedTraining.
TrainOutcome train_model(ModelParams& params, AdapterSet* adapters,
                         const std::vector<TrainRow>& rows, const TrainingConfig& config,
                         uint64_t seed, const DevEval& dev_eval);

/// Next-byte LM pretraining over plain texts (no loss masking, no dev set).
void pretrain_lm(ModelParams& params, const std::vector<std::string>& texts, int steps,
                 int batch_size, double lr, uint64_t seed);

/// Instruction-formatted pretraining: loss on targets only.
void pretrain_instruction(ModelParams& params, const std::vector<TrainRow>& rows, int steps,
                          int batch_size, double lr, uint64_t seed);

}  // namespace fiat
