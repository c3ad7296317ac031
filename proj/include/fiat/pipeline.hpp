#pragma once

#include "fiat/checkpoint.hpp"
#include "fiat/metrics.hpp"
#include "fiat/oracle.hpp"
#include "fiat/synthdata.hpp"
#include "fiat/trainer.hpp"

namespace fiat {

struct VariantFlags {
  bool use_cot = true;
  bool use_instructions = true;
  bool use_peft = true;
  CheckpointKind base_checkpoint = CheckpointKind::InstructionPretrained;
  bool operator==(const VariantFlags&) const = default;
};

void to_json(nlohmann::json& j, const VariantFlags& v);
void from_json(const nlohmann::json& j, VariantFlags& v);

struct PretrainConfig {
  int steps = 500;
  int batch_size = 16;
  double lr = 2e-3;
  int corpus_size = 1200;
};

void to_json(nlohmann::json& j, const PretrainConfig& c);
void from_json(const nlohmann::json& j, PretrainConfig& c);

struct DataConfig {
  std::string kind = "synthetic-leak";  // "synthetic-leak" | "files"
  TaskKind task = TaskKind::Classification;
  // files
  std::string train_path, validation_path, test_path;
  // synthetic-leak
  int n_train = 200;
  int n_validation = 200;
  int n_test = 200;
  double leak_strength = 1.0;
  std::vector<std::string> macro_languages;  // optional macro-average subset
};

void to_json(nlohmann::json& j, const DataConfig& c);
void from_json(const nlohmann::json& j, DataConfig& c);

struct RunConfig {
  std::string run_id = "run";
  std::string method = "fiat";  // "fiat" | "distilled-cot"
  uint64_t seed = 17;
  std::string run_dir = "runs/run";
  std::string cache_dir = ".fiat-cache";
  VariantFlags variant;
  ModelConfig model;
  AdapterConfig adapter;
  TrainingConfig training;
  PretrainConfig pretrain;
  BackendConfig backend;
  std::string checkpoint_raw, checkpoint_instruction;  // auto-pretrained when empty/missing
  std::string instructions_reasoning, instructions_tuning, instructions_icl;  // file paths
  DataConfig data;

  bool is_fiat_proper() const;
  void validate() const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

RunConfig load_run_config(const std::filesystem::path& path);
/// "a.b.c=value" overrides applied to the JSON form before parsing.
nlohmann::json apply_override(nlohmann::json config, const std::string& dotted_assignment);

/// FIAT proper requires CoT, instructions, PEFT, and the
/// instruction-pretrained base all at once.
std::string variant_label(const VariantFlags& flags);
RunConfig traditional_finetune_config(const RunConfig& base);

// Built-in instruction sets; the committed files under data/instructions are
// generated from these.
InstructionSet default_tuning_instructions(TaskKind kind);
InstructionSet default_reasoning_instructions(TaskKind kind);
InstructionSet default_icl_instructions(TaskKind kind);
InstructionSet make_multilingual_icl_set(const std::vector<std::string>& languages,
                                         int per_language);

// Decode conventions.
DecodeParams rationale_decode_params();  // oracle side: 256 tokens, stop on blank line
DecodeParams icl_decode_params();        // oracle side: no stop, keep the answer block
DecodeParams answer_decode_params();     // tuned model: short answer, stop at newline

/// Everything one run needs, loaded/generated deterministically from config.
struct RunEnv {
  RunConfig cfg;
  Dataset train, validation, test;
  InstructionSet reasoning_iset, tuning_iset, icl_iset;
  std::map<std::string, std::string> answer_key;
  std::unique_ptr<Oracle> oracle;

  const Dataset& split(const std::string& name) const;
};

RunEnv prepare_run(const RunConfig& cfg);

std::filesystem::path base_checkpoint_path(const RunConfig& cfg, CheckpointKind kind);
/// Loads the base checkpoint, pretraining and saving it first when absent.
ModelParams ensure_base_checkpoint(const RunConfig& cfg, CheckpointKind kind);

struct Rationale {
  std::string example_id;
  std::string text;
  std::string backend_id;
  bool cache_hit = false;
};

/// One rationale per example, in dataset order; oracle failures abort with
/// the offending example ids attached.
std::vector<Rationale> augment(const Dataset& data, const InstructionSet& reasoning_iset,
                               Oracle& oracle);

/// The augmentation file holds {"id","backend","text"} per line; cache-hit
/// state is in-memory metadata so cold and warm runs write identical bytes.
void write_augmentation(const std::filesystem::path& path,
                        const std::vector<Rationale>& rationales);
std::map<std::string, std::string> load_augmentation(const std::filesystem::path& path);

/// Renders the instruction/input/rationale prompt within a token budget:
/// overflow drops the rationale tail first, then the passage tail, never the
/// question. `input_prefix` is prepended to the formatted input.
std::string compose_tuning_prompt(const InstructionSet& tuning_iset, const Example& ex,
                                  TaskKind kind, const std::optional<std::string>& rationale,
                                  int budget_tokens, const std::string& input_prefix = "");

struct TrainedArtifact {
  ModelParams model;  // merged (PEFT) or fully tuned parameters
  RunConfig config;
  std::vector<std::pair<int, double>> curve;
};

/// Runs augmentation for train+validation and writes the augmentation file.
/// Idempotent under a warm cache.
void run_augment_stage(RunEnv& env);

/// Builds the tuned model for env.cfg (requires the augmentation file when
/// use_cot is set), writes run.json, curve.csv, checkpoints/, and returns the
/// artifact.
TrainedArtifact build(RunEnv& env);

/// Variant of build used by the ablation suite: rationale map injected.
TrainedArtifact build_with(RunEnv& env, const RunConfig& cfg,
                           const std::map<std::string, std::string>* rationales);

void save_artifact(const std::filesystem::path& dir, const TrainedArtifact& artifact,
                   const AdapterSet* adapters);
TrainedArtifact load_artifact(const std::filesystem::path& dir);

/// Two-stage inference: rationale from the oracle (skipped for artifacts
/// built without CoT), then greedy decoding on the tuning prompt.
std::string infer_one(const TrainedArtifact& artifact, const InstructionSet& reasoning_iset,
                      Oracle* oracle, const Example& ex);

EvalReport evaluate_artifact(
    const std::string& variant, const TrainedArtifact& artifact,
    const InstructionSet& reasoning_iset, Oracle* oracle, const Dataset& data,
    const std::map<std::string, std::map<std::string, double>>* baselines = nullptr,
    const std::vector<std::string>* macro_subset = nullptr);

/// Text after the final "Answer:" marker, whitespace-trimmed.
std::optional<std::string> parse_icl_answer(const std::string& completion);

/// Single-call baseline on the frozen oracle; parse failures count as wrong
/// answers and are tallied in the report metadata.
EvalReport icl_baseline(RunEnv& env, const Dataset& data);

/// Two training rows per source example ("[rationale] " and "[answer] "
/// prefixes); the returned artifact makes no oracle calls at inference.
TrainedArtifact distilled_cot_build(RunEnv& env);

/// The five cumulative variants of the ablation table, each built and
/// evaluated on the validation split; also writes per-variant run dirs,
/// table.csv, and cot_gain.csv under the suite run dir.
std::vector<EvalReport> run_ablation_suite(RunEnv& env);

}  // namespace fiat
