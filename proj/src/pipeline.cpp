#include "fiat/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace fiat {

void to_json(nlohmann::json& j, const VariantFlags& v) {
  j = {{"use_cot", v.use_cot},
       {"use_instructions", v.use_instructions},
       {"use_peft", v.use_peft},
       {"base_checkpoint", to_string(v.base_checkpoint)}};
}

void from_json(const nlohmann::json& j, VariantFlags& v) {
  if (j.contains("use_cot")) j.at("use_cot").get_to(v.use_cot);
  if (j.contains("use_instructions")) j.at("use_instructions").get_to(v.use_instructions);
  if (j.contains("use_peft")) j.at("use_peft").get_to(v.use_peft);
  if (j.contains("base_checkpoint"))
    v.base_checkpoint = checkpoint_kind_from_string(j.at("base_checkpoint").get<std::string>());
}

void to_json(nlohmann::json& j, const PretrainConfig& c) {
  j = {{"steps", c.steps},
       {"batch_size", c.batch_size},
       {"lr", c.lr},
       {"corpus_size", c.corpus_size}};
}

void from_json(const nlohmann::json& j, PretrainConfig& c) {
  if (j.contains("steps")) j.at("steps").get_to(c.steps);
  if (j.contains("batch_size")) j.at("batch_size").get_to(c.batch_size);
  if (j.contains("lr")) j.at("lr").get_to(c.lr);
  if (j.contains("corpus_size")) j.at("corpus_size").get_to(c.corpus_size);
}

void to_json(nlohmann::json& j, const DataConfig& c) {
  j = {{"kind", c.kind},
       {"task", to_string(c.task)},
       {"train_path", c.train_path},
       {"validation_path", c.validation_path},
       {"test_path", c.test_path},
       {"n_train", c.n_train},
       {"n_validation", c.n_validation},
       {"n_test", c.n_test},
       {"leak_strength", c.leak_strength},
       {"macro_languages", c.macro_languages}};
}

void from_json(const nlohmann::json& j, DataConfig& c) {
  if (j.contains("kind")) j.at("kind").get_to(c.kind);
  if (j.contains("task")) c.task = task_kind_from_string(j.at("task").get<std::string>());
  if (j.contains("train_path")) j.at("train_path").get_to(c.train_path);
  if (j.contains("validation_path")) j.at("validation_path").get_to(c.validation_path);
  if (j.contains("test_path")) j.at("test_path").get_to(c.test_path);
  if (j.contains("n_train")) j.at("n_train").get_to(c.n_train);
  if (j.contains("n_validation")) j.at("n_validation").get_to(c.n_validation);
  if (j.contains("n_test")) j.at("n_test").get_to(c.n_test);
  if (j.contains("leak_strength")) j.at("leak_strength").get_to(c.leak_strength);
  if (j.contains("macro_languages")) j.at("macro_languages").get_to(c.macro_languages);
}

bool RunConfig::is_fiat_proper() const {
  return variant.use_cot && variant.use_instructions && variant.use_peft &&
         variant.base_checkpoint == CheckpointKind::InstructionPretrained;
}

void RunConfig::validate() const {
  model.validate();
  backend.validate();
  require(method == "fiat" || method == "distilled-cot", ErrorKind::ConfigError,
          "method must be fiat or distilled-cot, got " + method);
  require(data.kind == "synthetic-leak" || data.kind == "files", ErrorKind::ConfigError,
          "data.kind must be synthetic-leak or files, got " + data.kind);
  require(!run_dir.empty(), ErrorKind::ConfigError, "run_dir must be set");
}

void to_json(nlohmann::json& j, const RunConfig& c) {
  j = {{"run_id", c.run_id},
       {"method", c.method},
       {"seed", c.seed},
       {"run_dir", c.run_dir},
       {"cache_dir", c.cache_dir},
       {"variant", c.variant},
       {"model", c.model},
       {"adapter", c.adapter},
       {"training", c.training},
       {"pretrain", c.pretrain},
       {"backend", c.backend},
       {"checkpoints",
        {{"raw", c.checkpoint_raw}, {"instruction", c.checkpoint_instruction}}},
       {"instructions",
        {{"reasoning", c.instructions_reasoning},
         {"tuning", c.instructions_tuning},
         {"icl", c.instructions_icl}}},
       {"data", c.data}};
}

void from_json(const nlohmann::json& j, RunConfig& c) {
  if (j.contains("run_id")) j.at("run_id").get_to(c.run_id);
  if (j.contains("method")) j.at("method").get_to(c.method);
  if (j.contains("seed")) j.at("seed").get_to(c.seed);
  if (j.contains("run_dir")) j.at("run_dir").get_to(c.run_dir);
  if (j.contains("cache_dir")) j.at("cache_dir").get_to(c.cache_dir);
  if (j.contains("variant")) j.at("variant").get_to(c.variant);
  if (j.contains("model")) j.at("model").get_to(c.model);
  if (j.contains("adapter")) j.at("adapter").get_to(c.adapter);
  if (j.contains("training")) j.at("training").get_to(c.training);
  if (j.contains("pretrain")) j.at("pretrain").get_to(c.pretrain);
  if (j.contains("backend")) j.at("backend").get_to(c.backend);
  if (j.contains("checkpoints")) {
    const auto& ck = j.at("checkpoints");
    if (ck.contains("raw")) ck.at("raw").get_to(c.checkpoint_raw);
    if (ck.contains("instruction")) ck.at("instruction").get_to(c.checkpoint_instruction);
  }
  if (j.contains("instructions")) {
    const auto& is = j.at("instructions");
    if (is.contains("reasoning")) is.at("reasoning").get_to(c.instructions_reasoning);
    if (is.contains("tuning")) is.at("tuning").get_to(c.instructions_tuning);
    if (is.contains("icl")) is.at("icl").get_to(c.instructions_icl);
  }
  if (j.contains("data")) j.at("data").get_to(c.data);
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::IoError, "cannot open run config " + path.string());
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  require(!j.is_discarded(), ErrorKind::ConfigError,
          "run config is not valid JSON: " + path.string());
  RunConfig cfg = j.get<RunConfig>();
  cfg.validate();
  return cfg;
}

nlohmann::json apply_override(nlohmann::json config, const std::string& dotted_assignment) {
  size_t eq = dotted_assignment.find('=');
  require(eq != std::string::npos && eq > 0, ErrorKind::ConfigError,
          "override must look like path.to.field=value: " + dotted_assignment);
  std::string path = dotted_assignment.substr(0, eq);
  std::string raw_value = dotted_assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(raw_value, nullptr, false);
  if (value.is_discarded()) value = raw_value;  // plain string

  nlohmann::json* node = &config;
  size_t start = 0;
  while (true) {
    size_t dot = path.find('.', start);
    std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
    require(!key.empty(), ErrorKind::ConfigError, "bad override path: " + path);
    if (dot == std::string::npos) {
      (*node)[key] = value;
      break;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
  return config;
}

std::string variant_label(const VariantFlags& flags) {
  if (flags == VariantFlags{true, true, true, CheckpointKind::InstructionPretrained})
    return "fiat";
  if (flags == VariantFlags{false, true, true, CheckpointKind::InstructionPretrained})
    return "wo_cot";
  if (flags == VariantFlags{false, false, true, CheckpointKind::InstructionPretrained})
    return "wo_instruction_augmentation";
  if (flags == VariantFlags{false, false, false, CheckpointKind::InstructionPretrained})
    return "wo_peft";
  if (flags == VariantFlags{false, false, false, CheckpointKind::RawPretrained})
    return "wo_instruction_tuned_base";
  std::string label = "custom";
  label += flags.use_cot ? "+cot" : "-cot";
  label += flags.use_instructions ? "+instr" : "-instr";
  label += flags.use_peft ? "+peft" : "-peft";
  label += flags.base_checkpoint == CheckpointKind::InstructionPretrained ? "+itbase" : "-itbase";
  return label;
}

RunConfig traditional_finetune_config(const RunConfig& base) {
  RunConfig cfg = base;
  cfg.variant = VariantFlags{false, false, false, CheckpointKind::RawPretrained};
  return cfg;
}

InstructionSet default_tuning_instructions(TaskKind kind) {
  InstructionSet s;
  s.role = Role::Tuning;
  if (kind == TaskKind::Classification) {
    s.id = "tuning-attribution-v1";
    s.instruction = "Answer yes or no: is the candidate supported by the context?";
  } else {
    s.id = "tuning-spanqa-v1";
    s.instruction = "Answer with the exact span from the context, or \"No answer\".";
  }
  return s;
}

InstructionSet default_reasoning_instructions(TaskKind kind) {
  InstructionSet s;
  s.role = Role::Reasoning;
  if (kind == TaskKind::Classification) {
    s.id = "reasoning-attribution-v1";
    s.instruction =
        "Decide whether the candidate answer is supported by the context. Reason briefly in "
        "English, then give the final answer.";
  } else {
    s.id = "reasoning-spanqa-v1";
    s.instruction =
        "Find the answer span in the context. Reason briefly in English, then give the final "
        "answer.";
  }
  return s;
}

InstructionSet default_icl_instructions(TaskKind kind) {
  InstructionSet s = default_reasoning_instructions(kind);
  s.id = kind == TaskKind::Classification ? "icl-attribution-v1" : "icl-spanqa-v1";
  Exemplar a;
  a.input = "q: does record m1 support claim z9? cand: claim z9 ctx: record m1 sits in bay 4.";
  a.rationale = "the context names record m1, which is the record the claim cites.";
  a.output = "yes";
  Exemplar b;
  b.input = "q: does record m2 support claim z3? cand: claim z3 ctx: record m7 sits in bay 1.";
  b.rationale = "the context speaks about a different record, m7.";
  b.output = "no";
  s.exemplars = {a, b};
  return s;
}

InstructionSet make_multilingual_icl_set(const std::vector<std::string>& languages,
                                         int per_language) {
  InstructionSet s = default_reasoning_instructions(TaskKind::Classification);
  s.id = "icl-attribution-20x-v1";
  int k = 0;
  for (const std::string& lang : languages) {
    for (int i = 0; i < per_language; ++i, ++k) {
      Exemplar e;
      std::string rec = "r" + std::to_string(k) + lang;
      std::string claim = "c" + std::to_string(k);
      bool positive = k % 2 == 0;
      e.input = "q: does record " + rec + " support claim " + claim + "? cand: claim " + claim +
                " ctx: record " + (positive ? rec : rec + "x") + " sits in bay " +
                std::to_string(k % 10) + ".";
      e.rationale = positive ? "the context names record " + rec + " directly."
                             : "the context names a different record.";
      e.output = positive ? "yes" : "no";
      s.exemplars.push_back(std::move(e));
    }
  }
  return s;
}

DecodeParams rationale_decode_params() {
  DecodeParams dp;
  dp.max_new_tokens = 256;
  dp.stop = {"\n\n"};
  return dp;
}

DecodeParams icl_decode_params() {
  DecodeParams dp;
  dp.max_new_tokens = 256;
  dp.stop = {};
  return dp;
}

DecodeParams answer_decode_params() {
  DecodeParams dp;
  dp.max_new_tokens = 24;
  dp.stop = {"\n"};
  return dp;
}

const Dataset& RunEnv::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "validation") return validation;
  if (name == "test") return test;
  raise(ErrorKind::ConfigError, "unknown split: " + name);
}

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

InstructionSet load_or_default(const std::string& path, const InstructionSet& fallback) {
  if (path.empty()) return fallback;
  return load_instruction_set(path);
}

}  // namespace

RunEnv prepare_run(const RunConfig& cfg) {
  cfg.validate();
  RunEnv env;
  env.cfg = cfg;
  std::filesystem::create_directories(cfg.run_dir);

  if (cfg.data.kind == "synthetic-leak") {
    LeakTaskSpec spec;
    spec.n_train = cfg.data.n_train;
    spec.n_validation = cfg.data.n_validation;
    spec.n_test = cfg.data.n_test;
    spec.seed = cfg.seed;
    LeakTask task = make_leak_task(spec);
    env.train = std::move(task.train);
    env.validation = std::move(task.validation);
    env.test = std::move(task.test);
    env.answer_key = std::move(task.answer_key);
    // provenance copies inside the run directory
    save_jsonl(std::filesystem::path(cfg.run_dir) / "data" / "train.jsonl", env.train);
    save_jsonl(std::filesystem::path(cfg.run_dir) / "data" / "validation.jsonl", env.validation);
    save_jsonl(std::filesystem::path(cfg.run_dir) / "data" / "test.jsonl", env.test);
  } else {
    env.train = load_jsonl(cfg.data.train_path, cfg.data.task, "train", "train");
    env.validation =
        load_jsonl(cfg.data.validation_path, cfg.data.task, "validation", "validation");
    if (!cfg.data.test_path.empty())
      env.test = load_jsonl(cfg.data.test_path, cfg.data.task, "test", "test");
    env.test.kind = cfg.data.task;
    for (const Dataset* d : {&env.train, &env.validation, &env.test})
      for (const Example& ex : d->examples)
        env.answer_key[format_example_input(ex, cfg.data.task)] = ex.target;
  }

  env.reasoning_iset = load_or_default(cfg.instructions_reasoning,
                                       default_reasoning_instructions(cfg.data.task));
  env.tuning_iset =
      load_or_default(cfg.instructions_tuning, default_tuning_instructions(cfg.data.task));
  env.icl_iset = load_or_default(cfg.instructions_icl, default_icl_instructions(cfg.data.task));
  require(env.reasoning_iset.role == Role::Reasoning, ErrorKind::RoleMismatch,
          "reasoning instruction set must have the reasoning role");
  require(env.tuning_iset.role == Role::Tuning, ErrorKind::RoleMismatch,
          "tuning instruction set must have the tuning role");

  env.oracle = std::make_unique<Oracle>(cfg.backend, cfg.cache_dir);
  if (env.oracle->mock() != nullptr) env.oracle->mock()->register_answers(env.answer_key);
  return env;
}

std::filesystem::path base_checkpoint_path(const RunConfig& cfg, CheckpointKind kind) {
  if (kind == CheckpointKind::RawPretrained && !cfg.checkpoint_raw.empty())
    return cfg.checkpoint_raw;
  if (kind == CheckpointKind::InstructionPretrained && !cfg.checkpoint_instruction.empty())
    return cfg.checkpoint_instruction;
  return std::filesystem::path(cfg.run_dir) / "checkpoints" /
         ("base-" + to_string(kind) + ".ckpt");
}

namespace {

}  // namespace

ModelParams ensure_base_checkpoint(const RunConfig& cfg, CheckpointKind kind) {
  std::filesystem::path path = base_checkpoint_path(cfg, kind);
  if (std::filesystem::exists(path)) {
    ModelParams params = load_checkpoint(path);
    require(params.config == cfg.model, ErrorKind::ConfigError,
            "checkpoint " + path.string() + " was built for a different model configuration");
    require(params.kind == kind, ErrorKind::ConfigError,
            "checkpoint " + path.string() + " has kind " + to_string(params.kind) +
                ", expected " + to_string(kind));
    return params;
  }

  uint64_t raw_seed = cfg.seed * 2654435761ULL + 101;
  ModelParams params;
  if (kind == CheckpointKind::RawPretrained) {
    params = ModelParams::init(cfg.model, raw_seed);
    std::vector<std::string> corpus = make_raw_corpus(cfg.pretrain.corpus_size, raw_seed + 1);
    pretrain_lm(params, corpus, cfg.pretrain.steps, cfg.pretrain.batch_size, cfg.pretrain.lr,
                raw_seed + 2);
    params.kind = CheckpointKind::RawPretrained;
  } else {
    // instruction tuning continues from the raw checkpoint
    params = ensure_base_checkpoint(cfg, CheckpointKind::RawPretrained);
    std::vector<CorpusRow> rows =
        make_instruction_corpus(cfg.pretrain.corpus_size, raw_seed + 3);
    std::vector<TrainRow> train_rows;
    train_rows.reserve(rows.size());
    for (const CorpusRow& row : rows)
      train_rows.push_back(make_train_row(row.prompt, row.target, cfg.model.max_seq_len));
    pretrain_instruction(params, train_rows, cfg.pretrain.steps, cfg.pretrain.batch_size,
                         cfg.pretrain.lr, raw_seed + 4);
    params.kind = CheckpointKind::InstructionPretrained;
  }
  params.seed = cfg.seed;
  save_checkpoint(path, params);
  return params;
}

std::vector<Rationale> augment(const Dataset& data, const InstructionSet& reasoning_iset,
                               Oracle& oracle) {
  std::vector<Rationale> out;
  if (data.examples.empty()) return out;

  std::vector<std::string> prompts;
  prompts.reserve(data.examples.size());
  for (const Example& ex : data.examples)
    prompts.push_back(
        render_reasoning_prompt(reasoning_iset, format_example_input(ex, data.kind)).text);

  auto items = oracle.batch_generate(prompts, rationale_decode_params());
  std::string failures;
  for (const BatchItem& item : items) {
    if (!item.ok) {
      failures += (failures.empty() ? "" : "; ") + std::string("example ") +
                  data.examples[item.index].id + ": " + item.error;
    }
  }
  if (!failures.empty()) raise(ErrorKind::BackendUnavailable, "augment failed: " + failures);

  out.reserve(items.size());
  for (const BatchItem& item : items) {
    Rationale r;
    r.example_id = data.examples[item.index].id;
    r.text = trim(item.response.text);
    r.backend_id = item.response.backend_id;
    r.cache_hit = item.response.cache_hit;
    out.push_back(std::move(r));
  }
  return out;
}

void write_augmentation(const std::filesystem::path& path,
                        const std::vector<Rationale>& rationales) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorKind::IoError, "cannot write augmentation " + path.string());
  for (const Rationale& r : rationales) {
    nlohmann::json j = {{"id", r.example_id}, {"backend", r.backend_id}, {"text", r.text}};
    out << j.dump() << "\n";
  }
}

std::map<std::string, std::string> load_augmentation(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::MissingAugmentation,
          "augmentation file not found: " + path.string());
  std::map<std::string, std::string> out;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    require(!j.is_discarded() && j.contains("id") && j.contains("text"),
            ErrorKind::SchemaViolation,
            "augmentation line " + std::to_string(line_no) + " is malformed in " + path.string());
    out[j.at("id").get<std::string>()] = j.at("text").get<std::string>();
  }
  return out;
}

std::string compose_tuning_prompt(const InstructionSet& tuning_iset, const Example& ex,
                                  TaskKind kind, const std::optional<std::string>& rationale,
                                  int budget_tokens, const std::string& input_prefix) {
  size_t passage_limit = std::string::npos;
  std::optional<std::string> rat = rationale;
  for (int attempt = 0; attempt < 3; ++attempt) {
    std::string input = input_prefix + format_example_input(ex, kind, passage_limit);
    std::string text = render_tuning_input(tuning_iset, input, rat).text;
    int tokens = 1 + static_cast<int>(text.size());  // BOS + bytes
    if (tokens <= budget_tokens) return text;
    size_t excess = static_cast<size_t>(tokens - budget_tokens);
    if (rat.has_value() && !rat->empty()) {
      // drop the rationale tail first
      size_t keep = rat->size() > excess ? rat->size() - excess : 0;
      rat = rat->substr(0, keep);
      if (rat->empty()) rat.reset();
      continue;
    }
    size_t passage_len = std::min(ex.passage.size(), passage_limit);
    if (passage_len > 0) {
      passage_limit = passage_len > excess ? passage_len - excess : 0;
      continue;
    }
    break;
  }
  std::string input = input_prefix + format_example_input(ex, kind, passage_limit);
  std::string text = render_tuning_input(tuning_iset, input, rat).text;
  require(1 + static_cast<int>(text.size()) <= budget_tokens, ErrorKind::SequenceTooLong,
          "example " + ex.id + " does not fit the context even with rationale and passage "
          "dropped; the question is never truncated");
  return text;
}

namespace {

InstructionSet empty_tuning_set() {
  InstructionSet s;
  s.id = "no-instructions";
  s.role = Role::Tuning;
  return s;
}

std::string method_prefix(const RunConfig& cfg) {
  return cfg.method == "distilled-cot" ? "[answer] " : "";
}

// dev metric: decode-based accuracy (classification) or span F1.
double dev_metric(const RunConfig& cfg, const Dataset& validation,
                  const InstructionSet& tuning_iset,
                  const std::map<std::string, std::string>* rationales,
                  const std::string& input_prefix, const ModelParams& params,
                  const AdapterSet* adapters) {
  DecodeParams dp = answer_decode_params();
  int budget = cfg.model.max_seq_len - dp.max_new_tokens;
  size_t limit = validation.examples.size();
  if (cfg.training.dev_subset > 0)
    limit = std::min(limit, static_cast<size_t>(cfg.training.dev_subset));
  double total = 0.0;
  for (size_t idx = 0; idx < limit; ++idx) {
    const Example& ex = validation.examples[idx];
    std::optional<std::string> rationale;
    if (rationales != nullptr) {
      auto it = rationales->find(ex.id);
      require(it != rationales->end(), ErrorKind::MissingAugmentation,
              "no rationale for validation example " + ex.id);
      rationale = it->second;
    }
    std::string prompt =
        compose_tuning_prompt(tuning_iset, ex, cfg.data.task, rationale, budget, input_prefix);
    std::vector<int> tokens = {kBosToken};
    for (int t : tokenize_bytes(prompt)) tokens.push_back(t);
    std::string pred = trim(greedy_decode(params, tokens, dp, adapters));
    if (cfg.data.task == TaskKind::Classification)
      total += normalize_answer(pred) == normalize_answer(ex.target) ? 1.0 : 0.0;
    else
      total += span_f1(pred, ex.target);
  }
  return limit == 0 ? 0.0 : total / static_cast<double>(limit);
}

void write_curve_csv(const std::filesystem::path& path,
                     const std::vector<std::pair<int, double>>& curve) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorKind::IoError, "cannot write curve " + path.string());
  out << "step,dev_metric\n";
  char buf[48];
  for (const auto& [step, metric] : curve) {
    std::snprintf(buf, sizeof(buf), "%d,%.12g\n", step, metric);
    out << buf;
  }
}

void write_run_json(const RunConfig& cfg) {
  auto path = std::filesystem::path(cfg.run_dir) / "run.json";
  std::filesystem::create_directories(cfg.run_dir);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorKind::IoError, "cannot write " + path.string());
  out << nlohmann::json(cfg).dump(2) << "\n";
}

}  // namespace

void run_augment_stage(RunEnv& env) {
  std::vector<Rationale> all = augment(env.train, env.reasoning_iset, *env.oracle);
  std::vector<Rationale> dev = augment(env.validation, env.reasoning_iset, *env.oracle);
  all.insert(all.end(), dev.begin(), dev.end());
  write_augmentation(std::filesystem::path(env.cfg.run_dir) / "augmentation.jsonl", all);
}

TrainedArtifact build(RunEnv& env) {
  std::map<std::string, std::string> rationales;
  const std::map<std::string, std::string>* rat_ptr = nullptr;
  if (env.cfg.variant.use_cot || env.cfg.method == "distilled-cot") {
    rationales = load_augmentation(std::filesystem::path(env.cfg.run_dir) / "augmentation.jsonl");
    rat_ptr = &rationales;
  }
  return build_with(env, env.cfg, rat_ptr);
}

TrainedArtifact build_with(RunEnv& env, const RunConfig& cfg,
                           const std::map<std::string, std::string>* rationales) {
  cfg.validate();
  bool needs_rationales = cfg.variant.use_cot || cfg.method == "distilled-cot";
  require(!needs_rationales || rationales != nullptr, ErrorKind::MissingAugmentation,
          "this configuration needs rationales; run the augment stage first");

  ModelParams params = ensure_base_checkpoint(cfg, cfg.variant.base_checkpoint);
  InstructionSet tuning_iset =
      cfg.variant.use_instructions ? env.tuning_iset : empty_tuning_set();

  auto rationale_for = [&](const Example& ex) -> std::string {
    auto it = rationales->find(ex.id);
    require(it != rationales->end(), ErrorKind::MissingAugmentation,
            "no rationale for example " + ex.id);
    return it->second;
  };

  std::vector<TrainRow> rows;
  const std::string prefix = method_prefix(cfg);
  for (const Example& ex : env.train.examples) {
    if (cfg.method == "distilled-cot") {
      // two rows per example: predict the rationale, predict the answer
      std::string rationale_target = rationale_for(ex);
      int budget_r = cfg.model.max_seq_len - static_cast<int>(rationale_target.size()) - 2;
      rows.push_back(make_train_row(
          compose_tuning_prompt(tuning_iset, ex, cfg.data.task, std::nullopt, budget_r,
                                "[rationale] "),
          rationale_target, cfg.model.max_seq_len));
      int budget_a = cfg.model.max_seq_len - static_cast<int>(ex.target.size()) - 2;
      rows.push_back(make_train_row(
          compose_tuning_prompt(tuning_iset, ex, cfg.data.task, std::nullopt, budget_a,
                                "[answer] "),
          ex.target, cfg.model.max_seq_len));
    } else {
      std::optional<std::string> rationale;
      if (cfg.variant.use_cot) rationale = rationale_for(ex);
      int budget = cfg.model.max_seq_len - static_cast<int>(ex.target.size()) - 2;
      rows.push_back(make_train_row(
          compose_tuning_prompt(tuning_iset, ex, cfg.data.task, rationale, budget),
          ex.target, cfg.model.max_seq_len));
    }
  }

  std::optional<AdapterSet> adapters;
  if (cfg.variant.use_peft) adapters = init_adapters(params, cfg.adapter, cfg.seed);

  const std::map<std::string, std::string>* dev_rationales =
      (cfg.variant.use_cot && cfg.method != "distilled-cot") ? rationales : nullptr;
  DevEval dev = [&](const ModelParams& p, const AdapterSet* a) {
    return dev_metric(cfg, env.validation, tuning_iset, dev_rationales, prefix, p, a);
  };

  TrainOutcome outcome =
      train_model(params, adapters ? &*adapters : nullptr, rows, cfg.training, cfg.seed, dev);

  TrainedArtifact artifact;
  artifact.config = cfg;
  artifact.curve = outcome.curve;
  if (adapters) {
    auto base_path = base_checkpoint_path(cfg, cfg.variant.base_checkpoint);
    adapters->base_checkpoint_sha256 = sha256_file(base_path);
    artifact.model = merge(params, *adapters);
  } else {
    artifact.model = std::move(params);
  }
  save_artifact(cfg.run_dir, artifact, adapters ? &*adapters : nullptr);
  return artifact;
}

void save_artifact(const std::filesystem::path& dir, const TrainedArtifact& artifact,
                   const AdapterSet* adapters) {
  std::filesystem::create_directories(dir / "checkpoints");
  write_run_json(artifact.config);
  write_curve_csv(dir / "curve.csv", artifact.curve);
  save_checkpoint(dir / "checkpoints" / "merged.ckpt", artifact.model);
  if (adapters != nullptr) save_adapters(dir / "checkpoints" / "adapters.bin", *adapters);
}

TrainedArtifact load_artifact(const std::filesystem::path& dir) {
  require(std::filesystem::exists(dir / "run.json"), ErrorKind::ArtifactNotFound,
          "no run.json under " + dir.string());
  std::ifstream in(dir / "run.json");
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  require(!j.is_discarded(), ErrorKind::SchemaViolation, "corrupt run.json in " + dir.string());

  TrainedArtifact artifact;
  artifact.config = j.get<RunConfig>();
  artifact.model = load_checkpoint(dir / "checkpoints" / "merged.ckpt");

  std::ifstream curve(dir / "curve.csv");
  if (curve.good()) {
    std::string line;
    std::getline(curve, line);  // header
    while (std::getline(curve, line)) {
      size_t comma = line.find(',');
      if (comma == std::string::npos) continue;
      artifact.curve.emplace_back(std::stoi(line.substr(0, comma)),
                                  std::stod(line.substr(comma + 1)));
    }
  }
  return artifact;
}

namespace {

InstructionSet tuning_iset_for(const RunConfig& cfg) {
  if (!cfg.variant.use_instructions) return empty_tuning_set();
  return load_or_default(cfg.instructions_tuning, default_tuning_instructions(cfg.data.task));
}

// Tokenized tuning prompt for one example, rationale fetched when the
// artifact was built with CoT.
std::vector<int> inference_tokens(const TrainedArtifact& artifact,
                                  const InstructionSet& reasoning_iset, Oracle* oracle,
                                  const Example& ex, const InstructionSet& tuning_iset) {
  const RunConfig& cfg = artifact.config;
  std::optional<std::string> rationale;
  if (cfg.method != "distilled-cot" && cfg.variant.use_cot) {
    require(oracle != nullptr, ErrorKind::ConfigError,
            "artifact was built with CoT augmentation; inference needs the oracle");
    RenderedPrompt prompt =
        render_reasoning_prompt(reasoning_iset, format_example_input(ex, cfg.data.task));
    rationale = trim(oracle->generate(prompt, rationale_decode_params()).text);
  }
  DecodeParams dp = answer_decode_params();
  int budget = cfg.model.max_seq_len - dp.max_new_tokens;
  std::string prompt = compose_tuning_prompt(tuning_iset, ex, cfg.data.task, rationale, budget,
                                             method_prefix(cfg));
  std::vector<int> tokens = {kBosToken};
  for (int t : tokenize_bytes(prompt)) tokens.push_back(t);
  return tokens;
}

}  // namespace

std::string infer_one(const TrainedArtifact& artifact, const InstructionSet& reasoning_iset,
                      Oracle* oracle, const Example& ex) {
  InstructionSet tuning_iset = tuning_iset_for(artifact.config);
  std::vector<int> tokens = inference_tokens(artifact, reasoning_iset, oracle, ex, tuning_iset);
  return trim(greedy_decode(artifact.model, tokens, answer_decode_params()));
}

EvalReport evaluate_artifact(const std::string& variant, const TrainedArtifact& artifact,
                             const InstructionSet& reasoning_iset, Oracle* oracle,
                             const Dataset& data,
                             const std::map<std::string, std::map<std::string, double>>* baselines,
                             const std::vector<std::string>* macro_subset) {
  const RunConfig& cfg = artifact.config;
  InstructionSet tuning_iset = tuning_iset_for(cfg);
  std::vector<ExampleResult> results;
  results.reserve(data.examples.size());
  for (const Example& ex : data.examples) {
    ExampleResult r;
    r.id = ex.id;
    r.language = ex.language;
    r.gold = ex.target;
    std::vector<int> tokens =
        inference_tokens(artifact, reasoning_iset, oracle, ex, tuning_iset);
    r.pred = trim(greedy_decode(artifact.model, tokens, answer_decode_params()));
    if (cfg.data.task == TaskKind::Classification) {
      // positive-class probability from the two label scores
      double lp_yes = sequence_logprob(artifact.model, tokens, tokenize_bytes(" yes"));
      double lp_no = sequence_logprob(artifact.model, tokens, tokenize_bytes(" no"));
      r.score = 1.0 / (1.0 + std::exp(lp_no - lp_yes));
    }
    results.push_back(std::move(r));
  }
  const std::vector<std::string>* subset = macro_subset;
  if (subset == nullptr && !cfg.data.macro_languages.empty()) subset = &cfg.data.macro_languages;
  return make_report(variant, cfg.data.task, results, data.languages(), baselines, subset);
}

std::optional<std::string> parse_icl_answer(const std::string& completion) {
  size_t at = completion.rfind("Answer:");
  if (at == std::string::npos) return std::nullopt;
  return trim(completion.substr(at + 7));
}

EvalReport icl_baseline(RunEnv& env, const Dataset& data) {
  std::vector<ExampleResult> results;
  results.reserve(data.examples.size());
  for (const Example& ex : data.examples) {
    RenderedPrompt prompt =
        render_reasoning_prompt(env.icl_iset, format_example_input(ex, env.cfg.data.task));
    OracleResponse response = env.oracle->generate(prompt, icl_decode_params());
    ExampleResult r;
    r.id = ex.id;
    r.language = ex.language;
    r.gold = ex.target;
    if (auto parsed = parse_icl_answer(response.text)) {
      r.pred = *parsed;
    } else {
      r.pred = "";
      r.parse_failed = true;
    }
    results.push_back(std::move(r));
  }
  const std::vector<std::string>* subset =
      env.cfg.data.macro_languages.empty() ? nullptr : &env.cfg.data.macro_languages;
  return make_report("icl", env.cfg.data.task, results, data.languages(), nullptr, subset);
}

TrainedArtifact distilled_cot_build(RunEnv& env) {
  RunConfig cfg = env.cfg;
  cfg.method = "distilled-cot";
  cfg.variant.use_cot = false;  // no rationale inputs and no oracle at inference
  std::map<std::string, std::string> rationales =
      load_augmentation(std::filesystem::path(env.cfg.run_dir) / "augmentation.jsonl");
  return build_with(env, cfg, &rationales);
}

std::vector<EvalReport> run_ablation_suite(RunEnv& env) {
  const std::vector<VariantFlags> variants = {
      {true, true, true, CheckpointKind::InstructionPretrained},
      {false, true, true, CheckpointKind::InstructionPretrained},
      {false, false, true, CheckpointKind::InstructionPretrained},
      {false, false, false, CheckpointKind::InstructionPretrained},
      {false, false, false, CheckpointKind::RawPretrained},
  };

  // shared augmentation for every variant that needs it
  auto augmentation_path = std::filesystem::path(env.cfg.run_dir) / "augmentation.jsonl";
  if (!std::filesystem::exists(augmentation_path)) run_augment_stage(env);
  std::map<std::string, std::string> rationales = load_augmentation(augmentation_path);

  // the cumulative end state is plain fine-tuning
  require(variants.back() == traditional_finetune_config(env.cfg).variant,
          ErrorKind::ConfigError, "ablation suite must end at the fine-tuning baseline");

  std::vector<EvalReport> reports;
  for (const VariantFlags& flags : variants) {
    RunConfig cfg = env.cfg;
    cfg.variant = flags;
    std::string label = variant_label(flags);
    cfg.run_id = env.cfg.run_id + "/" + label;
    cfg.run_dir = (std::filesystem::path(env.cfg.run_dir) / "variants" / label).string();
    // share one set of base checkpoints across the suite
    cfg.checkpoint_raw =
        base_checkpoint_path(env.cfg, CheckpointKind::RawPretrained).string();
    cfg.checkpoint_instruction =
        base_checkpoint_path(env.cfg, CheckpointKind::InstructionPretrained).string();

    TrainedArtifact artifact = build_with(env, cfg, flags.use_cot ? &rationales : nullptr);
    EvalReport report = evaluate_artifact(label, artifact, env.reasoning_iset,
                                          env.oracle.get(), env.validation);
    save_report(std::filesystem::path(cfg.run_dir) / "report.json", report);
    reports.push_back(std::move(report));
  }

  write_table_csv(std::filesystem::path(env.cfg.run_dir) / "table.csv", reports);
  std::ofstream gain(std::filesystem::path(env.cfg.run_dir) / "cot_gain.csv",
                     std::ios::binary | std::ios::trunc);
  gain << cot_gain_csv(reports[0], reports[1],
                       env.cfg.data.task == TaskKind::Classification ? "accuracy" : "f1");
  nlohmann::json all = nlohmann::json::array();
  for (const EvalReport& r : reports) all.push_back(r);
  std::ofstream combined(std::filesystem::path(env.cfg.run_dir) / "report.json",
                         std::ios::binary | std::ios::trunc);
  combined << all.dump(2) << "\n";
  return reports;
}

}  // namespace fiat
