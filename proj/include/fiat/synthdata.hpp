#pragma once

#include "fiat/dataset.hpp"
#include "fiat/prompt.hpp"

namespace fiat {

/// Single-line rendering of an example used as the prompt "Input:" payload.
/// `passage_bytes` trims the passage tail (truncation policy); the question is
/// never trimmed here.
std::string format_example_input(const Example& ex, TaskKind kind,
                                 size_t passage_bytes = std::string::npos);

/// Classification task whose labels are balanced coins uncorrelated with the
/// input text, so nothing short of the oracle's hint can predict them.
struct LeakTaskSpec {
  int n_train = 200;
  int n_validation = 200;
  int n_test = 200;
  uint64_t seed = 17;
  std::vector<std::string> languages = {"aa", "bb", "cc", "dd", "ee"};
};

struct LeakTask {
  Dataset train;
  Dataset validation;
  Dataset test;
  /// formatted input text -> gold, for the mock oracle.
  std::map<std::string, std::string> answer_key;
};

LeakTask make_leak_task(const LeakTaskSpec& spec);

/// Plain-text sentences for raw LM pretraining.
std::vector<std::string> make_raw_corpus(int n_sentences, uint64_t seed);

/// One instruction-formatted training row: rendered prompt plus its target.
struct CorpusRow {
  std::string prompt;
  std::string target;
};

/// Multitask instruction mixture (copy, reverse, digit-sum mod 10, yes/no
/// containment) rendered with the same scaffold as task tuning inputs.
std::vector<CorpusRow> make_instruction_corpus(int n_rows, uint64_t seed);

/// Paper-shaped fixture manifests: synthetic content with prescribed
/// per-language example counts.
Dataset make_attribution_manifest(const std::map<std::string, int>& counts_per_language,
                                  const std::string& split, uint64_t seed);
Dataset make_spanqa_manifest(const std::map<std::string, int>& counts_per_language,
                             const std::string& split, uint64_t seed);

}  // namespace fiat
