#pragma once

#include <optional>

#include "fiat/dataset.hpp"

namespace fiat {

/// Lowercase, strip outer whitespace.
std::string normalize_answer(const std::string& text);

/// SQuAD-style: lowercase, strip punctuation, collapse whitespace.
std::string normalize_span(const std::string& text);

/// Mean exact match after normalize_answer. Raises LengthMismatch.
double accuracy(const std::vector<std::string>& preds, const std::vector<std::string>& golds);

/// Average precision with the ranking sorted by score descending, ties broken
/// by ascending example id: AP = sum_k P@k·[gold_k positive] / #positives.
/// Raises NoPositives when no gold is positive.
double average_precision(const std::vector<double>& scores, const std::vector<int>& golds,
                         const std::vector<std::string>& ids);

/// Token-bag F1 between normalized strings. If either side normalizes to the
/// no-answer literal, this is the exact-match indicator instead.
double span_f1(const std::string& pred, const std::string& gold);

struct ExampleResult {
  std::string id;
  std::string language;
  std::string pred;
  std::string gold;
  std::optional<double> score;  // positive-class score, when available
  bool parse_failed = false;
};

struct EvalReport {
  std::string variant;
  TaskKind task = TaskKind::Classification;
  std::map<std::string, std::map<std::string, double>> per_language;  // lang -> metric -> value
  std::map<std::string, double> macro;
  std::vector<std::string> included_languages;  // the macro average runs over these
  std::map<std::string, int> counts;
  std::map<std::string, double> gain;              // metric -> variant - best baseline
  std::map<std::string, std::string> gain_baseline;  // metric -> which baseline was best
  nlohmann::json metadata;

  double primary_metric() const;  // accuracy for classification, f1 for span-qa
};

void to_json(nlohmann::json& j, const EvalReport& r);
void from_json(const nlohmann::json& j, EvalReport& r);

/// Aggregates per-example results into per-language metrics and an unweighted
/// macro average over `macro_subset` (all manifest languages when absent).
/// Raises UnknownLanguage for results outside `manifest_languages`.
EvalReport make_report(
    const std::string& variant, TaskKind task, const std::vector<ExampleResult>& results,
    const std::set<std::string>& manifest_languages,
    const std::map<std::string, std::map<std::string, double>>* baselines = nullptr,
    const std::vector<std::string>* macro_subset = nullptr);

void save_report(const std::filesystem::path& path, const EvalReport& report);
EvalReport load_report(const std::filesystem::path& path);

/// Rows of (variant, language, metric, value); macro rows use language "macro".
void write_table_csv(const std::filesystem::path& path, const std::vector<EvalReport>& reports);

/// Per-language (baseline value, delta from adding CoT) pairs.
std::string cot_gain_csv(const EvalReport& with_cot, const EvalReport& without_cot,
                         const std::string& metric);

}  // namespace fiat
