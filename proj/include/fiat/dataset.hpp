#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "fiat/errors.hpp"

namespace fiat {

enum class TaskKind { Classification, SpanQa };
std::string to_string(TaskKind kind);
TaskKind task_kind_from_string(const std::string& s);

struct Example {
  std::string id;
  std::string language;
  std::string question;
  std::string passage;
  std::string candidate;  // answer under test (classification only)
  std::string target;     // "yes"/"no", an answer span, or "No answer"
};

struct Dataset {
  std::string name;
  std::string split;  // train | validation | test
  TaskKind kind = TaskKind::Classification;
  std::vector<Example> examples;

  std::map<std::string, int> language_counts() const;
  std::set<std::string> languages() const;
  std::string size_report() const;
  const Example* find(const std::string& id) const;
};

/// One JSON object per line. Malformed lines are rejected with their line
/// number; duplicate ids raise DuplicateId. An empty file is an empty dataset.
Dataset load_jsonl(const std::filesystem::path& path, TaskKind kind,
                   const std::string& name = "", const std::string& split = "");

void save_jsonl(const std::filesystem::path& path, const Dataset& dataset);

inline constexpr const char* kNoAnswerLiteral = "No answer";

}  // namespace fiat
