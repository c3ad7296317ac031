#include "fiat/dataset.hpp"

#include <fstream>
#include <sstream>

#include "fiat/errors.hpp"

namespace fiat {

std::string to_string(TaskKind kind) {
  return kind == TaskKind::Classification ? "classification" : "span-qa";
}

TaskKind task_kind_from_string(const std::string& s) {
  if (s == "classification") return TaskKind::Classification;
  if (s == "span-qa") return TaskKind::SpanQa;
  raise(ErrorKind::ConfigError, "unknown task kind: " + s);
}

std::map<std::string, int> Dataset::language_counts() const {
  std::map<std::string, int> counts;
  for (const Example& ex : examples) counts[ex.language]++;
  return counts;
}

std::set<std::string> Dataset::languages() const {
  std::set<std::string> langs;
  for (const Example& ex : examples) langs.insert(ex.language);
  return langs;
}

std::string Dataset::size_report() const {
  std::ostringstream out;
  out << name << " " << split << ": " << examples.size() << " examples";
  bool first = true;
  for (const auto& [lang, count] : language_counts()) {
    out << (first ? " (" : ", ") << lang << "=" << count;
    first = false;
  }
  if (!first) out << ")";
  return out.str();
}

const Example* Dataset::find(const std::string& id) const {
  for (const Example& ex : examples)
    if (ex.id == id) return &ex;
  return nullptr;
}

namespace {

std::string need_string(const nlohmann::json& j, const char* field, size_t line_no) {
  if (!j.contains(field) || !j.at(field).is_string())
    raise(ErrorKind::SchemaViolation,
          "line " + std::to_string(line_no) + ": missing or non-string \"" + field + "\"");
  return j.at(field).get<std::string>();
}

}  // namespace

Dataset load_jsonl(const std::filesystem::path& path, TaskKind kind, const std::string& name,
                   const std::string& split) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::IoError, "cannot open dataset " + path.string());

  Dataset dataset;
  dataset.name = name.empty() ? path.stem().string() : name;
  dataset.split = split;
  dataset.kind = kind;

  std::set<std::string> seen_ids;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object())
      raise(ErrorKind::SchemaViolation,
            "line " + std::to_string(line_no) + ": not a JSON object in " + path.string());

    Example ex;
    ex.id = need_string(j, "id", line_no);
    ex.language = need_string(j, "language", line_no);
    require(!ex.language.empty(), ErrorKind::SchemaViolation,
            "line " + std::to_string(line_no) + ": empty language");
    ex.question = need_string(j, "question", line_no);
    ex.passage = need_string(j, "passage", line_no);
    if (kind == TaskKind::Classification) {
      ex.candidate = need_string(j, "answer", line_no);
      ex.target = need_string(j, "label", line_no);
      require(ex.target == "yes" || ex.target == "no", ErrorKind::SchemaViolation,
              "line " + std::to_string(line_no) + ": label must be \"yes\" or \"no\"");
    } else {
      ex.target = need_string(j, "target", line_no);
    }
    if (!seen_ids.insert(ex.id).second)
      raise(ErrorKind::DuplicateId,
            "line " + std::to_string(line_no) + ": duplicate id \"" + ex.id + "\"");
    dataset.examples.push_back(std::move(ex));
  }
  return dataset;
}

void save_jsonl(const std::filesystem::path& path, const Dataset& dataset) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorKind::IoError, "cannot write dataset " + path.string());
  for (const Example& ex : dataset.examples) {
    nlohmann::json j;
    if (dataset.kind == TaskKind::Classification) {
      j = {{"id", ex.id},         {"language", ex.language}, {"question", ex.question},
           {"answer", ex.candidate}, {"passage", ex.passage},   {"label", ex.target}};
    } else {
      j = {{"id", ex.id},
           {"language", ex.language},
           {"question", ex.question},
           {"passage", ex.passage},
           {"target", ex.target}};
    }
    out << j.dump() << "\n";
  }
}

}  // namespace fiat
