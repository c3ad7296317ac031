#include "fiat/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>
#include <sstream>

#include "fiat/errors.hpp"

namespace fiat {

std::string normalize_answer(const std::string& text) {
  size_t begin = 0;
  size_t end = text.size();
  while (begin < end && std::isspace(static_cast<unsigned char>(text[begin]))) ++begin;
  while (end > begin && std::isspace(static_cast<unsigned char>(text[end - 1]))) --end;
  std::string out = text.substr(begin, end - begin);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string normalize_span(const std::string& text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char raw : text) {
    unsigned char c = static_cast<unsigned char>(raw);
    if (std::ispunct(c)) continue;
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

double accuracy(const std::vector<std::string>& preds, const std::vector<std::string>& golds) {
  require(preds.size() == golds.size(), ErrorKind::LengthMismatch,
          "accuracy: " + std::to_string(preds.size()) + " predictions vs " +
              std::to_string(golds.size()) + " golds");
  require(!preds.empty(), ErrorKind::LengthMismatch, "accuracy: empty inputs");
  int hits = 0;
  for (size_t i = 0; i < preds.size(); ++i)
    if (normalize_answer(preds[i]) == normalize_answer(golds[i])) ++hits;
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

double average_precision(const std::vector<double>& scores, const std::vector<int>& golds,
                         const std::vector<std::string>& ids) {
  require(scores.size() == golds.size() && scores.size() == ids.size(),
          ErrorKind::LengthMismatch, "average_precision: misaligned inputs");
  require(!scores.empty(), ErrorKind::LengthMismatch, "average_precision: empty inputs");
  int positives = 0;
  for (int g : golds) positives += g != 0 ? 1 : 0;
  require(positives > 0, ErrorKind::NoPositives, "average_precision: no positive golds");

  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return ids[a] < ids[b];
  });

  double ap = 0.0;
  int seen_positive = 0;
  for (size_t k = 0; k < order.size(); ++k) {
    if (golds[order[k]] != 0) {
      ++seen_positive;
      ap += static_cast<double>(seen_positive) / static_cast<double>(k + 1);
    }
  }
  return ap / static_cast<double>(positives);
}

double span_f1(const std::string& pred, const std::string& gold) {
  const std::string no_answer = normalize_span(kNoAnswerLiteral);
  std::string p = normalize_span(pred);
  std::string g = normalize_span(gold);
  if (p == no_answer || g == no_answer) return p == g ? 1.0 : 0.0;

  auto tokens_of = [](const std::string& s) {
    std::map<std::string, int> bag;
    std::istringstream in(s);
    std::string tok;
    int total = 0;
    while (in >> tok) {
      bag[tok]++;
      ++total;
    }
    return std::make_pair(bag, total);
  };
  auto [pbag, pn] = tokens_of(p);
  auto [gbag, gn] = tokens_of(g);
  if (pn == 0 && gn == 0) return 1.0;
  if (pn == 0 || gn == 0) return 0.0;

  int common = 0;
  for (const auto& [tok, count] : pbag) {
    auto it = gbag.find(tok);
    if (it != gbag.end()) common += std::min(count, it->second);
  }
  if (common == 0) return 0.0;
  double precision = static_cast<double>(common) / pn;
  double recall = static_cast<double>(common) / gn;
  return 2.0 * precision * recall / (precision + recall);
}

double EvalReport::primary_metric() const {
  auto it = macro.find(task == TaskKind::Classification ? "accuracy" : "f1");
  return it == macro.end() ? 0.0 : it->second;
}

void to_json(nlohmann::json& j, const EvalReport& r) {
  j = {{"variant", r.variant},
       {"task", to_string(r.task)},
       {"per_language", r.per_language},
       {"macro", r.macro},
       {"included_languages", r.included_languages},
       {"counts", r.counts},
       {"gain", r.gain},
       {"gain_baseline", r.gain_baseline},
       {"metadata", r.metadata}};
}

void from_json(const nlohmann::json& j, EvalReport& r) {
  j.at("variant").get_to(r.variant);
  r.task = task_kind_from_string(j.at("task").get<std::string>());
  j.at("per_language").get_to(r.per_language);
  j.at("macro").get_to(r.macro);
  j.at("included_languages").get_to(r.included_languages);
  j.at("counts").get_to(r.counts);
  j.at("gain").get_to(r.gain);
  j.at("gain_baseline").get_to(r.gain_baseline);
  r.metadata = j.at("metadata");
}

EvalReport make_report(const std::string& variant, TaskKind task,
                       const std::vector<ExampleResult>& results,
                       const std::set<std::string>& manifest_languages,
                       const std::map<std::string, std::map<std::string, double>>* baselines,
                       const std::vector<std::string>* macro_subset) {
  require(!results.empty(), ErrorKind::LengthMismatch, "make_report: no results");

  EvalReport report;
  report.variant = variant;
  report.task = task;

  std::map<std::string, std::vector<const ExampleResult*>> by_language;
  int parse_failures = 0;
  for (const ExampleResult& r : results) {
    require(manifest_languages.count(r.language) > 0, ErrorKind::UnknownLanguage,
            "make_report: result " + r.id + " has language \"" + r.language +
                "\" absent from the dataset manifest");
    by_language[r.language].push_back(&r);
    if (r.parse_failed) ++parse_failures;
  }

  bool all_scored = true;
  for (const ExampleResult& r : results) all_scored = all_scored && r.score.has_value();

  std::vector<std::string> skipped_auc;
  for (const auto& [lang, rows] : by_language) {
    report.counts[lang] = static_cast<int>(rows.size());
    auto& metrics = report.per_language[lang];
    if (task == TaskKind::Classification) {
      std::vector<std::string> preds, golds;
      for (const auto* r : rows) {
        preds.push_back(r->pred);
        golds.push_back(r->gold);
      }
      metrics["accuracy"] = accuracy(preds, golds);
      if (all_scored) {
        std::vector<double> scores;
        std::vector<int> positives;
        std::vector<std::string> ids;
        int n_pos = 0;
        for (const auto* r : rows) {
          scores.push_back(*r->score);
          int pos = normalize_answer(r->gold) == "yes" ? 1 : 0;
          positives.push_back(pos);
          n_pos += pos;
          ids.push_back(r->id);
        }
        if (n_pos > 0)
          metrics["auc_pr"] = average_precision(scores, positives, ids);
        else
          skipped_auc.push_back(lang);
      }
    } else {
      double total = 0.0;
      for (const auto* r : rows) total += span_f1(r->pred, r->gold);
      metrics["f1"] = total / static_cast<double>(rows.size());
    }
  }

  if (macro_subset != nullptr) {
    report.included_languages = *macro_subset;
    for (const std::string& lang : report.included_languages)
      require(report.per_language.count(lang) > 0, ErrorKind::UnknownLanguage,
              "make_report: macro subset language \"" + lang + "\" has no results");
  } else {
    for (const auto& [lang, metrics] : report.per_language)
      report.included_languages.push_back(lang);
  }

  std::set<std::string> metric_names;
  for (const auto& [lang, metrics] : report.per_language)
    for (const auto& [m, v] : metrics) metric_names.insert(m);
  for (const std::string& m : metric_names) {
    double total = 0.0;
    int n = 0;
    for (const std::string& lang : report.included_languages) {
      auto it = report.per_language.at(lang).find(m);
      if (it == report.per_language.at(lang).end()) continue;
      total += it->second;
      ++n;
    }
    if (n == static_cast<int>(report.included_languages.size()))
      report.macro[m] = total / static_cast<double>(n);
  }

  if (baselines != nullptr && !baselines->empty()) {
    for (const auto& [metric, value] : report.macro) {
      std::string best_name;
      double best = 0.0;
      for (const auto& [name, metrics] : *baselines) {
        auto it = metrics.find(metric);
        if (it == metrics.end()) continue;
        if (best_name.empty() || it->second > best) {
          best_name = name;
          best = it->second;
        }
      }
      if (!best_name.empty()) {
        report.gain[metric] = value - best;
        report.gain_baseline[metric] = best_name;
      }
    }
  }

  report.metadata["auc_pr_scope"] = "per-language then macro-averaged";
  report.metadata["parse_failures"] = parse_failures;
  if (!skipped_auc.empty()) report.metadata["auc_pr_skipped_languages"] = skipped_auc;
  return report;
}

void save_report(const std::filesystem::path& path, const EvalReport& report) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorKind::IoError, "cannot write report " + path.string());
  out << nlohmann::json(report).dump(2) << "\n";
}

EvalReport load_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::ArtifactNotFound, "report not found: " + path.string());
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  require(!j.is_discarded(), ErrorKind::SchemaViolation, "corrupt report " + path.string());
  return j.get<EvalReport>();
}

namespace {

std::string csv_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

}  // namespace

void write_table_csv(const std::filesystem::path& path, const std::vector<EvalReport>& reports) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorKind::IoError, "cannot write table " + path.string());
  out << "variant,language,metric,value\n";
  for (const EvalReport& r : reports) {
    for (const auto& [lang, metrics] : r.per_language)
      for (const auto& [metric, value] : metrics)
        out << r.variant << "," << lang << "," << metric << "," << csv_number(value) << "\n";
    for (const auto& [metric, value] : r.macro)
      out << r.variant << ",macro," << metric << "," << csv_number(value) << "\n";
  }
}

std::string cot_gain_csv(const EvalReport& with_cot, const EvalReport& without_cot,
                         const std::string& metric) {
  std::ostringstream out;
  out << "language,baseline_" << metric << ",cot_gain\n";
  for (const auto& [lang, metrics] : without_cot.per_language) {
    auto base_it = metrics.find(metric);
    auto with_it = with_cot.per_language.find(lang);
    if (base_it == metrics.end() || with_it == with_cot.per_language.end()) continue;
    auto value_it = with_it->second.find(metric);
    if (value_it == with_it->second.end()) continue;
    out << lang << "," << csv_number(base_it->second) << ","
        << csv_number(value_it->second - base_it->second) << "\n";
  }
  return out.str();
}

}  // namespace fiat
