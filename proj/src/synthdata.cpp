#include "fiat/synthdata.hpp"

#include <algorithm>

#include "fiat/errors.hpp"
#include "fiat/rng.hpp"

namespace fiat {

namespace {

const std::vector<std::string> kNouns = {
    "record", "claim", "file",  "note", "ledger", "entry", "ticket", "badge",
    "crate",  "scroll", "chart", "memo", "tag",    "card",  "sheet",  "token"};
const std::vector<std::string> kPlaces = {"bay",   "aisle", "shelf", "vault",
                                          "drawer", "室",    "полка", "খাতা"};
const std::vector<std::string> kFiller = {
    "the", "a",  "old",  "new", "sits", "rests", "in", "near", "under", "beside",
    "and", "or", "with", "был", "です", "আছে",   "on", "見た", "red",   "blue"};

// Fixed-width (3 letters + 1 digit) so every example renders to the same
// byte layout regardless of how many ids were handed out before it.
std::string token_id(Rng& rng, uint64_t counter) {
  static const char* alphabet = "abcdefghjkmnpqrstuvwxyz";
  std::string out(3, 'a');
  uint64_t c = counter % (23ULL * 23ULL * 23ULL);
  for (int i = 2; i >= 0; --i) {
    out[i] = alphabet[c % 23];
    c /= 23;
  }
  out.push_back(static_cast<char>('2' + rng.below(8)));
  return out;
}

std::string sentence(Rng& rng, int words) {
  std::string out;
  for (int i = 0; i < words; ++i) {
    if (!out.empty()) out += " ";
    out += kFiller[rng.below(kFiller.size())];
  }
  return out;
}

Example leak_example(Rng& rng, uint64_t counter, const std::string& language,
                     const std::string& split, int index, const std::string& label) {
  Example ex;
  ex.id = split + "-" + std::to_string(index);
  ex.language = language;
  std::string rec = token_id(rng, counter * 2);
  std::string claim = token_id(rng, counter * 2 + 1);
  ex.question = "does record " + rec + " support claim " + claim + "?";
  ex.candidate = "claim " + claim;
  ex.passage = "record " + rec + " sits in " + (rng.uniform() < 0.5 ? "bay" : "box") + " " +
               std::to_string(rng.below(10)) + ".";
  ex.target = label;
  return ex;
}

}  // namespace

std::string format_example_input(const Example& ex, TaskKind kind, size_t passage_bytes) {
  std::string passage = ex.passage;
  if (passage_bytes != std::string::npos && passage.size() > passage_bytes)
    passage = passage.substr(0, passage_bytes);
  if (kind == TaskKind::Classification)
    return "q: " + ex.question + " cand: " + ex.candidate + " ctx: " + passage;
  return "q: " + ex.question + " ctx: " + passage;
}

LeakTask make_leak_task(const LeakTaskSpec& spec) {
  require(!spec.languages.empty(), ErrorKind::ConfigError, "leak task needs languages");
  Rng rng(spec.seed);
  uint64_t counter = 0;

  LeakTask task;
  auto build = [&](const std::string& split, int n) {
    Dataset d;
    d.name = "synthetic-leak";
    d.split = split;
    d.kind = TaskKind::Classification;
    // exactly balanced labels so an uninformed guesser sits at 0.5
    std::vector<std::string> labels;
    for (int i = 0; i < n; ++i) labels.push_back(i < n / 2 ? "yes" : "no");
    rng.shuffle(labels);
    for (int i = 0; i < n; ++i) {
      const std::string& lang = spec.languages[i % spec.languages.size()];
      Example ex = leak_example(rng, counter++, lang, split, i, labels[i]);
      task.answer_key[format_example_input(ex, TaskKind::Classification)] = ex.target;
      d.examples.push_back(std::move(ex));
    }
    return d;
  };
  task.train = build("train", spec.n_train);
  task.validation = build("validation", spec.n_validation);
  task.test = build("test", spec.n_test);
  return task;
}

std::vector<std::string> make_raw_corpus(int n_sentences, uint64_t seed) {
  Rng rng(seed);
  std::vector<std::string> out;
  out.reserve(n_sentences);
  for (int i = 0; i < n_sentences; ++i) {
    int style = static_cast<int>(rng.below(4));
    if (style == 0) {
      out.push_back("record " + token_id(rng, rng.next_u64() % 4000) + " sits in " +
                    kPlaces[rng.below(4)] + " " + std::to_string(rng.below(10)) + ".");
    } else if (style == 1) {
      out.push_back("the " + kNouns[rng.below(kNouns.size())] + " " +
                    (rng.uniform() < 0.5 ? "supports" : "contradicts") + " the " +
                    kNouns[rng.below(kNouns.size())] + ".");
    } else if (style == 2) {
      out.push_back(sentence(rng, 4 + static_cast<int>(rng.below(5))) + ".");
    } else {
      out.push_back(std::string(rng.uniform() < 0.5 ? "yes" : "no") + ", the " +
                    kNouns[rng.below(kNouns.size())] + " is " +
                    (rng.uniform() < 0.5 ? "confirmed" : "denied") + ".");
    }
  }
  return out;
}

std::vector<CorpusRow> make_instruction_corpus(int n_rows, uint64_t seed) {
  Rng rng(seed);
  InstructionSet copy_set{"pt-copy", Role::Tuning, "Copy the input.", {}};
  InstructionSet reverse_set{"pt-reverse", Role::Tuning, "Reverse the input.", {}};
  InstructionSet arith_set{"pt-arith", Role::Tuning,
                           "Add the digits and reply with the sum modulo 10.", {}};

  std::vector<CorpusRow> rows;
  rows.reserve(n_rows);
  for (int i = 0; i < n_rows; ++i) {
    CorpusRow row;
    switch (i % 4) {
      case 0: {
        std::string x = sentence(rng, 2 + static_cast<int>(rng.below(3)));
        row.prompt = render_tuning_input(copy_set, x, std::nullopt).text;
        row.target = x;
        break;
      }
      case 1: {
        std::string x = sentence(rng, 2);
        std::string y(x.rbegin(), x.rend());
        row.prompt = render_tuning_input(reverse_set, x, std::nullopt).text;
        row.target = y;
        break;
      }
      case 2: {
        int n = 2 + static_cast<int>(rng.below(3));
        std::string x;
        int sum = 0;
        for (int k = 0; k < n; ++k) {
          int digit = static_cast<int>(rng.below(10));
          sum += digit;
          if (!x.empty()) x += " ";
          x += std::to_string(digit);
        }
        row.prompt = render_tuning_input(arith_set, x, std::nullopt).text;
        row.target = std::to_string(sum % 10);
        break;
      }
      default: {
        std::string needle = kNouns[rng.below(kNouns.size())];
        bool present = rng.uniform() < 0.5;
        std::string x = sentence(rng, 3);
        if (present) x += " " + needle;
        x += " " + sentence(rng, 2);
        InstructionSet contains_set{
            "pt-contains", Role::Tuning,
            "Answer yes or no: does the input contain the word " + needle + "?", {}};
        row.prompt = render_tuning_input(contains_set, x, std::nullopt).text;
        row.target = present ? "yes" : "no";
        break;
      }
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

Dataset make_attribution_manifest(const std::map<std::string, int>& counts_per_language,
                                  const std::string& split, uint64_t seed) {
  Rng rng(seed);
  Dataset d;
  d.name = "attriqa-shaped";
  d.split = split;
  d.kind = TaskKind::Classification;
  uint64_t counter = 0;
  for (const auto& [lang, count] : counts_per_language) {
    for (int i = 0; i < count; ++i) {
      Example ex = leak_example(rng, counter++, lang, split + "-" + lang, i,
                                rng.uniform() < 0.5 ? "yes" : "no");
      d.examples.push_back(std::move(ex));
    }
  }
  return d;
}

Dataset make_spanqa_manifest(const std::map<std::string, int>& counts_per_language,
                             const std::string& split, uint64_t seed) {
  Rng rng(seed);
  Dataset d;
  d.name = "xlqa-shaped";
  d.split = split;
  d.kind = TaskKind::SpanQa;
  uint64_t counter = 0;
  for (const auto& [lang, count] : counts_per_language) {
    for (int i = 0; i < count; ++i) {
      Example ex;
      ex.id = split + "-" + lang + "-" + std::to_string(i);
      ex.language = lang;
      std::string rec = token_id(rng, counter++);
      std::string place = kPlaces[rng.below(4)] + " " + std::to_string(rng.below(10));
      ex.question = "where does record " + rec + " sit?";
      bool answerable = rng.uniform() < 0.8;
      if (answerable) {
        ex.passage = "record " + rec + " sits in " + place + ".";
        ex.target = place;
      } else {
        ex.passage = "record " + rec + " was moved and the register is silent.";
        ex.target = kNoAnswerLiteral;
      }
      d.examples.push_back(std::move(ex));
    }
  }
  return d;
}

}  // namespace fiat
