#include "fiat/prompt.hpp"

#include <fstream>

#include "fiat/errors.hpp"

namespace fiat {

namespace {

const char* kMarkers[] = {"Input:", "Reasoning:", "Answer:", "Rationale:"};

void validate_exemplar(const Exemplar& ex) {
  require(!ex.output.empty(), ErrorKind::SchemaViolation, "exemplar output must be nonempty");
  check_render_safe(ex.input, "exemplar input");
  check_render_safe(ex.rationale, "exemplar rationale");
  check_render_safe(ex.output, "exemplar output");
}

}  // namespace

std::string to_string(Role role) { return role == Role::Reasoning ? "reasoning" : "tuning"; }

Role role_from_string(const std::string& s) {
  if (s == "reasoning") return Role::Reasoning;
  if (s == "tuning") return Role::Tuning;
  raise(ErrorKind::SchemaViolation, "unknown instruction role: " + s);
}

void to_json(nlohmann::json& j, const InstructionSet& s) {
  nlohmann::json exemplars = nlohmann::json::array();
  for (const Exemplar& e : s.exemplars)
    exemplars.push_back(
        {{"input", e.input}, {"rationale", e.rationale}, {"output", e.output}});
  j = {{"id", s.id},
       {"role", to_string(s.role)},
       {"instruction", s.instruction},
       {"exemplars", exemplars}};
}

void from_json(const nlohmann::json& j, InstructionSet& s) {
  j.at("id").get_to(s.id);
  s.role = role_from_string(j.at("role").get<std::string>());
  j.at("instruction").get_to(s.instruction);
  s.exemplars.clear();
  if (j.contains("exemplars")) {
    for (const auto& e : j.at("exemplars")) {
      Exemplar ex;
      e.at("input").get_to(ex.input);
      if (e.contains("rationale")) e.at("rationale").get_to(ex.rationale);
      e.at("output").get_to(ex.output);
      s.exemplars.push_back(std::move(ex));
    }
  }
}

InstructionSet load_instruction_set(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::IoError, "cannot open instruction set " + path.string());
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  require(!j.is_discarded(), ErrorKind::SchemaViolation,
          "instruction set is not valid JSON: " + path.string());
  InstructionSet s = j.get<InstructionSet>();
  for (const Exemplar& e : s.exemplars)
    require(!e.output.empty(), ErrorKind::SchemaViolation,
            "instruction set " + s.id + " has an exemplar with empty output");
  return s;
}

void save_instruction_set(const std::filesystem::path& path, const InstructionSet& s) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  require(out.good(), ErrorKind::IoError, "cannot write instruction set " + path.string());
  out << nlohmann::json(s).dump(2) << "\n";
}

void check_render_safe(const std::string& text, const char* what) {
  require(text.find("\n\n") == std::string::npos, ErrorKind::RenderCollision,
          std::string(what) + " contains a blank line, which is the segment delimiter");
  size_t line_start = 0;
  while (line_start <= text.size()) {
    size_t line_end = text.find('\n', line_start);
    if (line_end == std::string::npos) line_end = text.size();
    for (const char* marker : kMarkers) {
      size_t n = std::string::traits_type::length(marker);
      if (line_end - line_start >= n && text.compare(line_start, n, marker) == 0)
        raise(ErrorKind::RenderCollision,
              std::string(what) + " contains a line starting with the scaffold marker \"" +
                  marker + "\"");
    }
    if (line_end == text.size()) break;
    line_start = line_end + 1;
  }
}

RenderedPrompt render_reasoning_prompt(const InstructionSet& iset, const std::string& input) {
  require(iset.role == Role::Reasoning, ErrorKind::RoleMismatch,
          "instruction set " + iset.id + " has role " + to_string(iset.role) +
              ", expected reasoning");
  check_render_safe(iset.instruction, "instruction");
  check_render_safe(input, "input");
  for (const Exemplar& ex : iset.exemplars) validate_exemplar(ex);

  RenderedPrompt p;
  auto mark = [&p](SegmentKind kind, size_t begin) {
    p.segments.push_back({kind, begin, p.text.size()});
  };

  size_t begin = 0;
  if (!iset.instruction.empty()) p.text += iset.instruction + "\n\n";
  mark(SegmentKind::Instruction, begin);

  begin = p.text.size();
  for (const Exemplar& ex : iset.exemplars) {
    p.text += "Input: " + ex.input + "\nReasoning: " + ex.rationale + "\nAnswer: " + ex.output +
              "\n\n";
  }
  mark(SegmentKind::Exemplars, begin);

  begin = p.text.size();
  p.text += "Input: " + input + "\nReasoning:";
  mark(SegmentKind::Input, begin);
  return p;
}

RenderedPrompt render_tuning_input(const InstructionSet& iset, const std::string& input,
                                   const std::optional<std::string>& rationale) {
  require(iset.role == Role::Tuning, ErrorKind::RoleMismatch,
          "instruction set " + iset.id + " has role " + to_string(iset.role) +
              ", expected tuning");
  check_render_safe(iset.instruction, "instruction");
  check_render_safe(input, "input");
  if (rationale) check_render_safe(*rationale, "rationale");

  RenderedPrompt p;
  auto mark = [&p](SegmentKind kind, size_t begin) {
    p.segments.push_back({kind, begin, p.text.size()});
  };

  size_t begin = 0;
  if (!iset.instruction.empty()) p.text += iset.instruction + "\n\n";
  mark(SegmentKind::Instruction, begin);

  begin = p.text.size();
  p.text += "Input: " + input;
  mark(SegmentKind::Input, begin);

  begin = p.text.size();
  if (rationale) p.text += "\nRationale: " + *rationale;
  mark(SegmentKind::Rationale, begin);

  p.text += "\nAnswer:";
  p.segments.back().end = p.text.size();
  return p;
}

}  // namespace fiat
