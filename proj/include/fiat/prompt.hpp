#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace fiat {

enum class Role { Reasoning, Tuning };
std::string to_string(Role role);
Role role_from_string(const std::string& s);

struct Exemplar {
  std::string input;
  std::string rationale;  // may be empty
  std::string output;     // never empty
};

struct InstructionSet {
  std::string id;
  Role role = Role::Tuning;
  std::string instruction;
  std::vector<Exemplar> exemplars;
};

void to_json(nlohmann::json& j, const InstructionSet& s);
void from_json(const nlohmann::json& j, InstructionSet& s);
InstructionSet load_instruction_set(const std::filesystem::path& path);
void save_instruction_set(const std::filesystem::path& path, const InstructionSet& s);

enum class SegmentKind { Instruction, Exemplars, Input, Rationale };

struct Segment {
  SegmentKind kind;
  size_t begin;
  size_t end;  // half-open byte range
};

struct RenderedPrompt {
  std::string text;
  std::vector<Segment> segments;  // disjoint, in order, covering the text
};

/// Scaffold markers are reserved: embedded texts may not contain blank lines
/// or lines starting with one of them, otherwise rendering would not be
/// injective. Violations raise RenderCollision.
void check_render_safe(const std::string& text, const char* what);

/// instruction, blank line, exemplar blocks ("Input:/Reasoning:/Answer:"),
/// then "Input: x\nReasoning:" awaiting the model's reasoning.
RenderedPrompt render_reasoning_prompt(const InstructionSet& iset, const std::string& input);

/// instruction, blank line, "Input: x", optional "Rationale: r", "Answer:".
/// An empty instruction renders as an empty leading segment (no separator).
RenderedPrompt render_tuning_input(const InstructionSet& iset, const std::string& input,
                                   const std::optional<std::string>& rationale);

}  // namespace fiat
