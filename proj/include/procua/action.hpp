#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <variant>

namespace procua {

inline constexpr int kViewportWidth = 1280;
inline constexpr int kViewportHeight = 720;

enum class ActionType {
  left_click,
  double_click,
  right_click,
  mouse_move,
  left_click_drag,
  scroll,
  type_text,
  hotkey,
  wait,
  goback,
  finished,
};

inline constexpr std::size_t kNumActionTypes = 11;

inline constexpr std::array<ActionType, kNumActionTypes> kAllActionTypes = {
    ActionType::left_click,      ActionType::double_click, ActionType::right_click,
    ActionType::mouse_move,      ActionType::left_click_drag, ActionType::scroll,
    ActionType::type_text,       ActionType::hotkey,       ActionType::wait,
    ActionType::goback,          ActionType::finished,
};

/// Wire name of an action type ("type" for type_text, otherwise the variant name).
std::string_view wire_name(ActionType type);
std::optional<ActionType> action_type_from_wire(std::string_view name);

bool requires_point(ActionType type);
/// type_text may carry a point that focuses the target field before typing.
inline bool allows_point(ActionType type) {
  return requires_point(type) || type == ActionType::type_text;
}
bool requires_value(ActionType type);
inline bool requires_end_point(ActionType type) {
  return type == ActionType::left_click_drag;
}

struct Point {
  double x = 0;
  double y = 0;

  friend bool operator==(const Point&, const Point&) = default;
};

struct Action {
  ActionType action_type = ActionType::wait;
  std::string description;
  std::optional<std::string> value;
  std::optional<Point> point_2d;
  std::optional<Point> point_2d_end;

  friend bool operator==(const Action&, const Action&) = default;
};

/// True when the optional fields agree with the action type.
bool satisfies_schema(const Action& action);

struct StructuredOutput {
  std::string think;
  Action answer;

  friend bool operator==(const StructuredOutput&, const StructuredOutput&) = default;
};

enum class ParseErrorKind {
  MissingTags,
  MalformedAnswer,
  UnknownActionType,
  SchemaViolation,
};

const char* to_string(ParseErrorKind kind);

struct ParseError {
  ParseErrorKind kind;
  std::string detail;
};

class ParseResult {
 public:
  ParseResult(StructuredOutput out) : v_(std::move(out)) {}
  ParseResult(ParseError err) : v_(std::move(err)) {}

  bool ok() const { return std::holds_alternative<StructuredOutput>(v_); }
  explicit operator bool() const { return ok(); }
  const StructuredOutput& value() const { return std::get<StructuredOutput>(v_); }
  const ParseError& error() const { return std::get<ParseError>(v_); }

 private:
  std::variant<StructuredOutput, ParseError> v_;
};

/// Parses `<think>...</think><answer>{json}</answer>`. Never throws.
ParseResult parse_output(std::string_view text);

/// Canonical text form. Requires satisfies_schema(out.answer) and a think
/// text that does not contain "</think>".
std::string serialize_output(const StructuredOutput& out);

/// JSON object text of a single action (the `<answer>` payload).
std::string serialize_action(const Action& action);

/// Short function-call rendering, e.g. `left_click(400, 80)`; used in prompts.
std::string action_code(const Action& action);

}  // namespace procua
