#include "procua/action.hpp"

#include <cmath>
#include <sstream>

#include "json.hpp"

namespace procua {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

constexpr std::string_view kThinkOpen = "<think>";
constexpr std::string_view kThinkClose = "</think>";
constexpr std::string_view kAnswerOpen = "<answer>";
constexpr std::string_view kAnswerClose = "</answer>";

bool is_scroll_direction(std::string_view v) {
  return v == "up" || v == "down" || v == "left" || v == "right";
}

bool in_viewport(const Point& p) {
  return p.x >= 0 && p.x < kViewportWidth && p.y >= 0 && p.y < kViewportHeight;
}

// Absent, null and the appendix's literal "none" all mean "no value".
bool is_absent(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return true;
  return it->is_string() && it->get_ref<const std::string&>() == "none";
}

std::optional<Point> read_point(const json& v) {
  if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
    return std::nullopt;
  Point p{v[0].get<double>(), v[1].get<double>()};
  if (!std::isfinite(p.x) || !std::isfinite(p.y)) return std::nullopt;
  return p;
}

ordered_json write_coord(double c) {
  if (c == std::floor(c) && std::abs(c) < 1e15) return static_cast<std::int64_t>(c);
  return c;
}

ParseError schema_error(std::string detail) {
  return {ParseErrorKind::SchemaViolation, std::move(detail)};
}

}  // namespace

std::string_view wire_name(ActionType type) {
  switch (type) {
    case ActionType::left_click: return "left_click";
    case ActionType::double_click: return "double_click";
    case ActionType::right_click: return "right_click";
    case ActionType::mouse_move: return "mouse_move";
    case ActionType::left_click_drag: return "left_click_drag";
    case ActionType::scroll: return "scroll";
    case ActionType::type_text: return "type";
    case ActionType::hotkey: return "hotkey";
    case ActionType::wait: return "wait";
    case ActionType::goback: return "goback";
    case ActionType::finished: return "finished";
  }
  return "";
}

std::optional<ActionType> action_type_from_wire(std::string_view name) {
  for (ActionType t : kAllActionTypes)
    if (wire_name(t) == name) return t;
  return std::nullopt;
}

bool requires_point(ActionType type) {
  switch (type) {
    case ActionType::left_click:
    case ActionType::double_click:
    case ActionType::right_click:
    case ActionType::mouse_move:
    case ActionType::left_click_drag:
    case ActionType::scroll:
      return true;
    default:
      return false;
  }
}

bool requires_value(ActionType type) {
  return type == ActionType::type_text || type == ActionType::hotkey ||
         type == ActionType::finished || type == ActionType::scroll;
}

bool satisfies_schema(const Action& a) {
  if (requires_point(a.action_type) && !a.point_2d) return false;
  if (!allows_point(a.action_type) && a.point_2d) return false;
  if (requires_end_point(a.action_type) != a.point_2d_end.has_value()) return false;
  if (requires_value(a.action_type) != a.value.has_value()) return false;
  if (a.point_2d && !in_viewport(*a.point_2d)) return false;
  if (a.point_2d_end && !in_viewport(*a.point_2d_end)) return false;
  if (a.action_type == ActionType::scroll && !is_scroll_direction(*a.value)) return false;
  return true;
}

const char* to_string(ParseErrorKind kind) {
  switch (kind) {
    case ParseErrorKind::MissingTags: return "MissingTags";
    case ParseErrorKind::MalformedAnswer: return "MalformedAnswer";
    case ParseErrorKind::UnknownActionType: return "UnknownActionType";
    case ParseErrorKind::SchemaViolation: return "SchemaViolation";
  }
  return "Unknown";
}

ParseResult parse_output(std::string_view text) {
  const auto t0 = text.find(kThinkOpen);
  if (t0 == std::string_view::npos) return ParseError{ParseErrorKind::MissingTags, "no <think>"};
  const auto think_begin = t0 + kThinkOpen.size();
  const auto t1 = text.find(kThinkClose, think_begin);
  if (t1 == std::string_view::npos) return ParseError{ParseErrorKind::MissingTags, "no </think>"};
  const auto a0 = text.find(kAnswerOpen, t1 + kThinkClose.size());
  if (a0 == std::string_view::npos) return ParseError{ParseErrorKind::MissingTags, "no <answer>"};
  const auto answer_begin = a0 + kAnswerOpen.size();
  const auto a1 = text.find(kAnswerClose, answer_begin);
  if (a1 == std::string_view::npos) return ParseError{ParseErrorKind::MissingTags, "no </answer>"};

  const std::string_view payload = text.substr(answer_begin, a1 - answer_begin);
  json obj = json::parse(payload.begin(), payload.end(), nullptr, /*allow_exceptions=*/false);
  if (obj.is_discarded() || !obj.is_object())
    return ParseError{ParseErrorKind::MalformedAnswer, "answer is not a JSON object"};

  auto type_it = obj.find("action_type");
  if (type_it == obj.end() || !type_it->is_string()) return schema_error("missing action_type");
  const auto type = action_type_from_wire(type_it->get_ref<const std::string&>());
  if (!type)
    return ParseError{ParseErrorKind::UnknownActionType, type_it->get<std::string>()};

  Action action;
  action.action_type = *type;

  if (!is_absent(obj, "description")) {
    const json& d = obj["description"];
    if (!d.is_string()) return schema_error("description must be a string");
    action.description = d.get<std::string>();
  }

  if (requires_value(*type)) {
    auto it = obj.find("value");
    if (it == obj.end() || !it->is_string()) return schema_error("value required");
    action.value = it->get<std::string>();
    if (*type == ActionType::scroll && !is_scroll_direction(*action.value))
      return schema_error("scroll direction must be up/down/left/right");
  } else if (!is_absent(obj, "value")) {
    return schema_error("value not allowed for this action");
  }

  if (requires_point(*type) || (allows_point(*type) && !is_absent(obj, "point_2d"))) {
    auto it = obj.find("point_2d");
    if (it == obj.end()) return schema_error("point_2d required");
    action.point_2d = read_point(*it);
    if (!action.point_2d || !in_viewport(*action.point_2d))
      return schema_error("point_2d must be [x, y] inside the viewport");
  } else if (!is_absent(obj, "point_2d")) {
    return schema_error("point_2d not allowed for this action");
  }

  if (requires_end_point(*type)) {
    auto it = obj.find("point_2d_end");
    if (it == obj.end()) return schema_error("point_2d_end required");
    action.point_2d_end = read_point(*it);
    if (!action.point_2d_end || !in_viewport(*action.point_2d_end))
      return schema_error("point_2d_end must be [x, y] inside the viewport");
  } else if (!is_absent(obj, "point_2d_end")) {
    return schema_error("point_2d_end not allowed for this action");
  }

  return StructuredOutput{std::string(text.substr(think_begin, t1 - think_begin)),
                          std::move(action)};
}

std::string serialize_action(const Action& a) {
  ordered_json obj;
  obj["action_type"] = std::string(wire_name(a.action_type));
  obj["description"] = a.description;
  if (a.value) obj["value"] = *a.value;
  if (a.point_2d) obj["point_2d"] = {write_coord(a.point_2d->x), write_coord(a.point_2d->y)};
  if (a.point_2d_end)
    obj["point_2d_end"] = {write_coord(a.point_2d_end->x), write_coord(a.point_2d_end->y)};
  std::string text = obj.dump(-1, ' ', false, ordered_json::error_handler_t::replace);
  // '<' only ever occurs inside JSON strings, where < is an equivalent
  // spelling; this keeps payloads from forming a closing tag.
  std::string escaped;
  escaped.reserve(text.size());
  for (char c : text) {
    if (c == '<')
      escaped += "\\u003c";
    else
      escaped += c;
  }
  return escaped;
}

std::string serialize_output(const StructuredOutput& out) {
  std::string text;
  text.reserve(out.think.size() + 128);
  text += kThinkOpen;
  text += out.think;
  text += kThinkClose;
  text += kAnswerOpen;
  text += serialize_action(out.answer);
  text += kAnswerClose;
  return text;
}

std::string action_code(const Action& a) {
  std::ostringstream os;
  auto coord = [&os](const Point& p) { os << write_coord(p.x).dump() << ", " << write_coord(p.y).dump(); };
  auto quoted = [](const std::string& s) {
    return json(s).dump(-1, ' ', false, json::error_handler_t::replace);
  };
  os << wire_name(a.action_type) << '(';
  if (a.point_2d) coord(*a.point_2d);
  if (a.point_2d_end) {
    os << ", ";
    coord(*a.point_2d_end);
  }
  if (a.value) {
    if (a.point_2d) os << ", ";
    os << quoted(*a.value);
  }
  os << ')';
  return os.str();
}

}  // namespace procua
