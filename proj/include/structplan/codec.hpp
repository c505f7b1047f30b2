#pragma once

// JSONL codec for scenes and QA records. Floats are written with exactly six
// decimals; values that are already on the 1e-6 grid (see quantize6) therefore
// round-trip bit-exactly.

#include <cmath>
#include <cstdio>
#include <string>
#include <string_view>
#include <variant>

#include <nlohmann/json.hpp>

#include "structplan/domain.hpp"
#include "structplan/errors.hpp"

namespace structplan {

/// Rounds to the nearest multiple of 1e-6 (the wire precision).
inline double quantize6(double v) {
  const double q = std::round(v * 1e6) / 1e6;
  return q == 0.0 ? 0.0 : q;
}

namespace codec_detail {

inline void append_number(std::string& out, double v, std::string_view field) {
  if (!std::isfinite(v)) {
    throw SerializationError("non-finite value in field '" + std::string(field) + "'");
  }
  char buf[64];
  const int n = std::snprintf(buf, sizeof buf, "%.6f", v);
  if (n <= 0 || n >= static_cast<int>(sizeof buf)) {
    throw SerializationError("value out of range in field '" + std::string(field) + "'");
  }
  out.append(buf, static_cast<std::size_t>(n));
}

inline void append_string(std::string& out, std::string_view s) {
  out += nlohmann::json(std::string(s)).dump();
}

inline void append_points(std::string& out, const std::vector<Vec2>& pts, std::string_view field) {
  out += '[';
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (i) out += ',';
    out += '[';
    append_number(out, pts[i].x, field);
    out += ',';
    append_number(out, pts[i].y, field);
    out += ']';
  }
  out += ']';
}

using nlohmann::json;

inline const json& require(const json& obj, const char* field, std::string_view path = {}) {
  const std::string name = path.empty() ? std::string(field) : std::string(path) + "." + field;
  if (!obj.is_object()) throw SchemaError(name, "expected an object holding '" + name + "'");
  auto it = obj.find(field);
  if (it == obj.end()) throw SchemaError(name, "missing field '" + name + "'");
  return *it;
}

inline double number(const json& obj, const char* field, std::string_view path = {}) {
  const json& v = require(obj, field, path);
  if (!v.is_number()) {
    const std::string name = path.empty() ? std::string(field) : std::string(path) + "." + field;
    throw SchemaError(name, "field '" + name + "' must be a number");
  }
  return v.get<double>();
}

inline std::string text(const json& obj, const char* field) {
  const json& v = require(obj, field);
  if (!v.is_string()) throw SchemaError(field, std::string("field '") + field + "' must be a string");
  return v.get<std::string>();
}

template <class Enum, std::size_t N>
Enum enum_field(const json& obj, const char* field, const std::array<Enum, N>& values,
                std::string_view path = {}) {
  const std::string name = path.empty() ? std::string(field) : std::string(path) + "." + field;
  const json& v = require(obj, field, path);
  if (!v.is_string()) throw SchemaError(name, "field '" + name + "' must be a string");
  auto parsed = parse_enum(v.get<std::string>(), values);
  if (!parsed) {
    throw SchemaError(name, "unknown value '" + v.get<std::string>() + "' for field '" + name + "'");
  }
  return *parsed;
}

inline std::vector<Vec2> points(const json& v, const std::string& name) {
  if (!v.is_array()) throw SchemaError(name, "field '" + name + "' must be an array of [x,y]");
  std::vector<Vec2> out;
  out.reserve(v.size());
  for (const auto& p : v) {
    if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number()) {
      throw SchemaError(name, "field '" + name + "' must hold [x,y] number pairs");
    }
    out.push_back({p[0].get<double>(), p[1].get<double>()});
  }
  return out;
}

}  // namespace codec_detail

inline std::string encode_record(const Scene& s) {
  using namespace codec_detail;
  std::string out;
  out.reserve(512 + 256 * s.agents.size());
  out += "{\"scene_id\":";
  append_string(out, s.scene_id);
  out += ",\"ego\":{\"x\":";
  append_number(out, s.ego.x, "ego.x");
  out += ",\"y\":";
  append_number(out, s.ego.y, "ego.y");
  out += ",\"heading\":";
  append_number(out, s.ego.heading, "ego.heading");
  out += ",\"speed\":";
  append_number(out, s.ego.speed, "ego.speed");
  out += "},\"agents\":[";
  for (std::size_t i = 0; i < s.agents.size(); ++i) {
    const auto& a = s.agents[i];
    if (i) out += ',';
    out += "{\"id\":" + std::to_string(a.id) + ",\"class\":";
    append_string(out, to_string(a.cls));
    out += ",\"x\":";
    append_number(out, a.x, "agents.x");
    out += ",\"y\":";
    append_number(out, a.y, "agents.y");
    out += ",\"heading\":";
    append_number(out, a.heading, "agents.heading");
    out += ",\"speed\":";
    append_number(out, a.speed, "agents.speed");
    out += ",\"length\":";
    append_number(out, a.length, "agents.length");
    out += ",\"width\":";
    append_number(out, a.width, "agents.width");
    out += ",\"future\":";
    append_points(out, a.future, "agents.future");
    out += '}';
  }
  out += "],\"traffic_light\":";
  append_string(out, to_string(s.traffic_light));
  out += ",\"nav_command\":";
  append_string(out, to_string(s.nav_command));
  out += ",\"ego_future\":";
  append_points(out, s.ego_future.waypoints, "ego_future");
  out += '}';
  return out;
}

inline std::string encode_record(const QaRecord& q) {
  using namespace codec_detail;
  std::string out = "{\"scene_id\":";
  append_string(out, q.scene_id);
  out += ",\"qa_type\":";
  append_string(out, to_string(q.qa_type));
  out += ",\"question\":";
  append_string(out, q.question);
  out += ",\"answer\":";
  append_string(out, q.answer);
  out += '}';
  return out;
}

namespace codec_detail {

inline Scene scene_from_json(const json& j) {
  Scene s;
  s.scene_id = text(j, "scene_id");
  const json& ego = require(j, "ego");
  s.ego = {number(ego, "x", "ego"), number(ego, "y", "ego"), number(ego, "heading", "ego"),
           number(ego, "speed", "ego")};
  const json& agents = require(j, "agents");
  if (!agents.is_array()) throw SchemaError("agents", "field 'agents' must be an array");
  for (const auto& aj : agents) {
    AgentState a;
    const json& id = require(aj, "id", "agents");
    if (!id.is_number_integer()) throw SchemaError("agents.id", "field 'agents.id' must be an integer");
    a.id = id.get<long long>();
    a.cls = enum_field(aj, "class", kAllAgentClasses, "agents");
    a.x = number(aj, "x", "agents");
    a.y = number(aj, "y", "agents");
    a.heading = number(aj, "heading", "agents");
    a.speed = number(aj, "speed", "agents");
    a.length = number(aj, "length", "agents");
    a.width = number(aj, "width", "agents");
    a.future = points(require(aj, "future", "agents"), "agents.future");
    s.agents.push_back(std::move(a));
  }
  s.traffic_light = enum_field(j, "traffic_light", kAllTrafficLights);
  s.nav_command = enum_field(j, "nav_command", kAllNavCommands);
  s.ego_future.waypoints = points(require(j, "ego_future"), "ego_future");

  if (auto violations = validate_scene(s); !violations.empty()) {
    throw SchemaError("scene", "invalid scene '" + s.scene_id + "': " + violations.front());
  }
  return s;
}

inline QaRecord qa_from_json(const json& j) {
  QaRecord q;
  q.scene_id = text(j, "scene_id");
  q.qa_type = enum_field(j, "qa_type", kAllQaTypes);
  q.question = text(j, "question");
  q.answer = text(j, "answer");
  if (q.answer.empty()) throw SchemaError("answer", "field 'answer' must be non-empty");
  return q;
}

inline json parse_line(std::string_view line) {
  try {
    return json::parse(line);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed JSON: ") + e.what());
  }
}

}  // namespace codec_detail

using Record = std::variant<Scene, QaRecord>;

/// Decodes one line; QA records are recognized by their "qa_type" field.
inline Record decode_record(std::string_view line) {
  auto j = codec_detail::parse_line(line);
  if (!j.is_object()) throw SchemaError("", "record must be a JSON object");
  if (j.contains("qa_type")) return codec_detail::qa_from_json(j);
  return codec_detail::scene_from_json(j);
}

inline Scene decode_scene(std::string_view line) {
  auto j = codec_detail::parse_line(line);
  return codec_detail::scene_from_json(j);
}

inline QaRecord decode_qa(std::string_view line) {
  auto j = codec_detail::parse_line(line);
  return codec_detail::qa_from_json(j);
}

}  // namespace structplan
