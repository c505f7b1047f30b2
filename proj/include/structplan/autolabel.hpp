#pragma once

// Auto-labeling: turns a scene's ground-truth futures and state into the
// ground-truth meta-action plus six planning-oriented QA records.

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "structplan/codec.hpp"
#include "structplan/domain.hpp"
#include "structplan/errors.hpp"

namespace structplan {

struct LabelThresholds {
  double tau_lat = 2.0;  // m
  double dv_acc = 1.0;   // m/s
  double dv_dec = -1.0;  // m/s
  double v_stop = 0.5;   // m/s
};

inline void validate_thresholds(const LabelThresholds& th) {
  if (!(th.tau_lat > 0.0)) throw ConfigError("tau_lat must be > 0");
  if (!(th.dv_acc > 0.0)) throw ConfigError("dv_acc must be > 0");
  if (!(th.dv_dec < 0.0)) throw ConfigError("dv_dec must be < 0");
  if (!(th.v_stop > 0.0)) throw ConfigError("v_stop must be > 0");
}

/// Lateral decision from the final lateral offset; longitudinal decision from
/// the speed change between the first step and the last, with priority
/// Stop > Accelerate > Decelerate > Keep. The initial speed is estimated from
/// the first waypoint displacement. `origin` is the start of the trajectory
/// in the frame its waypoints are expressed in.
inline MetaAction derive_meta_action(const Trajectory& traj, const LabelThresholds& th = {},
                                     Vec2 origin = {}) {
  if (traj.waypoints.empty()) return {Lateral::kStraight, Longitudinal::kKeep};
  const auto speeds = traj.speeds(origin);
  const double v0 = speeds.front();
  const double v_end = speeds.back();
  const double y_end = traj.waypoints.back().y - origin.y;

  MetaAction a;
  if (y_end > th.tau_lat) {
    a.lateral = Lateral::kLeft;
  } else if (y_end < -th.tau_lat) {
    a.lateral = Lateral::kRight;
  } else {
    a.lateral = Lateral::kStraight;
  }

  const double dv = v_end - v0;
  if (v_end < th.v_stop) {
    a.longitudinal = Longitudinal::kStop;
  } else if (dv >= th.dv_acc) {
    a.longitudinal = Longitudinal::kAccelerate;
  } else if (dv <= th.dv_dec) {
    a.longitudinal = Longitudinal::kDecelerate;
  } else {
    a.longitudinal = Longitudinal::kKeep;
  }
  return a;
}

/// An agent's future re-expressed in its own initial frame (origin at its
/// position, x along its heading).
inline Trajectory agent_future_in_own_frame(const AgentState& a) {
  const double c = std::cos(a.heading), s = std::sin(a.heading);
  Trajectory t;
  t.waypoints.reserve(a.future.size());
  for (const auto& p : a.future) {
    const double dx = p.x - a.x, dy = p.y - a.y;
    t.waypoints.push_back({c * dx + s * dy, -s * dx + c * dy});
  }
  return t;
}

// ---------------------------------------------------------------------------
// Questions (bit-exact wire strings).

inline constexpr std::string_view kQuestionDescription =
    "Describe the driving scene, including the traffic conditions, the traffic light, "
    "vulnerable road users and the road type.";
inline constexpr std::string_view kQuestionTrafficLight =
    "What is the state of the traffic light ahead?";
inline constexpr std::string_view kQuestionVru =
    "Which vulnerable road users are around the ego vehicle, and where are they?";
inline constexpr std::string_view kQuestionMotion =
    "What will the vehicles near the ego vehicle do next?";
inline constexpr std::string_view kQuestionPlan =
    "What should the ego vehicle do next? Answer with a lateral and a longitudinal meta-action.";
inline constexpr std::string_view kQuestionExplanation =
    "Why should the ego vehicle take this action?";

inline std::string_view question_for(QaType t) {
  switch (t) {
    case QaType::kDescription: return kQuestionDescription;
    case QaType::kTrafficLight: return kQuestionTrafficLight;
    case QaType::kVru: return kQuestionVru;
    case QaType::kMotion: return kQuestionMotion;
    case QaType::kPlan: return kQuestionPlan;
    case QaType::kExplanation: return kQuestionExplanation;
  }
  return kQuestionDescription;
}

namespace label_detail {

inline QaRecord make(const Scene& s, QaType t, std::string answer) {
  return {s.scene_id, t, std::string(question_for(t)), std::move(answer)};
}

inline std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

inline long long floor_abs(double v) { return static_cast<long long>(std::floor(std::abs(v))); }

// Agents sorted nearest first by Euclidean distance, ties by id.
inline std::vector<const AgentState*> by_distance(const Scene& s, bool (*keep)(const AgentState&)) {
  std::vector<const AgentState*> out;
  for (const auto& a : s.agents) {
    if (keep(a)) out.push_back(&a);
  }
  std::sort(out.begin(), out.end(), [](const AgentState* a, const AgentState* b) {
    const double da = std::hypot(a->x, a->y), db = std::hypot(b->x, b->y);
    if (da != db) return da < db;
    return a->id < b->id;
  });
  return out;
}

}  // namespace label_detail

// Scene attributes shared by the description templates and the training
// targets derived from description answers.
enum class Density { kEmpty, kLight, kBusy };

inline Density density_of(std::size_t agent_count) {
  if (agent_count == 0) return Density::kEmpty;
  if (agent_count <= 3) return Density::kLight;
  return Density::kBusy;
}

inline std::size_t count_vrus(const Scene& s) {
  return static_cast<std::size_t>(
      std::count_if(s.agents.begin(), s.agents.end(), [](const AgentState& a) { return is_vru(a.cls); }));
}

/// Attribute set a description is rendered from.
struct SceneAttributes {
  Density density = Density::kEmpty;
  TrafficLight light = TrafficLight::kNone;
  std::size_t vru_count = 0;
  friend bool operator==(const SceneAttributes&, const SceneAttributes&) = default;
};

inline SceneAttributes scene_attributes(const Scene& s) {
  return {density_of(s.agents.size()), s.traffic_light, count_vrus(s)};
}

/// Canonical description template (variant 0) and two paraphrases used only
/// as held-out references for caption metrics.
inline std::string render_description(const SceneAttributes& at, int variant = 0) {
  std::string out;
  switch (variant) {
    case 0: {
      switch (at.density) {
        case Density::kEmpty: out += "The road is empty."; break;
        case Density::kLight: out += "Traffic is light."; break;
        case Density::kBusy: out += "Traffic is busy."; break;
      }
      if (at.light == TrafficLight::kNone) {
        out += " There is no traffic light.";
      } else {
        out += " The traffic light ahead is " + std::string(to_string(at.light)) + ".";
      }
      if (at.vru_count == 0) {
        out += " No vulnerable road users are nearby.";
      } else if (at.vru_count == 1) {
        out += " There is 1 vulnerable road user nearby.";
      } else {
        out += " There are " + std::to_string(at.vru_count) + " vulnerable road users nearby.";
      }
      out += " The scene is a paved urban road.";
      break;
    }
    case 1: {
      switch (at.density) {
        case Density::kEmpty: out += "There is no other traffic on the road."; break;
        case Density::kLight: out += "There is light traffic around the ego vehicle."; break;
        case Density::kBusy: out += "There is busy traffic around the ego vehicle."; break;
      }
      if (at.light == TrafficLight::kNone) {
        out += " No traffic light is visible ahead.";
      } else {
        out += " A " + std::string(to_string(at.light)) + " traffic light is visible ahead.";
      }
      if (at.vru_count == 0) {
        out += " There are no pedestrians or cyclists.";
      } else {
        out += " There are " + std::to_string(at.vru_count) + " pedestrians or cyclists nearby.";
      }
      out += " The ego vehicle drives on a paved urban road.";
      break;
    }
    default: {
      out += "The ego vehicle is on a paved urban road";
      switch (at.density) {
        case Density::kEmpty: out += " with no other road users."; break;
        case Density::kLight: out += " with light traffic."; break;
        case Density::kBusy: out += " with busy traffic."; break;
      }
      if (at.light == TrafficLight::kNone) {
        out += " There is no traffic light ahead.";
      } else {
        out += " The traffic light is " + std::string(to_string(at.light)) + ".";
      }
      if (at.vru_count == 0) {
        out += " No vulnerable road users are present.";
      } else {
        out += " " + std::to_string(at.vru_count) + " vulnerable road users are present.";
      }
      break;
    }
  }
  return out;
}

/// Parses a canonical (variant 0) description back into its attributes.
inline std::optional<SceneAttributes> parse_description(std::string_view text) {
  SceneAttributes at;
  if (text.starts_with("The road is empty.")) {
    at.density = Density::kEmpty;
  } else if (text.starts_with("Traffic is light.")) {
    at.density = Density::kLight;
  } else if (text.starts_with("Traffic is busy.")) {
    at.density = Density::kBusy;
  } else {
    return std::nullopt;
  }
  at.light = TrafficLight::kNone;
  for (TrafficLight t : {TrafficLight::kRed, TrafficLight::kGreen, TrafficLight::kYellow}) {
    const std::string clause = "The traffic light ahead is " + std::string(to_string(t)) + ".";
    if (text.find(clause) != std::string_view::npos) at.light = t;
  }
  if (text.find("No vulnerable road users") != std::string_view::npos) {
    at.vru_count = 0;
  } else if (text.find("There is 1 vulnerable") != std::string_view::npos) {
    at.vru_count = 1;
  } else {
    const auto pos = text.find("There are ");
    if (pos == std::string_view::npos) return std::nullopt;
    at.vru_count = static_cast<std::size_t>(std::atoi(std::string(text.substr(pos + 10)).c_str()));
  }
  return at;
}

inline QaRecord make_description_qa(const Scene& s) {
  return label_detail::make(s, QaType::kDescription, render_description(scene_attributes(s)));
}

inline QaRecord make_traffic_light_qa(const Scene& s) {
  return label_detail::make(s, QaType::kTrafficLight, std::string(to_string(s.traffic_light)));
}

inline QaRecord make_vru_qa(const Scene& s) {
  using namespace label_detail;
  const auto vrus = by_distance(s, [](const AgentState& a) { return is_vru(a.cls); });
  if (vrus.empty()) return make(s, QaType::kVru, "none");
  std::vector<std::string> parts;
  for (const AgentState* a : vrus) {
    parts.push_back(std::string(to_string(a->cls)) + " " + std::to_string(floor_abs(a->x)) + " m " +
                    (a->x >= 0.0 ? "ahead" : "behind") + " and " + std::to_string(floor_abs(a->y)) +
                    " m " + (a->y >= 0.0 ? "left" : "right"));
  }
  return make(s, QaType::kVru, join(parts, "; "));
}

inline constexpr double kMotionRange = 30.0;

/// Vehicles within 30 m, nearest first, each with the meta-action of its own
/// ground-truth future.
inline std::vector<std::pair<const AgentState*, MetaAction>> vehicle_intentions(
    const Scene& s, const LabelThresholds& th = {}) {
  using namespace label_detail;
  const auto vehicles = by_distance(s, [](const AgentState& a) {
    return a.cls == AgentClass::kVehicle && std::hypot(a.x, a.y) <= kMotionRange;
  });
  std::vector<std::pair<const AgentState*, MetaAction>> out;
  for (const AgentState* a : vehicles) {
    out.emplace_back(a, derive_meta_action(agent_future_in_own_frame(*a), th));
  }
  return out;
}

inline QaRecord make_motion_qa(const Scene& s, const LabelThresholds& th = {}) {
  using namespace label_detail;
  const auto intents = vehicle_intentions(s, th);
  if (intents.empty()) return make(s, QaType::kMotion, "none");
  std::vector<std::string> parts;
  for (const auto& [a, act] : intents) {
    parts.push_back("vehicle " + std::to_string(a->id) + ": " + to_string(act));
  }
  return make(s, QaType::kMotion, join(parts, "; "));
}

inline QaRecord make_plan_qa(const Scene& s, const LabelThresholds& th = {}) {
  return label_detail::make(s, QaType::kPlan, to_string(derive_meta_action(s.ego_future, th)));
}

/// Nearest agent inside the ego corridor ahead (|y| <= 2.5 m, 0 < x <= 30 m),
/// by longitudinal distance, ties by id.
inline const AgentState* nearest_obstacle_ahead(const Scene& s) {
  const AgentState* best = nullptr;
  for (const auto& a : s.agents) {
    if (a.x <= 0.0 || a.x > 30.0 || std::abs(a.y) > 2.5) continue;
    if (!best || a.x < best->x || (a.x == best->x && a.id < best->id)) best = &a;
  }
  return best;
}

inline QaRecord make_explanation_qa(const Scene& s, MetaAction action) {
  using namespace label_detail;
  const AgentState* obstacle = nearest_obstacle_ahead(s);
  const std::string obstacle_words =
      obstacle ? "the " + std::string(to_string(obstacle->cls)) + " " +
                     std::to_string(floor_abs(obstacle->x)) + " m ahead"
               : std::string();
  std::string text;
  switch (action.longitudinal) {
    case Longitudinal::kStop:
      if (s.traffic_light == TrafficLight::kRed) {
        text = "The ego vehicle is stopping because the traffic light ahead is red.";
      } else if (obstacle) {
        text = "The ego vehicle is stopping because " + obstacle_words + " blocks its path.";
      }
      break;
    case Longitudinal::kDecelerate:
      if (obstacle && is_vru(obstacle->cls) && obstacle->x <= 15.0) {
        text = "The ego vehicle is decelerating to yield to " + obstacle_words + ".";
      } else if (s.traffic_light == TrafficLight::kYellow) {
        text = "The ego vehicle is decelerating because the traffic light ahead is yellow.";
      } else if (obstacle) {
        text = "The ego vehicle is decelerating to keep a safe distance from " + obstacle_words + ".";
      }
      break;
    case Longitudinal::kAccelerate:
      if (s.traffic_light == TrafficLight::kGreen && !obstacle) {
        text = "The ego vehicle is accelerating because the traffic light ahead is green and the "
               "road ahead is clear.";
      }
      break;
    case Longitudinal::kKeep:
      break;
  }
  if (text.empty()) {
    static constexpr std::array lon_words = {"accelerate", "keep its speed", "decelerate", "stop"};
    static constexpr std::array lat_words = {"turn left", "go straight", "turn right"};
    static constexpr std::array nav_words = {"turn left", "go straight", "turn right"};
    text = "The ego vehicle will " +
           std::string(lon_words[static_cast<std::size_t>(action.longitudinal)]) + " and " +
           lat_words[static_cast<std::size_t>(action.lateral)] +
           ", following the navigation command to " +
           nav_words[static_cast<std::size_t>(s.nav_command)] + (obstacle ? "" : " on a clear road") +
           ".";
  }
  return make(s, QaType::kExplanation, std::move(text));
}

/// All six QA records for one scene in canonical type order.
inline std::array<QaRecord, 6> label_scene(const Scene& s, const LabelThresholds& th = {}) {
  const MetaAction gt = derive_meta_action(s.ego_future, th);
  return {make_description_qa(s), make_traffic_light_qa(s), make_vru_qa(s),
          make_motion_qa(s, th),  make_plan_qa(s, th),      make_explanation_qa(s, gt)};
}

struct LabelSummary {
  std::map<std::string, std::size_t> records_per_type;
};

/// Reads scene JSONL line by line. Blank lines are skipped; any decode failure
/// is rethrown with the 1-based line number.
inline std::vector<Scene> read_scenes(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open scenes file '" + path + "'");
  std::vector<Scene> scenes;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      scenes.push_back(decode_scene(line));
    } catch (const SchemaError& e) {
      throw SchemaError(e.field(), path + " line " + std::to_string(lineno) + ": " + e.what());
    } catch (const ParseError& e) {
      throw ParseError(path + " line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return scenes;
}

inline std::vector<QaRecord> read_qas(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open QA file '" + path + "'");
  std::vector<QaRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(decode_qa(line));
    } catch (const SchemaError& e) {
      throw SchemaError(e.field(), path + " line " + std::to_string(lineno) + ": " + e.what());
    } catch (const ParseError& e) {
      throw ParseError(path + " line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline LabelSummary label_dataset(const std::string& scenes_path, const std::string& out_path,
                                  const LabelThresholds& th = {}) {
  validate_thresholds(th);
  const auto scenes = read_scenes(scenes_path);
  LabelSummary summary;
  for (QaType t : kAllQaTypes) summary.records_per_type[std::string(to_string(t))] = 0;

  std::string buffer;
  for (const auto& s : scenes) {
    for (const auto& rec : label_scene(s, th)) {
      buffer += encode_record(rec);
      buffer += '\n';
      ++summary.records_per_type[std::string(to_string(rec.qa_type))];
    }
  }
  std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write QA file '" + out_path + "'");
  out << buffer;
  if (!out) throw IoError("write failed for '" + out_path + "'");
  return summary;
}

}  // namespace structplan
