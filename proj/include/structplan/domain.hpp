#pragma once

#include <array>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "structplan/errors.hpp"

namespace structplan {

// Planning horizon: six waypoints at 0.5 s, so the 1 s / 2 s / 3 s grid lands
// on waypoints 2, 4 and 6.
inline constexpr std::size_t kHorizon = 6;
inline constexpr double kDt = 0.5;

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Vec2&, const Vec2&) = default;
};

inline double norm(Vec2 v) { return std::hypot(v.x, v.y); }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }

/// Wraps an angle into (-pi, pi].
inline double normalize_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  a = std::fmod(a, two_pi);
  if (a <= -std::numbers::pi) a += two_pi;
  if (a > std::numbers::pi) a -= two_pi;
  return a;
}

enum class AgentClass { kVehicle, kPedestrian, kCyclist };
enum class TrafficLight { kRed, kGreen, kYellow, kNone };
enum class NavCommand { kLeft, kStraight, kRight };
enum class Lateral { kLeft, kStraight, kRight };
enum class Longitudinal { kAccelerate, kKeep, kDecelerate, kStop };
enum class QaType { kDescription, kTrafficLight, kVru, kMotion, kPlan, kExplanation };

inline constexpr std::array kAllLaterals = {Lateral::kLeft, Lateral::kStraight, Lateral::kRight};
inline constexpr std::array kAllLongitudinals = {Longitudinal::kAccelerate, Longitudinal::kKeep,
                                                 Longitudinal::kDecelerate, Longitudinal::kStop};
inline constexpr std::array kAllQaTypes = {QaType::kDescription, QaType::kTrafficLight,
                                           QaType::kVru,         QaType::kMotion,
                                           QaType::kPlan,        QaType::kExplanation};

inline constexpr std::size_t kNumLaterals = 3;
inline constexpr std::size_t kNumLongitudinals = 4;
inline constexpr std::size_t kNumMetaActions = kNumLaterals * kNumLongitudinals;

struct MetaAction {
  Lateral lateral = Lateral::kStraight;
  Longitudinal longitudinal = Longitudinal::kKeep;
  friend bool operator==(const MetaAction&, const MetaAction&) = default;
};

/// Joint index: 4 * lateral_rank + longitudinal_rank.
constexpr std::size_t meta_action_index(MetaAction a) {
  return kNumLongitudinals * static_cast<std::size_t>(a.lateral) +
         static_cast<std::size_t>(a.longitudinal);
}

inline MetaAction meta_action_from_index(long long i) {
  if (i < 0 || i >= static_cast<long long>(kNumMetaActions)) {
    throw RangeError("meta-action index " + std::to_string(i) + " outside [0, 12)");
  }
  return {static_cast<Lateral>(i / kNumLongitudinals),
          static_cast<Longitudinal>(i % kNumLongitudinals)};
}

struct EgoState {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;
  double speed = 0.0;
  friend bool operator==(const EgoState&, const EgoState&) = default;
};

/// Fixed-length future polyline in the ego frame (x forward, y left).
struct Trajectory {
  std::vector<Vec2> waypoints;

  /// Per-step speeds from consecutive displacements; the first step is
  /// measured from the origin of the trajectory's frame.
  std::vector<double> speeds(Vec2 origin = {}) const {
    std::vector<double> out;
    out.reserve(waypoints.size());
    Vec2 prev = origin;
    for (const auto& w : waypoints) {
      out.push_back(norm(w - prev) / kDt);
      prev = w;
    }
    return out;
  }

  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

struct AgentState {
  long long id = 0;
  AgentClass cls = AgentClass::kVehicle;
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;
  double speed = 0.0;
  double length = 4.5;
  double width = 1.9;
  std::vector<Vec2> future;
  friend bool operator==(const AgentState&, const AgentState&) = default;
};

struct Scene {
  std::string scene_id;
  EgoState ego;
  std::vector<AgentState> agents;
  TrafficLight traffic_light = TrafficLight::kNone;
  NavCommand nav_command = NavCommand::kStraight;
  Trajectory ego_future;
  friend bool operator==(const Scene&, const Scene&) = default;
};

struct QaRecord {
  std::string scene_id;
  QaType qa_type = QaType::kDescription;
  std::string question;
  std::string answer;
  friend bool operator==(const QaRecord&, const QaRecord&) = default;
};

// ---------------------------------------------------------------------------
// Vocabulary spellings. Wire names are lowercase; meta-action words are the
// capitalized forms used in QA answers.

inline std::string_view to_string(AgentClass c) {
  switch (c) {
    case AgentClass::kVehicle: return "vehicle";
    case AgentClass::kPedestrian: return "pedestrian";
    case AgentClass::kCyclist: return "cyclist";
  }
  return "vehicle";
}

inline std::string_view to_string(TrafficLight t) {
  switch (t) {
    case TrafficLight::kRed: return "red";
    case TrafficLight::kGreen: return "green";
    case TrafficLight::kYellow: return "yellow";
    case TrafficLight::kNone: return "none";
  }
  return "none";
}

inline std::string_view to_string(NavCommand n) {
  switch (n) {
    case NavCommand::kLeft: return "left";
    case NavCommand::kStraight: return "straight";
    case NavCommand::kRight: return "right";
  }
  return "straight";
}

inline std::string_view to_string(Lateral l) {
  switch (l) {
    case Lateral::kLeft: return "Left";
    case Lateral::kStraight: return "Straight";
    case Lateral::kRight: return "Right";
  }
  return "Straight";
}

inline std::string_view to_string(Longitudinal l) {
  switch (l) {
    case Longitudinal::kAccelerate: return "Accelerate";
    case Longitudinal::kKeep: return "Keep";
    case Longitudinal::kDecelerate: return "Decelerate";
    case Longitudinal::kStop: return "Stop";
  }
  return "Keep";
}

inline std::string_view to_string(QaType q) {
  switch (q) {
    case QaType::kDescription: return "description";
    case QaType::kTrafficLight: return "traffic_light";
    case QaType::kVru: return "vru";
    case QaType::kMotion: return "motion";
    case QaType::kPlan: return "plan";
    case QaType::kExplanation: return "explanation";
  }
  return "description";
}

inline std::string to_string(MetaAction a) {
  return std::string(to_string(a.lateral)) + ", " + std::string(to_string(a.longitudinal));
}

template <class Enum, std::size_t N>
std::optional<Enum> parse_enum(std::string_view word, const std::array<Enum, N>& values) {
  for (Enum v : values) {
    if (to_string(v) == word) return v;
  }
  return std::nullopt;
}

inline constexpr std::array kAllAgentClasses = {AgentClass::kVehicle, AgentClass::kPedestrian,
                                                AgentClass::kCyclist};
inline constexpr std::array kAllTrafficLights = {TrafficLight::kRed, TrafficLight::kGreen,
                                                 TrafficLight::kYellow, TrafficLight::kNone};
inline constexpr std::array kAllNavCommands = {NavCommand::kLeft, NavCommand::kStraight,
                                               NavCommand::kRight};

/// Parses "<Lateral>, <Longitudinal>" as written in plan answers.
inline std::optional<MetaAction> parse_meta_action(std::string_view text) {
  const auto comma = text.find(", ");
  if (comma == std::string_view::npos) return std::nullopt;
  auto lat = parse_enum(text.substr(0, comma), kAllLaterals);
  auto lon = parse_enum(text.substr(comma + 2), kAllLongitudinals);
  if (!lat || !lon) return std::nullopt;
  return MetaAction{*lat, *lon};
}

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

inline bool is_vru(AgentClass c) { return c != AgentClass::kVehicle; }

// ---------------------------------------------------------------------------

namespace detail {
inline bool finite(Vec2 v) { return std::isfinite(v.x) && std::isfinite(v.y); }
}  // namespace detail

/// Checks every scene invariant; returns one human-readable line per violation.
inline std::vector<std::string> validate_scene(const Scene& scene) {
  std::vector<std::string> out;
  if (scene.scene_id.empty()) out.emplace_back("scene_id: empty");

  const auto& ego = scene.ego;
  if (!std::isfinite(ego.x) || !std::isfinite(ego.y) || !std::isfinite(ego.heading) ||
      !std::isfinite(ego.speed)) {
    out.emplace_back("ego: non-finite state");
  } else {
    if (ego.x != 0.0 || ego.y != 0.0 || ego.heading != 0.0) {
      out.emplace_back("ego: pose must be the frame origin (x = y = heading = 0)");
    }
    if (ego.speed < 0.0) out.emplace_back("ego: speed must be >= 0");
  }

  if (scene.ego_future.waypoints.size() != kHorizon) {
    out.push_back("ego_future: waypoint count " +
                  std::to_string(scene.ego_future.waypoints.size()) + " != " +
                  std::to_string(kHorizon));
  }
  for (const auto& w : scene.ego_future.waypoints) {
    if (!detail::finite(w)) {
      out.emplace_back("ego_future: non-finite coordinate");
      break;
    }
  }

  std::vector<long long> seen_ids;
  for (const auto& a : scene.agents) {
    const std::string tag = "agent " + std::to_string(a.id) + ": ";
    for (long long id : seen_ids) {
      if (id == a.id) {
        out.push_back(tag + "duplicate id");
        break;
      }
    }
    seen_ids.push_back(a.id);
    if (!(a.length > 0.0)) out.push_back(tag + "length must be > 0");
    if (!(a.width > 0.0)) out.push_back(tag + "width must be > 0");
    if (!std::isfinite(a.x) || !std::isfinite(a.y) || !std::isfinite(a.heading) ||
        !std::isfinite(a.speed)) {
      out.push_back(tag + "non-finite state");
    }
    if (a.speed < 0.0) out.push_back(tag + "speed must be >= 0");
    if (a.future.size() != kHorizon) {
      out.push_back(tag + "future waypoint count " + std::to_string(a.future.size()) + " != " +
                    std::to_string(kHorizon));
    }
    for (const auto& w : a.future) {
      if (!detail::finite(w)) {
        out.push_back(tag + "non-finite future coordinate");
        break;
      }
    }
  }
  return out;
}

}  // namespace structplan
