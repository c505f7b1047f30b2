#pragma once

// Deterministic synthetic driving scenes: scripted unicycle kinematics for the
// ego vehicle and surrounding agents, plus scene context (traffic light, lead
// vehicle) correlated with the scripted maneuver.

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "structplan/autolabel.hpp"
#include "structplan/codec.hpp"
#include "structplan/domain.hpp"
#include "structplan/errors.hpp"
#include "structplan/geometry.hpp"
#include "structplan/parallel.hpp"
#include "structplan/rng.hpp"

namespace structplan {

inline constexpr double kEgoLength = 4.6;
inline constexpr double kEgoWidth = 1.85;

enum class Maneuver { kCruise, kAccelerate, kBrakeToStop, kDecelerate, kTurnLeft, kTurnRight, kStopAtLight };

inline constexpr std::array kAllManeuvers = {Maneuver::kCruise,     Maneuver::kAccelerate,
                                             Maneuver::kBrakeToStop, Maneuver::kDecelerate,
                                             Maneuver::kTurnLeft,   Maneuver::kTurnRight,
                                             Maneuver::kStopAtLight};

inline std::string_view to_string(Maneuver m) {
  switch (m) {
    case Maneuver::kCruise: return "cruise";
    case Maneuver::kAccelerate: return "accelerate";
    case Maneuver::kBrakeToStop: return "brake_to_stop";
    case Maneuver::kDecelerate: return "decelerate";
    case Maneuver::kTurnLeft: return "turn_left";
    case Maneuver::kTurnRight: return "turn_right";
    case Maneuver::kStopAtLight: return "stop_at_light";
  }
  return "cruise";
}

struct ManeuverScript {
  Maneuver name = Maneuver::kCruise;
  double curvature = 0.0;      // 1/m, positive turns left
  double target_speed = 0.0;   // m/s
  double initial_speed = 0.0;  // m/s
  double ramp_rate = 3.0;      // m/s^2, speed approaches target at this rate
};

struct Pose {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;
};

inline void validate_script(const ManeuverScript& s) {
  if (s.target_speed < 0.0 || s.initial_speed < 0.0) throw ConfigError("script speeds must be >= 0");
  if (!(s.ramp_rate > 0.0)) throw ConfigError("script ramp_rate must be > 0");
  if (s.name == Maneuver::kTurnLeft && !(s.curvature > 0.0)) {
    throw ConfigError("turn_left requires positive curvature");
  }
  if (s.name == Maneuver::kTurnRight && !(s.curvature < 0.0)) {
    throw ConfigError("turn_right requires negative curvature");
  }
}

/// Integrates a constant-curvature unicycle for kHorizon steps of kDt. At each
/// step the speed moves toward target_speed by at most ramp_rate * dt (never
/// below zero), then heading += v * curvature * dt and the position advances
/// by v * dt along the new heading. The starting speed is script.initial_speed.
inline Trajectory rollout_kinematics(const Pose& start, const ManeuverScript& script) {
  validate_script(script);
  Trajectory t;
  t.waypoints.reserve(kHorizon);
  double x = start.x, y = start.y, h = start.heading, v = script.initial_speed;
  const double max_dv = script.ramp_rate * kDt;
  for (std::size_t k = 0; k < kHorizon; ++k) {
    const double dv = script.target_speed - v;
    v += std::clamp(dv, -max_dv, max_dv);
    v = std::max(v, 0.0);
    h += v * script.curvature * kDt;
    x += v * kDt * std::cos(h);
    y += v * kDt * std::sin(h);
    t.waypoints.push_back({x, y});
  }
  return t;
}

struct SimConfig {
  std::uint64_t seed = 0;
  long long n_scenes = 0;
  long long max_agents = 8;
  double vru_fraction = 0.4;
  double traffic_light_prob = 0.5;
  std::map<std::string, double> maneuver_mix = default_maneuver_mix();

  // Straight-family maneuvers share one third of the mass and each turn gets
  // one third, so the twelve joint meta-actions come out balanced.
  static std::map<std::string, double> default_maneuver_mix() {
    return {{"cruise", 1.0},     {"accelerate", 1.0}, {"brake_to_stop", 0.5}, {"decelerate", 1.0},
            {"turn_left", 4.0},  {"turn_right", 4.0}, {"stop_at_light", 0.5}};
  }
};

inline void validate_config(const SimConfig& cfg) {
  if (cfg.n_scenes < 0) throw ConfigError("n_scenes must be >= 0");
  if (cfg.max_agents < 0) throw ConfigError("max_agents must be >= 0");
  if (!(cfg.vru_fraction >= 0.0 && cfg.vru_fraction <= 1.0)) {
    throw ConfigError("vru_fraction must lie in [0, 1]");
  }
  if (!(cfg.traffic_light_prob >= 0.0 && cfg.traffic_light_prob <= 1.0)) {
    throw ConfigError("traffic_light_prob must lie in [0, 1]");
  }
  double total = 0.0;
  for (const auto& [name, w] : cfg.maneuver_mix) {
    if (!parse_enum(name, kAllManeuvers)) throw ConfigError("unknown maneuver '" + name + "'");
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("maneuver weight for '" + name + "' must be >= 0");
    total += w;
  }
  if (!(total > 0.0)) throw ConfigError("maneuver_mix weights must not all be zero");
}

namespace sim_detail {

inline double quantize_angle(double a) {
  double q = quantize6(normalize_angle(a));
  if (q > std::numbers::pi) q = quantize6(q - 2.0 * std::numbers::pi);
  if (q <= -std::numbers::pi) q = quantize6(q + 2.0 * std::numbers::pi);
  return q;
}

inline Trajectory quantized(Trajectory t) {
  for (auto& w : t.waypoints) w = {quantize6(w.x), quantize6(w.y)};
  return t;
}

inline Maneuver sample_maneuver(Rng& rng, const SimConfig& cfg) {
  double total = 0.0;
  for (Maneuver m : kAllManeuvers) {
    auto it = cfg.maneuver_mix.find(std::string(to_string(m)));
    if (it != cfg.maneuver_mix.end()) total += it->second;
  }
  double u = rng.uniform() * total;
  Maneuver last = Maneuver::kCruise;
  for (Maneuver m : kAllManeuvers) {
    auto it = cfg.maneuver_mix.find(std::string(to_string(m)));
    if (it == cfg.maneuver_mix.end() || it->second <= 0.0) continue;
    last = m;
    if (u < it->second) return m;
    u -= it->second;
  }
  return last;
}

inline MetaAction intended_action(Maneuver m, Rng& rng) {
  switch (m) {
    case Maneuver::kCruise: return {Lateral::kStraight, Longitudinal::kKeep};
    case Maneuver::kAccelerate: return {Lateral::kStraight, Longitudinal::kAccelerate};
    case Maneuver::kBrakeToStop:
    case Maneuver::kStopAtLight: return {Lateral::kStraight, Longitudinal::kStop};
    case Maneuver::kDecelerate: return {Lateral::kStraight, Longitudinal::kDecelerate};
    case Maneuver::kTurnLeft:
    case Maneuver::kTurnRight: {
      const auto lon = static_cast<Longitudinal>(rng.uniform_int(0, 3));
      return {m == Maneuver::kTurnLeft ? Lateral::kLeft : Lateral::kRight, lon};
    }
  }
  return {};
}

inline Maneuver maneuver_for(MetaAction a, Rng& rng) {
  if (a.lateral == Lateral::kLeft) return Maneuver::kTurnLeft;
  if (a.lateral == Lateral::kRight) return Maneuver::kTurnRight;
  switch (a.longitudinal) {
    case Longitudinal::kAccelerate: return Maneuver::kAccelerate;
    case Longitudinal::kKeep: return Maneuver::kCruise;
    case Longitudinal::kDecelerate: return Maneuver::kDecelerate;
    case Longitudinal::kStop: return rng.bernoulli(0.5) ? Maneuver::kBrakeToStop : Maneuver::kStopAtLight;
  }
  return Maneuver::kCruise;
}

/// Samples script parameters meant to realize `intent` with margin against the
/// default label thresholds. Speed scale is 1 for vehicles.
inline ManeuverScript sample_script(Rng& rng, Maneuver m, MetaAction intent) {
  ManeuverScript s;
  s.name = m;
  const bool turning = intent.lateral != Lateral::kStraight;
  switch (intent.longitudinal) {
    case Longitudinal::kKeep:
      s.initial_speed = rng.uniform(6.0, 14.0);
      s.target_speed = s.initial_speed;
      break;
    case Longitudinal::kAccelerate:
      s.initial_speed = rng.uniform(turning ? 3.0 : 1.0, 6.0);
      s.target_speed = s.initial_speed + rng.uniform(3.0, 6.0);
      break;
    case Longitudinal::kDecelerate:
      s.initial_speed = rng.uniform(8.0, 15.0);
      s.target_speed = std::max(2.0, s.initial_speed - rng.uniform(3.0, 6.0));
      break;
    case Longitudinal::kStop:
      s.initial_speed = rng.uniform(turning ? 7.0 : 3.0, 12.0);
      s.target_speed = 0.0;
      s.ramp_rate = std::max(3.0, s.initial_speed / 2.5);
      break;
  }
  if (!turning) {
    s.curvature = rng.uniform(-0.002, 0.002);
  } else {
    // Choose the curvature that sweeps a target heading change over the
    // scripted path length.
    double v = s.initial_speed, path = 0.0;
    for (std::size_t k = 0; k < kHorizon; ++k) {
      v = std::max(0.0, v + std::clamp(s.target_speed - v, -s.ramp_rate * kDt, s.ramp_rate * kDt));
      path += v * kDt;
    }
    const double sweep = rng.uniform(0.6, 1.4);
    const double kappa = std::min(sweep / std::max(path, 1.0), 0.25);
    s.curvature = intent.lateral == Lateral::kLeft ? kappa : -kappa;
  }
  return s;
}

inline OrientedBox ego_box_at(Vec2 p, double heading) { return {p, heading, kEgoLength, kEgoWidth}; }

struct EgoPlan {
  ManeuverScript script;
  Trajectory future;
  std::vector<OrientedBox> boxes;  // step-aligned ego footprints
};

inline std::vector<OrientedBox> footprints(Vec2 start, double heading, const std::vector<Vec2>& pts,
                                           double length, double width) {
  const auto hs = polyline_headings(start, heading, pts);
  std::vector<OrientedBox> out;
  for (std::size_t k = 0; k < pts.size(); ++k) out.push_back({pts[k], hs[k], length, width});
  return out;
}

inline bool conflicts_with_ego(const EgoPlan& ego, const OrientedBox& initial,
                               const std::vector<OrientedBox>& future) {
  // 0.5 m clearance around the ego at the start; exact footprints afterwards.
  if (boxes_overlap(ego_box_at({0.0, 0.0}, 0.0),
                    {initial.center, initial.heading, initial.length + 1.0, initial.width + 1.0})) {
    return true;
  }
  for (std::size_t k = 0; k < future.size() && k < ego.boxes.size(); ++k) {
    if (boxes_overlap(ego.boxes[k], future[k])) return true;
  }
  return false;
}

inline AgentState make_agent(long long id, AgentClass cls, Pose pose, double length, double width,
                             const ManeuverScript& script) {
  AgentState a;
  a.id = id;
  a.cls = cls;
  a.x = quantize6(pose.x);
  a.y = quantize6(pose.y);
  a.heading = quantize_angle(pose.heading);
  a.speed = quantize6(script.initial_speed);
  a.length = quantize6(length);
  a.width = quantize6(width);
  a.future = quantized(rollout_kinematics({a.x, a.y, a.heading}, script)).waypoints;
  return a;
}

}  // namespace sim_detail

/// Generates the scene for `index` from `rng` (expected to be seeded from the
/// config seed and the index).
inline Scene generate_scene(Rng& rng, const SimConfig& cfg, std::uint64_t index) {
  using namespace sim_detail;
  validate_config(cfg);

  Scene scene;
  {
    char id[32];
    std::snprintf(id, sizeof id, "%06llu", static_cast<unsigned long long>(index));
    scene.scene_id = id;
  }

  // Ego maneuver: retry parameter draws until the labeler agrees with the
  // intended action (keeps the action mix balanced).
  const Maneuver maneuver = sample_maneuver(rng, cfg);
  const MetaAction intent = intended_action(maneuver, rng);
  EgoPlan ego;
  for (int attempt = 0; attempt < 64; ++attempt) {
    ego.script = sample_script(rng, maneuver, intent);
    ego.future = quantized(rollout_kinematics({}, ego.script));
    if (derive_meta_action(ego.future) == intent) break;
  }
  ego.boxes = footprints({}, 0.0, ego.future.waypoints, kEgoLength, kEgoWidth);
  scene.ego = {0.0, 0.0, 0.0, quantize6(ego.script.initial_speed)};
  scene.ego_future = ego.future;
  scene.nav_command = maneuver == Maneuver::kTurnLeft    ? NavCommand::kLeft
                      : maneuver == Maneuver::kTurnRight ? NavCommand::kRight
                                                         : NavCommand::kStraight;

  // Context cue for the longitudinal decision.
  enum class Lead { kNone, kStopped, kSlow } lead = Lead::kNone;
  const bool can_place = cfg.max_agents > 0;
  switch (intent.longitudinal) {
    case Longitudinal::kStop:
      if (maneuver == Maneuver::kStopAtLight || !can_place) {
        scene.traffic_light = TrafficLight::kRed;
      } else if (maneuver == Maneuver::kBrakeToStop) {
        lead = Lead::kStopped;
      } else {
        if (rng.bernoulli(0.6)) {
          scene.traffic_light = TrafficLight::kRed;
        } else {
          lead = Lead::kStopped;
        }
      }
      break;
    case Longitudinal::kDecelerate:
      if (!can_place || rng.bernoulli(0.5)) {
        scene.traffic_light = TrafficLight::kYellow;
      } else {
        lead = Lead::kSlow;
      }
      break;
    case Longitudinal::kAccelerate:
    case Longitudinal::kKeep:
      scene.traffic_light = rng.bernoulli(cfg.traffic_light_prob) ? TrafficLight::kGreen : TrafficLight::kNone;
      break;
  }

  long long n_agents = rng.uniform_int(0, cfg.max_agents);
  if (lead != Lead::kNone) n_agents = std::max<long long>(n_agents, 1);
  long long next_id = 1;

  std::vector<OrientedBox> placed;
  auto overlaps_placed = [&](const OrientedBox& b) {
    const OrientedBox padded{b.center, b.heading, b.length + 0.6, b.width + 0.6};
    for (const auto& p : placed) {
      if (boxes_overlap(p, padded)) return true;
    }
    return false;
  };
  auto try_add = [&](AgentState a) {
    const OrientedBox box{{a.x, a.y}, a.heading, a.length, a.width};
    if (std::hypot(a.x, a.y) > 48.0 || overlaps_placed(box)) return false;
    const auto fut = footprints({a.x, a.y}, a.heading, a.future, a.length, a.width);
    if (conflicts_with_ego(ego, box, fut)) return false;
    placed.push_back(box);
    scene.agents.push_back(std::move(a));
    return true;
  };

  if (lead != Lead::kNone) {
    const double length = rng.uniform(4.0, 5.2), width = rng.uniform(1.7, 2.1);
    ManeuverScript s;
    s.name = Maneuver::kCruise;
    if (lead == Lead::kSlow) {
      s.initial_speed = std::max(1.0, ego.script.target_speed * rng.uniform(0.6, 0.9));
      s.target_speed = s.initial_speed;
    }
    const double ego_travel = std::max(0.0, ego.future.waypoints.back().x);
    double x0 = lead == Lead::kStopped ? ego_travel + 0.5 * (kEgoLength + length) + rng.uniform(2.0, 6.0)
                                       : rng.uniform(12.0, 22.0);
    const double y0 = rng.uniform(-0.5, 0.5);
    const double h0 = rng.uniform(-0.05, 0.05);
    for (int attempt = 0; attempt < 12; ++attempt, x0 += 3.0) {
      if (try_add(make_agent(next_id, AgentClass::kVehicle, {x0, y0, h0}, length, width, s))) {
        ++next_id;
        break;
      }
    }
  }

  while (static_cast<long long>(scene.agents.size()) < n_agents) {
    bool added = false;
    for (int attempt = 0; attempt < 30 && !added; ++attempt) {
      const double u = rng.uniform();
      AgentClass cls = AgentClass::kVehicle;
      if (u < cfg.vru_fraction) cls = rng.bernoulli(0.5) ? AgentClass::kPedestrian : AgentClass::kCyclist;
      const double r = rng.uniform(6.0, 45.0);
      const double bearing = rng.uniform(-std::numbers::pi, std::numbers::pi);
      Pose pose{r * std::cos(bearing), r * std::sin(bearing), 0.0};
      double length = 0.0, width = 0.0;
      ManeuverScript s;
      switch (cls) {
        case AgentClass::kVehicle: {
          length = rng.uniform(4.0, 5.2);
          width = rng.uniform(1.7, 2.1);
          // Vehicles travel along or against the ego road axis, sometimes across it.
          static constexpr std::array axes = {0.0, std::numbers::pi, 0.5 * std::numbers::pi,
                                              -0.5 * std::numbers::pi};
          pose.heading = axes[static_cast<std::size_t>(rng.uniform_int(0, 3))] + rng.uniform(-0.1, 0.1);
          const MetaAction act = meta_action_from_index(rng.uniform_int(0, 11));
          s = sample_script(rng, maneuver_for(act, rng), act);
          break;
        }
        case AgentClass::kPedestrian:
          length = rng.uniform(0.5, 0.8);
          width = rng.uniform(0.5, 0.8);
          pose.heading = rng.uniform(-std::numbers::pi, std::numbers::pi);
          s.initial_speed = s.target_speed = rng.uniform(0.0, 1.8);
          s.curvature = rng.uniform(-0.1, 0.1);
          break;
        case AgentClass::kCyclist:
          length = rng.uniform(1.6, 1.9);
          width = rng.uniform(0.5, 0.7);
          pose.heading = rng.uniform(-std::numbers::pi, std::numbers::pi);
          s.initial_speed = s.target_speed = rng.uniform(1.5, 6.0);
          s.curvature = rng.uniform(-0.05, 0.05);
          break;
      }
      added = try_add(make_agent(next_id, cls, pose, length, width, s));
    }
    if (!added) break;
    ++next_id;
  }
  return scene;
}

inline Scene generate_scene(const SimConfig& cfg, std::uint64_t index) {
  Rng rng(cfg.seed, index);
  return generate_scene(rng, cfg, index);
}

struct DatasetSummary {
  std::size_t count = 0;
  std::array<std::size_t, kNumMetaActions> action_histogram{};
};

inline std::vector<Scene> generate_scenes(const SimConfig& cfg, std::size_t jobs = 1) {
  validate_config(cfg);
  std::vector<Scene> scenes(static_cast<std::size_t>(cfg.n_scenes));
  parallel_for(scenes.size(), jobs, [&](std::size_t i) { scenes[i] = generate_scene(cfg, i); });
  return scenes;
}

inline DatasetSummary summarize(const std::vector<Scene>& scenes) {
  DatasetSummary s;
  s.count = scenes.size();
  for (const auto& sc : scenes) ++s.action_histogram[meta_action_index(derive_meta_action(sc.ego_future))];
  return s;
}

inline void write_scenes(const std::vector<Scene>& scenes, const std::string& out_path) {
  std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write scenes file '" + out_path + "'");
  for (const auto& s : scenes) out << encode_record(s) << '\n';
  if (!out) throw IoError("write failed for '" + out_path + "'");
}

/// Writes n_scenes scene lines ordered by scene_id.
inline DatasetSummary generate_dataset(const SimConfig& cfg, const std::string& out_path,
                                       std::size_t jobs = 1) {
  const auto scenes = generate_scenes(cfg, jobs);
  write_scenes(scenes, out_path);
  return summarize(scenes);
}

}  // namespace structplan
