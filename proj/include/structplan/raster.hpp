#pragma once

// Polar feature rasters standing in for per-camera vision-encoder output.
// Each of the six views covers a hard 60 degree sector split into 6 angular x
// 6 radial cells (36 patches); every patch carries 16 channels.
//
// Channel layout:
//   0, 1   cos / sin of the patch-center bearing (ego frame)
//   2      patch-center range / 50 m
//   3      occupancy (any agent footprint intersects the cell)
//   4-6    vehicle / pedestrian / cyclist present
//   7      max agent speed / 15 m/s
//   8      radial speed of the nearest agent in the cell / 15 m/s
//   9      nearest footprint range / 50 m
//   10     max fraction of the cell covered by one footprint's polar extent
//   11-13  traffic light red / yellow / green (the single cell holding the light)
//   14     ego speed / 15 m/s (road-surface flow, identical in every patch)
//   15     stopped agent present (speed < 0.5 m/s)

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string_view>
#include <vector>

#include "structplan/domain.hpp"
#include "structplan/geometry.hpp"

namespace structplan {

inline constexpr std::size_t kNumViews = 6;
inline constexpr std::size_t kAngularBins = 6;
inline constexpr std::size_t kRadialBins = 6;
inline constexpr std::size_t kPatches = kAngularBins * kRadialBins;
inline constexpr std::size_t kVisChannels = 16;
inline constexpr double kSensingRange = 50.0;
inline constexpr double kSectorWidth = std::numbers::pi / 3.0;
inline constexpr std::array<double, kRadialBins + 1> kRadialEdges = {0.0, 4.0, 8.0, 14.0, 22.0, 34.0, 50.0};
inline constexpr Vec2 kTrafficLightPosition = {25.0, -4.0};

enum class View { kFront, kFrontLeft, kFrontRight, kBack, kBackLeft, kBackRight };

inline constexpr std::array kAllViews = {View::kFront, View::kFrontLeft, View::kFrontRight,
                                         View::kBack,  View::kBackLeft,  View::kBackRight};

inline std::string_view to_string(View v) {
  switch (v) {
    case View::kFront: return "FRONT";
    case View::kFrontLeft: return "FRONT LEFT";
    case View::kFrontRight: return "FRONT RIGHT";
    case View::kBack: return "BACK";
    case View::kBackLeft: return "BACK LEFT";
    case View::kBackRight: return "BACK RIGHT";
  }
  return "FRONT";
}

/// Sector center, CCW from the ego x axis.
inline double view_center(View v) {
  constexpr double deg = std::numbers::pi / 180.0;
  switch (v) {
    case View::kFront: return 0.0;
    case View::kFrontLeft: return 60.0 * deg;
    case View::kFrontRight: return -60.0 * deg;
    case View::kBack: return std::numbers::pi;
    case View::kBackLeft: return 120.0 * deg;
    case View::kBackRight: return -120.0 * deg;
  }
  return 0.0;
}

struct ViewFeatureGrid {
  View view = View::kFront;
  std::array<double, kPatches * kVisChannels> data{};

  double& at(std::size_t patch, std::size_t ch) { return data[patch * kVisChannels + ch]; }
  double at(std::size_t patch, std::size_t ch) const { return data[patch * kVisChannels + ch]; }
  friend bool operator==(const ViewFeatureGrid&, const ViewFeatureGrid&) = default;
};

inline constexpr std::size_t patch_index(std::size_t radial, std::size_t angular) {
  return radial * kAngularBins + angular;
}

namespace raster_detail {

struct PolarExtent {
  double bearing_lo, bearing_hi;  // relative to the view center
  double range_lo, range_hi;
  double center_bearing;          // relative to the view center, in (-pi, pi]
};

// Nearest distance from the ego origin to the footprint (0 if it contains it).
inline double nearest_range(const OrientedBox& b) {
  const double c = std::cos(b.heading), s = std::sin(b.heading);
  const double u = std::abs(-c * b.center.x - s * b.center.y);
  const double v = std::abs(s * b.center.x - c * b.center.y);
  const double du = std::max(0.0, u - 0.5 * b.length), dv = std::max(0.0, v - 0.5 * b.width);
  return std::hypot(du, dv);
}

inline PolarExtent polar_extent(const OrientedBox& b, double center_angle) {
  const double abs_center = std::atan2(b.center.y, b.center.x);
  PolarExtent e{};
  e.center_bearing = normalize_angle(abs_center - center_angle);
  e.bearing_lo = e.bearing_hi = e.center_bearing;
  e.range_hi = 0.0;
  for (const auto& p : corners(b)) {
    const double rel = e.center_bearing + normalize_angle(std::atan2(p.y, p.x) - abs_center);
    e.bearing_lo = std::min(e.bearing_lo, rel);
    e.bearing_hi = std::max(e.bearing_hi, rel);
    e.range_hi = std::max(e.range_hi, std::hypot(p.x, p.y));
  }
  e.range_lo = nearest_range(b);
  return e;
}

inline double overlap(double a0, double a1, double b0, double b1) {
  return std::max(0.0, std::min(a1, b1) - std::max(a0, b0));
}

}  // namespace raster_detail

/// Rasterizes one view. Aggregation per patch uses only order-independent
/// reductions (or / max / nearest), so the result does not depend on agent
/// order in the scene record.
inline ViewFeatureGrid rasterize_view(const Scene& scene, View view) {
  using namespace raster_detail;
  ViewFeatureGrid g;
  g.view = view;
  const double center = view_center(view);
  const double ang_step = kSectorWidth / kAngularBins;

  for (std::size_t r = 0; r < kRadialBins; ++r) {
    for (std::size_t a = 0; a < kAngularBins; ++a) {
      const std::size_t p = patch_index(r, a);
      const double bearing = center - 0.5 * kSectorWidth + (static_cast<double>(a) + 0.5) * ang_step;
      g.at(p, 0) = std::cos(bearing);
      g.at(p, 1) = std::sin(bearing);
      g.at(p, 2) = 0.5 * (kRadialEdges[r] + kRadialEdges[r + 1]) / kSensingRange;
      g.at(p, 14) = scene.ego.speed / 15.0;
    }
  }

  // Nearest-agent bookkeeping per patch for channels 8 and 9.
  std::array<double, kPatches> nearest;
  nearest.fill(INFINITY);

  for (const auto& agent : scene.agents) {
    if (std::hypot(agent.x, agent.y) > kSensingRange) continue;
    const OrientedBox box{{agent.x, agent.y}, agent.heading, agent.length, agent.width};
    const PolarExtent ext = polar_extent(box, center);
    if (ext.bearing_hi < -0.5 * kSectorWidth || ext.bearing_lo >= 0.5 * kSectorWidth) continue;

    const double range = std::hypot(agent.x, agent.y);
    const double vx = agent.speed * std::cos(agent.heading), vy = agent.speed * std::sin(agent.heading);
    const double radial_speed = range > 0.0 ? (vx * agent.x + vy * agent.y) / range : 0.0;

    for (std::size_t r = 0; r < kRadialBins; ++r) {
      const double r0 = kRadialEdges[r], r1 = kRadialEdges[r + 1];
      const double rad_ov = overlap(ext.range_lo, ext.range_hi, r0, r1);
      const bool touches_r = rad_ov > 0.0 || (ext.range_lo >= r0 && ext.range_lo < r1);
      if (!touches_r) continue;
      for (std::size_t a = 0; a < kAngularBins; ++a) {
        const double a0 = -0.5 * kSectorWidth + static_cast<double>(a) * ang_step, a1 = a0 + ang_step;
        const double ang_ov = overlap(ext.bearing_lo, ext.bearing_hi, a0, a1);
        const bool touches_a = ang_ov > 0.0 || (ext.bearing_lo >= a0 && ext.bearing_lo < a1);
        if (!touches_a) continue;

        const std::size_t p = patch_index(r, a);
        g.at(p, 3) = 1.0;
        g.at(p, 4 + static_cast<std::size_t>(agent.cls)) = 1.0;
        g.at(p, 7) = std::max(g.at(p, 7), agent.speed / 15.0);
        const double near = ext.range_lo;
        const double rs = radial_speed / 15.0;
        if (near < nearest[p] || (near == nearest[p] && rs > g.at(p, 8))) {
          nearest[p] = near;
          g.at(p, 8) = rs;
          g.at(p, 9) = near / kSensingRange;
        }
        g.at(p, 10) = std::max(g.at(p, 10), (ang_ov / ang_step) * (rad_ov / (r1 - r0)));
        if (agent.speed < 0.5) g.at(p, 15) = 1.0;
      }
    }
  }

  if (scene.traffic_light != TrafficLight::kNone) {
    const double rel = normalize_angle(std::atan2(kTrafficLightPosition.y, kTrafficLightPosition.x) - center);
    const double range = norm(kTrafficLightPosition);
    if (rel >= -0.5 * kSectorWidth && rel < 0.5 * kSectorWidth) {
      const auto a = static_cast<std::size_t>((rel + 0.5 * kSectorWidth) / ang_step);
      std::size_t r = 0;
      while (r + 1 < kRadialBins && range >= kRadialEdges[r + 1]) ++r;
      const std::size_t ch = scene.traffic_light == TrafficLight::kRed      ? 11
                             : scene.traffic_light == TrafficLight::kYellow ? 12
                                                                            : 13;
      g.at(patch_index(r, std::min(a, kAngularBins - 1)), ch) = 1.0;
    }
  }
  return g;
}

inline std::array<ViewFeatureGrid, kNumViews> rasterize_views(const Scene& scene) {
  std::array<ViewFeatureGrid, kNumViews> out;
  for (std::size_t v = 0; v < kNumViews; ++v) out[v] = rasterize_view(scene, kAllViews[v]);
  return out;
}

}  // namespace structplan
