#pragma once

#include <array>
#include <cmath>

#include "structplan/domain.hpp"

namespace structplan {

/// Rectangle footprint: center, heading of the long axis, full length/width.
struct OrientedBox {
  Vec2 center;
  double heading = 0.0;
  double length = 0.0;
  double width = 0.0;
};

inline std::array<Vec2, 4> corners(const OrientedBox& b) {
  const double c = std::cos(b.heading), s = std::sin(b.heading);
  const double hl = 0.5 * b.length, hw = 0.5 * b.width;
  const Vec2 ax{c * hl, s * hl};
  const Vec2 ay{-s * hw, c * hw};
  return {Vec2{b.center.x + ax.x + ay.x, b.center.y + ax.y + ay.y},
          Vec2{b.center.x - ax.x + ay.x, b.center.y - ax.y + ay.y},
          Vec2{b.center.x - ax.x - ay.x, b.center.y - ax.y - ay.y},
          Vec2{b.center.x + ax.x - ay.x, b.center.y + ax.y - ay.y}};
}

inline bool contains(const OrientedBox& b, Vec2 p) {
  const double c = std::cos(b.heading), s = std::sin(b.heading);
  const Vec2 d = p - b.center;
  const double u = c * d.x + s * d.y;
  const double v = -s * d.x + c * d.y;
  return std::abs(u) <= 0.5 * b.length && std::abs(v) <= 0.5 * b.width;
}

/// Separating-axis test for two oriented rectangles. Touching boxes count as
/// overlapping.
inline bool boxes_overlap(const OrientedBox& a, const OrientedBox& b) {
  const auto ca = corners(a);
  const auto cb = corners(b);
  const std::array<double, 4> angles = {a.heading, a.heading + std::numbers::pi / 2, b.heading,
                                        b.heading + std::numbers::pi / 2};
  for (double ang : angles) {
    const double nx = std::cos(ang), ny = std::sin(ang);
    double amin = INFINITY, amax = -INFINITY, bmin = INFINITY, bmax = -INFINITY;
    for (const auto& p : ca) {
      const double d = nx * p.x + ny * p.y;
      amin = std::min(amin, d);
      amax = std::max(amax, d);
    }
    for (const auto& p : cb) {
      const double d = nx * p.x + ny * p.y;
      bmin = std::min(bmin, d);
      bmax = std::max(bmax, d);
    }
    if (amax < bmin || bmax < amin) return false;
  }
  return true;
}

// Steps shorter than 0.1 mm count as stationary.
inline constexpr double kStationaryStep = 1e-4;

/// Headings along a polyline: step k uses the direction from point k-1 to k
/// (the start point for k = 0); zero-length steps reuse the previous heading.
inline std::vector<double> polyline_headings(Vec2 start, double start_heading,
                                             const std::vector<Vec2>& pts) {
  std::vector<double> out;
  out.reserve(pts.size());
  Vec2 prev = start;
  double h = start_heading;
  for (const auto& p : pts) {
    const Vec2 d = p - prev;
    if (std::hypot(d.x, d.y) > kStationaryStep) h = std::atan2(d.y, d.x);
    out.push_back(h);
    prev = p;
  }
  return out;
}

}  // namespace structplan
