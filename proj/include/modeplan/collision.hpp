#pragma once

#include <array>
#include <cmath>

#include "modeplan/geometry.hpp"
#include "modeplan/scene.hpp"

namespace modeplan {

// Oriented bounding box: center pose plus half extents along/across heading.
struct Obb {
  Pose2 pose;
  double half_length = 0.0;
  double half_width = 0.0;

  std::array<Vec2, 4> corners() const {
    Vec2 fwd = pose.heading_vec();
    Vec2 left = fwd.perp();
    Vec2 c{pose.x, pose.y};
    Vec2 l = fwd * half_length;
    Vec2 w = left * half_width;
    return {c + l + w, c + l - w, c - l - w, c - l + w};
  }
};

inline Obb vehicle_obb(const VehicleState& v) {
  return {v.pose, v.half_length, v.half_width};
}

namespace detail {

// True when the corner projections of both boxes onto `axis` overlap.
inline bool axis_overlaps(const Vec2& axis, const std::array<Vec2, 4>& a,
                          const std::array<Vec2, 4>& b) {
  double amin = 1e300, amax = -1e300, bmin = 1e300, bmax = -1e300;
  for (const Vec2& p : a) {
    double d = axis.dot(p);
    amin = std::min(amin, d);
    amax = std::max(amax, d);
  }
  for (const Vec2& p : b) {
    double d = axis.dot(p);
    bmin = std::min(bmin, d);
    bmax = std::max(bmax, d);
  }
  return amax >= bmin && bmax >= amin;
}

}  // namespace detail

// Separating-axis test over both boxes' face normals (4 axes total). The
// axis set is the same regardless of argument order, so the test is
// symmetric by construction.
inline bool obb_overlap(const Obb& a, const Obb& b) {
  std::array<Vec2, 4> ca = a.corners();
  std::array<Vec2, 4> cb = b.corners();
  const Vec2 axes[4] = {a.pose.heading_vec(), a.pose.heading_vec().perp(),
                        b.pose.heading_vec(), b.pose.heading_vec().perp()};
  for (const Vec2& axis : axes)
    if (!detail::axis_overlaps(axis, ca, cb)) return false;
  return true;
}

inline bool vehicles_overlap(const VehicleState& a, const VehicleState& b) {
  return obb_overlap(vehicle_obb(a), vehicle_obb(b));
}

}  // namespace modeplan
