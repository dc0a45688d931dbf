#pragma once

#include <cmath>

namespace modeplan {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  double dot(const Vec2& o) const { return x * o.x + y * o.y; }
  double cross(const Vec2& o) const { return x * o.y - y * o.x; }
  double norm() const { return std::hypot(x, y); }
  Vec2 perp() const { return {-y, x}; }
};

// Wrap an angle to (-pi, pi].
inline double wrap_angle(double theta) {
  double r = std::fmod(theta + M_PI, 2.0 * M_PI);
  if (r <= 0.0) r += 2.0 * M_PI;
  return r - M_PI;
}

// SE(2) pose; theta is kept in (-pi, pi].
struct Pose2 {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;

  Vec2 position() const { return {x, y}; }
  Vec2 heading_vec() const { return {std::cos(theta), std::sin(theta)}; }
};

inline Pose2 make_pose(double x, double y, double theta) {
  return {x, y, wrap_angle(theta)};
}

// Pose of `other` expressed in the frame of `anchor`. The rotation is
// returned as (sin, cos) so downstream features never see a wrap seam.
struct RelPose {
  double x = 0.0;
  double y = 0.0;
  double sin_theta = 0.0;
  double cos_theta = 1.0;
};

inline RelPose relative_pose(const Pose2& anchor, const Pose2& other) {
  double dx = other.x - anchor.x;
  double dy = other.y - anchor.y;
  double c = std::cos(anchor.theta);
  double s = std::sin(anchor.theta);
  double dtheta = other.theta - anchor.theta;
  return {c * dx + s * dy, -s * dx + c * dy, std::sin(dtheta), std::cos(dtheta)};
}

// Map a point from the anchor frame to the world frame.
inline Vec2 to_world(const Pose2& anchor, const Vec2& local) {
  double c = std::cos(anchor.theta);
  double s = std::sin(anchor.theta);
  return {anchor.x + c * local.x - s * local.y,
          anchor.y + s * local.x + c * local.y};
}

// Map a world point into the anchor frame.
inline Vec2 to_local(const Pose2& anchor, const Vec2& world) {
  double dx = world.x - anchor.x;
  double dy = world.y - anchor.y;
  double c = std::cos(anchor.theta);
  double s = std::sin(anchor.theta);
  return {c * dx + s * dy, -s * dx + c * dy};
}

// Compose: pose of (local expressed in anchor's frame) in the world frame.
inline Pose2 compose(const Pose2& anchor, const Pose2& local) {
  Vec2 p = to_world(anchor, {local.x, local.y});
  return {p.x, p.y, wrap_angle(anchor.theta + local.theta)};
}

inline double distance(const Vec2& a, const Vec2& b) {
  return std::hypot(a.x - b.x, a.y - b.y);
}

}  // namespace modeplan
