#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "modeplan/geometry.hpp"
#include "modeplan/scene.hpp"

namespace modeplan {

inline constexpr double kWheelbase = 2.5;  // m

struct EgoAction {
  double accel = 0.0;  // m/s^2
  double steer = 0.0;  // rad
};

// Kinematic bicycle step: speed is clamped at zero (no reverse), the yaw
// rate uses the pre-update speed, and the position advances along the
// updated heading at the mean of old and new speed.
inline VehicleState step_kinematics(const VehicleState& state,
                                    const EgoAction& action, double dt,
                                    double wheelbase = kWheelbase) {
  if (!std::isfinite(action.accel) || !std::isfinite(action.steer))
    throw std::runtime_error("step_kinematics: non-finite action");
  if (dt <= 0.0) throw std::runtime_error("step_kinematics: dt <= 0");
  VehicleState next = state;
  double v0 = state.speed;
  next.speed = std::max(0.0, v0 + action.accel * dt);
  double yaw_rate = (v0 / wheelbase) * std::tan(action.steer);
  double theta = wrap_angle(state.pose.theta + yaw_rate * dt);
  double mean_v = 0.5 * (v0 + next.speed);
  next.pose = make_pose(state.pose.x + mean_v * dt * std::cos(theta),
                        state.pose.y + mean_v * dt * std::sin(theta), theta);
  return next;
}

// Pure-pursuit steering toward a target point: curvature 2*sin(alpha)/Ld
// where alpha is the bearing to the target in the vehicle frame.
inline double pure_pursuit_steer(const Pose2& pose, const Vec2& target,
                                 double wheelbase = kWheelbase,
                                 double max_steer = 0.5) {
  Vec2 local = to_local(pose, target);
  double ld = std::max(1e-6, local.norm());
  double alpha = std::atan2(local.y, local.x);
  double curvature = 2.0 * std::sin(alpha) / ld;
  double steer = std::atan(curvature * wheelbase);
  return std::clamp(steer, -max_steer, max_steer);
}

}  // namespace modeplan
