#pragma once

#include <algorithm>
#include <cmath>

#include "modeplan/collision.hpp"
#include "modeplan/kinematics.hpp"
#include "modeplan/world.hpp"

namespace modeplan {

// Knobs of the scripted demonstrator. Sampling one config per episode gives
// the dataset a spread of driving styles (timid to pushy) without scripting
// separate behaviors.
struct DataPolicyConfig {
  double lookahead_m = 12.0;      // hazard scan horizon along the route
  double inflation = 1.2;         // growth factor on other vehicles' boxes
  double target_speed_frac = 0.85;  // cruise speed as a fraction of the limit
  double yield_gap = 6.0;         // required clear gap at a merge point
};

inline DataPolicyConfig autopilot_config() { return {}; }

inline DataPolicyConfig sample_data_policy_config(Rng& rng) {
  DataPolicyConfig c;
  c.lookahead_m = rng.uniform(8.0, 16.0);
  c.inflation = rng.uniform(1.0, 1.6);
  c.target_speed_frac = rng.uniform(0.6, 0.95);
  c.yield_gap = rng.uniform(4.0, 10.0);
  return c;
}

// Scripted route follower used to collect demonstrations: pure-pursuit
// steering along the route, proportional speed control toward a fraction of
// the limit, a hard brake when a constant-velocity extrapolation of any
// nearby vehicle intersects the ego's own swept path, and an explicit yield
// at the merge point while the target-lane gap is too small.
class HeuristicPolicy {
 public:
  explicit HeuristicPolicy(const DataPolicyConfig& cfg = autopilot_config())
      : cfg_(cfg) {}

  const DataPolicyConfig& config() const { return cfg_; }

  EgoAction operator()(const World& world, const WorldSnapshot& snap) const {
    const Lane& route = world.route();
    const VehicleState& ego = world.ego();
    Lane::Projection proj = route.project(ego.pose.position());

    EgoAction a;
    double ld = std::clamp(2.0 + 0.6 * ego.speed, 3.0, 10.0);
    a.steer = pure_pursuit_steer(ego.pose, route_point(route, proj.s + ld));

    double target = cfg_.target_speed_frac * world.scenario().speed_limit;
    a.accel = std::clamp(1.5 * (target - ego.speed), -3.0, 2.0);

    // while the merge gap is unacceptable, hold at a stop line placed where
    // the route still has lateral clearance from the stream; past the line
    // the merge is committed and only the swept-path check can brake
    const ScenarioTemplate& tpl = world.scenario();
    if (tpl.merge_lane >= 0 && proj.s < tpl.route_merge_s) {
      double s_stop = stop_line_s(tpl, route);
      if (proj.s <= s_stop + 0.3 && proj.s >= s_stop - 30.0 &&
          merge_blocked(world, snap)) {
        double dist = s_stop - proj.s;
        double required =
            ego.speed * ego.speed / (2.0 * std::max(dist, 0.05));
        if (required >= 1.2 || dist < 1.0)
          a.accel = -4.0;
        else if (dist < 2.5)
          a.accel = std::min(a.accel, -1.0);
      }
    }
    if (hazard_ahead(world, snap, proj.s)) a.accel = -4.0;
    return a;
  }

 private:
  static Vec2 route_point(const Lane& route, double s) {
    double L = route.total_length();
    if (s <= L) return route.pose_at(s).position();
    Pose2 end = route.pose_at(L);
    return end.position() + end.heading_vec() * (s - L);
  }

  // Sweep the ego box along the route at current speed and test it against
  // constant-velocity extrapolations of every nearby vehicle, inflated by
  // the configured factor. Vehicles clearly behind the ego are skipped.
  bool hazard_ahead(const World& world, const WorldSnapshot& snap,
                    double ego_s) const {
    const Lane& route = world.route();
    const VehicleState& ego = world.ego();
    double speed = std::max(ego.speed, 1.0);
    double horizon_t = cfg_.lookahead_m / speed;
    for (const SnapshotVehicle& o : snap.vehicles) {
      if (o.id == 0) continue;
      Vec2 local = to_local(ego.pose, o.state.pose.position());
      if (local.x < -2.0) continue;
      if (local.norm() > cfg_.lookahead_m + 15.0) continue;
      VehicleState other = o.state;
      other.half_length *= cfg_.inflation;
      other.half_width *= cfg_.inflation;
      Vec2 vel = other.pose.heading_vec() * other.speed;
      for (double t = 0.0; t <= horizon_t; t += 0.25) {
        double s = std::min(ego_s + speed * t, route.total_length());
        VehicleState ghost = ego;
        ghost.pose = route.pose_at(s);
        VehicleState moved = other;
        moved.pose.x = other.pose.x + vel.x * t;
        moved.pose.y = other.pose.y + vel.y * t;
        if (vehicles_overlap(ghost, moved)) return true;
      }
    }
    return false;
  }

  // Last route position before the merge where the centerline still keeps
  // clearance from the stream lane; a held vehicle there is out of the way.
  double stop_line_s(const ScenarioTemplate& tpl, const Lane& route) const {
    const Lane& merge = tpl.lane_by_id(tpl.merge_lane);
    double s = tpl.route_merge_s;
    double lo = std::max(0.0, tpl.route_merge_s - 40.0);
    for (; s > lo; s -= 1.0) {
      Vec2 p = route.pose_at(s).position();
      if (std::fabs(merge.project(p).lateral) >= 3.2) break;
    }
    return std::max(0.0, s - 1.0);
  }

  // The merge gap is unacceptable while a stream vehicle approaches the
  // junction inside the yield window, or sits just past it.
  bool merge_blocked(const World& world, const WorldSnapshot& snap) const {
    const ScenarioTemplate& tpl = world.scenario();
    const Lane& target = tpl.lane_by_id(tpl.merge_lane);
    for (const SnapshotVehicle& o : snap.vehicles) {
      if (o.id == 0) continue;
      Lane::Projection p = target.project(o.state.pose.position());
      if (std::fabs(p.lateral) > 0.55 * target.width) continue;
      double ahead = target.forward_gap(p.s, tpl.merge_lane_s);
      double behind = target.forward_gap(tpl.merge_lane_s, p.s);
      double window = cfg_.yield_gap + 0.6 * o.state.speed;
      if ((ahead >= 0.0 && ahead <= window) ||
          (behind >= 0.0 && behind <= 4.0))
        return true;
    }
    return false;
  }

  DataPolicyConfig cfg_;
};

}  // namespace modeplan
