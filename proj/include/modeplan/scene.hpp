#pragma once

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "modeplan/geometry.hpp"

namespace modeplan {

enum class LightState { kRed, kYellow, kGreen };

enum class ObjectKind {
  kRoadPoint,
  kTrafficLight,
  kPedestrian,
  kStopSign,
  kGoalWaypoint,
};

// One agent at one timestep.
struct VehicleState {
  Pose2 pose;
  double speed = 0.0;          // non-negative longitudinal speed, m/s
  double half_length = 2.25;   // bounding-box half extents, m
  double half_width = 0.9;
  double speed_limit = 10.0;   // current effective limit, m/s
};

// Map/context element; attribute fields are meaningful per kind.
struct ContextObject {
  ObjectKind kind = ObjectKind::kRoadPoint;
  Pose2 pose;
  // RoadPoint / GoalWaypoint
  double lane_width = 3.5;
  bool in_intersection = false;
  bool can_change_left = false;
  bool can_change_right = false;
  // TrafficLight / StopSign / Pedestrian: affected or bounding box
  double box_half_length = 0.0;
  double box_half_width = 0.0;
  LightState light = LightState::kGreen;
  // Pedestrian
  double speed = 0.0;
  // GoalWaypoint ordering along the route
  int goal_seq = 0;
  int goal_total = 1;
};

struct SnapshotVehicle {
  int id = 0;
  VehicleState state;
};

// Everything the observation layer sees at one instant.
struct WorldSnapshot {
  double time = 0.0;
  std::vector<SnapshotVehicle> vehicles;
  std::vector<ContextObject> context;
};

struct VectorizeCaps {
  int vehicles = 100;
  int road_points = 512;
  int traffic_lights = 16;
  int pedestrians = 16;
  int stop_signs = 8;
  int goal_waypoints = 32;
};

// Range-limited, capped, deterministic vector observation. Raw records carry
// no absolute pose (translation invariance); geometry enters only through
// relative poses computed downstream from the per-feature poses.
struct FeatureSet {
  std::vector<std::vector<double>> vehicle_features;  // slot 0 = ego
  std::vector<Pose2> vehicle_poses;
  std::vector<int> vehicle_ids;
  std::vector<VehicleState> vehicle_states;
  std::vector<uint8_t> vehicle_mask;

  std::vector<std::vector<double>> context_features;
  std::vector<Pose2> context_poses;
  std::vector<ContextObject> context_objects;
  std::vector<uint8_t> context_mask;

  int num_vehicles() const { return int(vehicle_features.size()); }
  int num_context() const { return int(context_features.size()); }
};

inline constexpr int kVehicleFeatureDim = 6;

inline std::vector<double> vehicle_raw_features(const VehicleState& v,
                                                bool is_ego) {
  return {v.speed,
          v.speed_limit > 0.0 ? v.speed / v.speed_limit : 0.0,
          v.half_length,
          v.half_width,
          v.speed_limit,
          is_ego ? 1.0 : 0.0};
}

inline int context_feature_dim(ObjectKind kind) {
  switch (kind) {
    case ObjectKind::kRoadPoint:
      return 4;
    case ObjectKind::kTrafficLight:
      return 5;
    case ObjectKind::kPedestrian:
      return 3;
    case ObjectKind::kStopSign:
      return 2;
    case ObjectKind::kGoalWaypoint:
      return 2;
  }
  return 0;
}

inline std::vector<double> context_raw_features(const ContextObject& c) {
  switch (c.kind) {
    case ObjectKind::kRoadPoint:
      return {c.lane_width, c.in_intersection ? 1.0 : 0.0,
              c.can_change_left ? 1.0 : 0.0, c.can_change_right ? 1.0 : 0.0};
    case ObjectKind::kTrafficLight:
      return {c.light == LightState::kRed ? 1.0 : 0.0,
              c.light == LightState::kYellow ? 1.0 : 0.0,
              c.light == LightState::kGreen ? 1.0 : 0.0, c.box_half_length,
              c.box_half_width};
    case ObjectKind::kPedestrian:
      return {c.speed, c.box_half_length, c.box_half_width};
    case ObjectKind::kStopSign:
      return {c.box_half_length, c.box_half_width};
    case ObjectKind::kGoalWaypoint:
      return {c.lane_width,
              c.goal_total > 0 ? double(c.goal_seq) / double(c.goal_total) : 0.0};
  }
  return {};
}

// Indices of the min(k, n) nearest road points to agent_pose, ascending by
// Euclidean distance, ties broken by index.
inline std::vector<int> nearest_map_features(const Pose2& agent_pose,
                                             const std::vector<Pose2>& road_points,
                                             int k) {
  if (k < 1) throw std::runtime_error("nearest_map_features: k < 1");
  std::vector<std::pair<double, int>> order;
  order.reserve(road_points.size());
  for (int i = 0; i < int(road_points.size()); ++i)
    order.emplace_back(distance(agent_pose.position(), road_points[size_t(i)].position()), i);
  std::sort(order.begin(), order.end());
  int keep = std::min<int>(k, int(order.size()));
  std::vector<int> idx(static_cast<size_t>(keep));
  for (int i = 0; i < keep; ++i) idx[size_t(i)] = order[size_t(i)].second;
  return idx;
}

inline FeatureSet vectorize(const WorldSnapshot& snapshot, int ego_id,
                            double range_m, const VectorizeCaps& caps = {}) {
  int ego_idx = -1;
  for (int i = 0; i < int(snapshot.vehicles.size()); ++i)
    if (snapshot.vehicles[size_t(i)].id == ego_id) ego_idx = i;
  if (ego_idx < 0)
    throw std::runtime_error("vectorize: ego id " + std::to_string(ego_id) +
                             " not in snapshot");
  const Vec2 ego_pos = snapshot.vehicles[size_t(ego_idx)].state.pose.position();

  FeatureSet fs;
  // Vehicles: ego first, then nearest within range up to cap, ties by id.
  std::vector<std::pair<double, int>> veh_order;
  for (int i = 0; i < int(snapshot.vehicles.size()); ++i) {
    if (i == ego_idx) continue;
    const SnapshotVehicle& v = snapshot.vehicles[size_t(i)];
    double d = distance(ego_pos, v.state.pose.position());
    if (d <= range_m) veh_order.emplace_back(d, v.id);
  }
  std::sort(veh_order.begin(), veh_order.end());
  auto push_vehicle = [&](const SnapshotVehicle& v, bool is_ego) {
    VehicleState s = v.state;
    s.speed = std::max(0.0, s.speed);
    fs.vehicle_features.push_back(vehicle_raw_features(s, is_ego));
    fs.vehicle_poses.push_back(s.pose);
    fs.vehicle_ids.push_back(v.id);
    fs.vehicle_states.push_back(s);
    fs.vehicle_mask.push_back(1);
  };
  push_vehicle(snapshot.vehicles[size_t(ego_idx)], true);
  for (const auto& [d, id] : veh_order) {
    if (fs.num_vehicles() >= caps.vehicles) break;
    for (const auto& v : snapshot.vehicles)
      if (v.id == id) push_vehicle(v, false);
  }

  // Context: per-kind selection (range, then nearest up to cap), emitted in
  // kind order, each kind sorted by (distance, original index).
  auto select_kind = [&](ObjectKind kind, int cap) {
    std::vector<std::pair<double, int>> order;
    for (int i = 0; i < int(snapshot.context.size()); ++i) {
      const ContextObject& c = snapshot.context[size_t(i)];
      if (c.kind != kind) continue;
      double d = distance(ego_pos, c.pose.position());
      if (d <= range_m) order.emplace_back(d, i);
    }
    std::sort(order.begin(), order.end());
    int keep = std::min<int>(cap, int(order.size()));
    for (int i = 0; i < keep; ++i) {
      const ContextObject& c = snapshot.context[size_t(order[size_t(i)].second)];
      fs.context_features.push_back(context_raw_features(c));
      fs.context_poses.push_back(c.pose);
      fs.context_objects.push_back(c);
      fs.context_mask.push_back(1);
    }
  };
  select_kind(ObjectKind::kRoadPoint, caps.road_points);
  select_kind(ObjectKind::kTrafficLight, caps.traffic_lights);
  select_kind(ObjectKind::kPedestrian, caps.pedestrians);
  select_kind(ObjectKind::kStopSign, caps.stop_signs);
  select_kind(ObjectKind::kGoalWaypoint, caps.goal_waypoints);
  return fs;
}

}  // namespace modeplan
