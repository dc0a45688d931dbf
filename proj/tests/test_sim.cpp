#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "modeplan/heuristic_policy.hpp"
#include "modeplan/world.hpp"

namespace modeplan {
namespace {

// Straight test track: single lane along +x, route to the far end, optional
// one-lane traffic spec.
ScenarioTemplate straight_template(double len, std::vector<TrafficSpec> traffic = {}) {
  ScenarioTemplate t;
  t.id = "lane_merge";  // any catalog id; geometry below overrides it
  t.lanes = {make_straight_lane(0, {0, 0}, {len, 0}, 3.5)};
  t.traffic = std::move(traffic);
  t.ego_lane = 0;
  t.ego_s = 0.0;
  t.ego_speed = 4.0;
  for (double s = 0.0; s < len; s += 10.0) t.route_pts.push_back({s, 0});
  t.route_pts.push_back({len, 0});
  return t;
}

// --- kinematic bicycle -------------------------------------------------------

TEST(Kinematics, StraightLineAdvance) {
  VehicleState v;
  v.pose = make_pose(3.0, -1.0, 0.0);
  v.speed = 10.0;
  VehicleState next = step_kinematics(v, {0.0, 0.0}, 0.2);
  EXPECT_NEAR(next.pose.x, 5.0, 1e-12);
  EXPECT_NEAR(next.pose.y, -1.0, 1e-12);
  EXPECT_DOUBLE_EQ(next.pose.theta, 0.0);
  EXPECT_DOUBLE_EQ(next.speed, 10.0);
}

TEST(Kinematics, YawRateUsesPreUpdateSpeed) {
  VehicleState v;
  v.speed = 5.0;
  VehicleState next = step_kinematics(v, {0.0, 0.1}, 0.2, 2.5);
  // hand-evaluated: (5 / 2.5) * tan(0.1) * 0.2
  EXPECT_NEAR(next.pose.theta, 0.04013, 5e-6);
  EXPECT_NEAR(next.pose.theta, (5.0 / 2.5) * std::tan(0.1) * 0.2, 1e-15);
  // braking to zero changes the travel distance but not the yaw rate
  VehicleState stopped = step_kinematics(v, {-100.0, 0.1}, 0.2, 2.5);
  EXPECT_DOUBLE_EQ(stopped.pose.theta, next.pose.theta);
}

TEST(Kinematics, SpeedClampsAtZeroAndUsesMeanSpeed) {
  VehicleState v;
  v.speed = 1.0;
  VehicleState next = step_kinematics(v, {-10.0, 0.0}, 0.2);
  EXPECT_DOUBLE_EQ(next.speed, 0.0);
  // travels at the mean of old and new speed: 0.5 * 1.0 * 0.2
  EXPECT_NEAR(next.pose.x, 0.1, 1e-12);
}

TEST(Kinematics, PositionAdvancesAlongUpdatedHeading) {
  VehicleState v;
  v.speed = 4.0;
  VehicleState next = step_kinematics(v, {2.0, 0.3}, 0.2, 2.5);
  double theta = (4.0 / 2.5) * std::tan(0.3) * 0.2;
  double mean_v = 0.5 * (4.0 + 4.4);
  EXPECT_NEAR(next.pose.theta, theta, 1e-15);
  EXPECT_NEAR(next.pose.x, mean_v * 0.2 * std::cos(theta), 1e-12);
  EXPECT_NEAR(next.pose.y, mean_v * 0.2 * std::sin(theta), 1e-12);
}

TEST(Kinematics, RejectsBadInputs) {
  VehicleState v;
  EXPECT_THROW(step_kinematics(v, {std::nan(""), 0.0}, 0.2), std::runtime_error);
  EXPECT_THROW(step_kinematics(v, {0.0, 1e300 * 1e300}, 0.2), std::runtime_error);
  EXPECT_THROW(step_kinematics(v, {0.0, 0.0}, 0.0), std::runtime_error);
}

TEST(Kinematics, PurePursuitGeometry) {
  Pose2 pose = make_pose(0, 0, 0);
  EXPECT_DOUBLE_EQ(pure_pursuit_steer(pose, {10, 0}), 0.0);
  double left = pure_pursuit_steer(pose, {10, 2});
  double right = pure_pursuit_steer(pose, {10, -2});
  EXPECT_GT(left, 0.0);
  EXPECT_NEAR(left, -right, 1e-12);
  // curvature formula: steer = atan(2.5 * 2 sin(alpha) / Ld)
  double ld = std::sqrt(104.0), alpha = std::atan2(2.0, 10.0);
  EXPECT_NEAR(left, std::atan(2.5 * 2.0 * std::sin(alpha) / ld), 1e-12);
  // target abeam the rear axle: clamped at the steering limit
  EXPECT_DOUBLE_EQ(pure_pursuit_steer(pose, {0, 3}), 0.5);
  EXPECT_DOUBLE_EQ(pure_pursuit_steer(pose, {0, -3}), -0.5);
}

// --- car following -----------------------------------------------------------

TEST(Idm, FreeRoadBehavior) {
  DriverParams p;  // v0 = 8, a = 2
  EXPECT_NEAR(adaptive_accel(0.0, p, kNoLeaderGap, 0.0), 2.0, 1e-12);
  EXPECT_NEAR(adaptive_accel(8.0, p, kNoLeaderGap, 0.0), 0.0, 1e-12);
  EXPECT_LT(adaptive_accel(9.0, p, kNoLeaderGap, 0.0), 0.0);
}

TEST(Idm, StoppedAtMinGapHoldsStill) {
  DriverParams p;
  // desired gap at v=0 is exactly min_gap, so the terms cancel
  EXPECT_NEAR(adaptive_accel(0.0, p, p.min_gap, 0.0), 0.0, 1e-12);
}

TEST(Idm, ClosingSpeedBrakingOracle) {
  // spreadsheet evaluation of the formula: v=10, v0=12, s0=2, T=1.5,
  // gap=20, lead=8, a=2, b=2 -> s* = 2 + 15 + 10*2/4 = 22,
  // accel = 2*(1 - (10/12)^4 - (22/20)^2)
  DriverParams p;
  p.target_speed = 12.0;
  p.min_gap = 2.0;
  p.time_headway = 1.5;
  p.max_accel = 2.0;
  p.comfort_decel = 2.0;
  EXPECT_NEAR(adaptive_accel(10.0, p, 20.0, 8.0), -1.3845061728395062, 1e-12);
}

TEST(Idm, BrakingClampsAtTwiceComfort) {
  DriverParams p;
  EXPECT_DOUBLE_EQ(adaptive_accel(8.0, p, 0.3, 0.0), -2.0 * p.comfort_decel);
}

TEST(Idm, SampledParamsDeterministicAndBounded) {
  Rng a(42, 1), b(42, 1), c(43, 1);
  DriverParams pa = sample_driver_params(a);
  DriverParams pb = sample_driver_params(b);
  DriverParams pc = sample_driver_params(c);
  EXPECT_DOUBLE_EQ(pa.target_speed, pb.target_speed);
  EXPECT_DOUBLE_EQ(pa.time_headway, pb.time_headway);
  EXPECT_NE(pa.target_speed, pc.target_speed);
  EXPECT_GE(pa.target_speed, 5.5);
  EXPECT_LE(pa.target_speed, 8.5);
  EXPECT_GE(pa.comfort_decel, 1.5);
  EXPECT_LE(pa.max_accel, 2.5);
}

// --- collision ---------------------------------------------------------------

TEST(Collision, HandCases) {
  Obb a{make_pose(0, 0, 0), 1.0, 1.0};
  EXPECT_TRUE(obb_overlap(a, a));
  Obb near{make_pose(1.99, 0, 0), 1.0, 1.0};
  Obb far{make_pose(2.01, 0, 0), 1.0, 1.0};
  EXPECT_TRUE(obb_overlap(a, near));
  EXPECT_FALSE(obb_overlap(a, far));
}

TEST(Collision, RotatedBoxNeedsItsOwnAxis) {
  // axis-aligned bounding boxes overlap, but the diamond's diagonal face
  // normal separates the pair
  Obb square{make_pose(0, 0, 0), 1.0, 1.0};
  Obb diamond{make_pose(2.3, 2.3, M_PI / 4), 1.0, 1.0};
  EXPECT_FALSE(obb_overlap(square, diamond));
  EXPECT_FALSE(obb_overlap(diamond, square));
  Obb closer{make_pose(1.6, 1.6, M_PI / 4), 1.0, 1.0};
  EXPECT_TRUE(obb_overlap(square, closer));
}

TEST(Collision, SymmetricUnderArgumentOrder) {
  Rng rng(7, 0xc0111u);
  int hits = 0;
  for (int i = 0; i < 300; ++i) {
    Obb a{make_pose(rng.uniform(-3, 3), rng.uniform(-3, 3),
                    rng.uniform(-M_PI, M_PI)),
          rng.uniform(0.3, 2.5), rng.uniform(0.3, 1.2)};
    Obb b{make_pose(rng.uniform(-3, 3), rng.uniform(-3, 3),
                    rng.uniform(-M_PI, M_PI)),
          rng.uniform(0.3, 2.5), rng.uniform(0.3, 1.2)};
    bool ab = obb_overlap(a, b), ba = obb_overlap(b, a);
    EXPECT_EQ(ab, ba);
    hits += ab;
  }
  // the sample must exercise both branches
  EXPECT_GT(hits, 10);
  EXPECT_LT(hits, 290);
}

// --- lanes ---------------------------------------------------------------------

TEST(Lane, StraightProjectionAndPose) {
  Lane lane = make_straight_lane(0, {0, 0}, {100, 0}, 3.5);
  Lane::Projection p = lane.project({30, 1.2});
  EXPECT_NEAR(p.s, 30.0, 1e-9);
  EXPECT_NEAR(p.lateral, 1.2, 1e-9);  // left of travel is positive
  EXPECT_NEAR(p.distance, 1.2, 1e-9);
  EXPECT_NEAR(lane.project({40, -2.0}).lateral, -2.0, 1e-9);

  Pose2 mid = lane.pose_at(35.0);
  EXPECT_NEAR(mid.x, 35.0, 1e-9);
  EXPECT_NEAR(mid.y, 0.0, 1e-9);
  EXPECT_NEAR(mid.theta, 0.0, 1e-12);
  EXPECT_NEAR(lane.total_length(), 100.0, 1e-9);
}

TEST(Lane, WrapSemanticsByKind) {
  Lane open = make_straight_lane(0, {0, 0}, {100, 0}, 3.5);
  EXPECT_DOUBLE_EQ(open.wrap_s(110.0), 100.0);  // clamps
  EXPECT_DOUBLE_EQ(open.wrap_s(-5.0), 0.0);

  Lane recycled = make_straight_lane(0, {0, 0}, {100, 0}, 3.5);
  recycled.recycle = true;
  EXPECT_NEAR(recycled.wrap_s(105.0), 5.0, 1e-9);  // modulo

  Lane ring = make_ring_lane(0, {0, 0}, 20.0, 3.5);
  double L = ring.total_length();
  Pose2 a = ring.pose_at(5.0), b = ring.pose_at(L + 5.0);
  EXPECT_NEAR(a.x, b.x, 1e-9);
  EXPECT_NEAR(a.y, b.y, 1e-9);
}

TEST(Lane, RingGeometry) {
  Lane ring = make_ring_lane(0, {0, 0}, 20.0, 3.5, 48);
  // inscribed 48-gon perimeter
  EXPECT_NEAR(ring.total_length(), 48.0 * 2.0 * 20.0 * std::sin(M_PI / 48.0),
              1e-9);
  // outside a counter-clockwise loop is to the right of travel
  Lane::Projection p = ring.project({0, 21});
  EXPECT_LT(p.lateral, -0.9);
  EXPECT_GT(p.lateral, -1.1);
  // quarter way around from the first point (20, 0)
  EXPECT_NEAR(p.s, 0.25 * ring.total_length(), 1.0);
}

TEST(Lane, ForwardGapModuloOnLoops) {
  Lane ring = make_ring_lane(0, {0, 0}, 20.0, 3.5);
  double L = ring.total_length();
  EXPECT_NEAR(ring.forward_gap(L - 10.0, 5.0), 15.0, 1e-9);
  EXPECT_NEAR(ring.forward_gap(5.0, L - 10.0), L - 15.0, 1e-9);
  Lane open = make_straight_lane(0, {0, 0}, {100, 0}, 3.5);
  EXPECT_DOUBLE_EQ(open.forward_gap(50.0, 30.0), -20.0);  // no wrap
}

// --- scenario templates ----------------------------------------------------------

TEST(Scenario, BuiltinTemplatesAreSelfConsistent) {
  std::vector<ScenarioTemplate> all = builtin_templates();
  ASSERT_EQ(all.size(), 5u);
  std::set<std::string> ids;
  for (const ScenarioTemplate& t : all) {
    SCOPED_TRACE(t.id);
    EXPECT_TRUE(ids.insert(t.id).second);
    EXPECT_GE(t.lanes.size(), 1u);
    (void)t.lane_by_id(t.ego_lane);
    Lane route = t.route_lane();
    EXPECT_GT(route.total_length(), 40.0);
    // the goal is a real journey away from the spawn point
    Pose2 start = t.lane_by_id(t.ego_lane).pose_at(t.ego_s);
    EXPECT_GT(distance(start.position(), t.route_pts.back()), 30.0);
    ASSERT_GE(t.merge_lane, 0);  // every built-in crosses dense traffic
    const Lane& merge = t.lane_by_id(t.merge_lane);
    // the route actually touches the merge lane at the recorded arc position
    Vec2 merge_pt = route.pose_at(t.route_merge_s).position();
    Lane::Projection proj = merge.project(merge_pt);
    EXPECT_LE(std::fabs(proj.lateral), 1.0);
    EXPECT_NEAR(proj.s, t.merge_lane_s, 3.0);
    // the merge lane carries a dense stream
    int merge_count = 0;
    for (const TrafficSpec& spec : t.traffic)
      if (spec.lane == t.merge_lane) merge_count += spec.count;
    EXPECT_GE(merge_count, 7);
  }
}

TEST(Scenario, FindTemplateByName) {
  EXPECT_EQ(find_template("roundabout_entry").id, "roundabout_entry");
  EXPECT_THROW(find_template("nope"), std::runtime_error);
}

TEST(Scenario, CatalogTextRoundTrip) {
  std::string text = catalog_to_text(builtin_templates());
  std::vector<ScenarioTemplate> parsed = catalog_from_text(text);
  ASSERT_EQ(parsed.size(), 5u);
  EXPECT_EQ(catalog_to_text(parsed), text);
  // parsed lanes are usable (finalized)
  EXPECT_GT(parsed[0].lane_by_id(0).total_length(), 100.0);
}

TEST(Scenario, CatalogParserRejectsGarbage) {
  EXPECT_THROW(catalog_from_text("nonsense\n"), std::runtime_error);
  std::string text = catalog_to_text({template_lane_merge()});
  text += "gibberish 1 2 3\n";
  try {
    catalog_from_text(text);
    FAIL() << "expected parse error";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("line"), std::string::npos);
  }
}

// --- world ----------------------------------------------------------------------

TEST(World, SpawnIsSeedDeterministic) {
  World a(template_lane_merge(), 11);
  World b(template_lane_merge(), 11);
  World c(template_lane_merge(), 12);
  ASSERT_EQ(a.traffic().size(), 12u);
  ASSERT_EQ(a.traffic().size(), b.traffic().size());
  bool any_diff = false;
  for (size_t i = 0; i < a.traffic().size(); ++i) {
    EXPECT_EQ(a.traffic()[i].id, b.traffic()[i].id);
    EXPECT_DOUBLE_EQ(a.traffic()[i].s, b.traffic()[i].s);
    EXPECT_DOUBLE_EQ(a.traffic()[i].state.pose.x, b.traffic()[i].state.pose.x);
    EXPECT_DOUBLE_EQ(a.traffic()[i].state.speed, b.traffic()[i].state.speed);
    any_diff |= a.traffic()[i].s != c.traffic()[i].s;
  }
  EXPECT_TRUE(any_diff);
}

TEST(World, SnapshotLayout) {
  World w(template_t_junction(true), 4);
  WorldSnapshot snap = w.snapshot();
  ASSERT_FALSE(snap.vehicles.empty());
  EXPECT_EQ(snap.vehicles[0].id, 0);  // ego first
  int roads = 0, goals = 0, lights = 0, last_seq = -1, goal_total = 0;
  for (const ContextObject& c : snap.context) {
    if (c.kind == ObjectKind::kRoadPoint) ++roads;
    if (c.kind == ObjectKind::kTrafficLight) ++lights;
    if (c.kind == ObjectKind::kGoalWaypoint) {
      EXPECT_GT(c.goal_seq, last_seq);  // ordered along the route
      last_seq = c.goal_seq;
      goal_total = c.goal_total;
      ++goals;
    }
  }
  EXPECT_GT(roads, 50);
  EXPECT_EQ(lights, 1);
  EXPECT_GT(goals, 3);
  EXPECT_EQ(goals, goal_total);
}

TEST(World, LightCycleTiming) {
  ScenarioTemplate tpl = template_t_junction(true);
  ASSERT_EQ(tpl.lights.size(), 1u);
  tpl.lights[0].seed_offset = false;
  World w(tpl, 4);
  // 10 s green, 2 s yellow, 8 s red, then wraps
  EXPECT_EQ(w.light_state(0, 0.0), LightState::kGreen);
  EXPECT_EQ(w.light_state(0, 9.99), LightState::kGreen);
  EXPECT_EQ(w.light_state(0, 10.01), LightState::kYellow);
  EXPECT_EQ(w.light_state(0, 11.99), LightState::kYellow);
  EXPECT_EQ(w.light_state(0, 12.01), LightState::kRed);
  EXPECT_EQ(w.light_state(0, 19.99), LightState::kRed);
  EXPECT_EQ(w.light_state(0, 20.01), LightState::kGreen);
}

TEST(World, LightPhaseVariesWithSeed) {
  ScenarioTemplate tpl = template_t_junction(true);
  World a(tpl, 1), b(tpl, 2);
  bool differ = false;
  for (double t = 0.0; t < 20.0 && !differ; t += 0.1)
    differ = a.light_state(0, t) != b.light_state(0, t);
  EXPECT_TRUE(differ);
}

TEST(World, EpisodeIsBitwiseDeterministic) {
  SimConfig cfg;
  cfg.max_steps = 120;
  std::string texts[2];
  for (int run = 0; run < 2; ++run) {
    World w(template_lane_merge(), 7);
    HeuristicPolicy policy;
    EpisodeLog log;
    log.policy_name = "autopilot";
    run_episode(w, std::cref(policy), cfg, &log);
    texts[run] = episode_log_to_text(log);
  }
  EXPECT_FALSE(texts[0].empty());
  EXPECT_EQ(texts[0], texts[1]);
}

TEST(World, EpisodeLogTextRoundTrip) {
  SimConfig cfg;
  cfg.max_steps = 40;
  World w(template_double_lane_change(), 5);
  HeuristicPolicy policy;
  EpisodeLog log;
  log.policy_name = "autopilot";
  log.policy_seed = 9;
  run_episode(w, std::cref(policy), cfg, &log);
  std::string text = episode_log_to_text(log);
  EpisodeLog parsed = episode_log_from_text(text);
  EXPECT_EQ(parsed.template_id, "double_lane_change");
  EXPECT_EQ(parsed.scenario_seed, 5u);
  EXPECT_EQ(parsed.policy_seed, 9u);
  EXPECT_EQ(parsed.steps.size(), log.steps.size());
  EXPECT_EQ(episode_log_to_text(parsed), text);
  EXPECT_THROW(episode_log_from_text("bogus\n"), std::runtime_error);
}

TEST(World, NoTeleportationExceptLoggedWraps) {
  SimConfig cfg;
  cfg.max_steps = 400;
  World w(template_lane_merge(), 3);
  EpisodeLog log;
  run_episode(w, [](const World&, const WorldSnapshot&) {
    return EgoAction{-4.0, 0.0};
  }, cfg, &log);
  ASSERT_GT(log.steps.size(), 10u);
  int wraps = 0;
  for (size_t i = 1; i < log.steps.size(); ++i) {
    const auto& prev = log.steps[i - 1].vehicles;
    const auto& cur = log.steps[i].vehicles;
    ASSERT_EQ(prev.size(), cur.size());
    const std::vector<int>& wrapped = log.steps[i].wrapped_ids;
    for (size_t vi = 0; vi < cur.size(); ++vi) {
      ASSERT_EQ(prev[vi].first, cur[vi].first);
      double moved = distance(prev[vi].second.pose.position(),
                              cur[vi].second.pose.position());
      bool was_wrapped = std::find(wrapped.begin(), wrapped.end(),
                                   cur[vi].first) != wrapped.end();
      EXPECT_FALSE(was_wrapped && cur[vi].first == 0);  // ego never recycles
      if (was_wrapped) {
        ++wraps;
        EXPECT_LT(cur[vi].second.pose.x, -150.0);  // re-entered at the start
        EXPECT_GT(prev[vi].second.pose.x, 150.0);
      } else {
        // bounded by max speed times dt with slack
        EXPECT_LT(moved, 12.0 * 0.2 + 0.5);
      }
    }
  }
  EXPECT_GE(wraps, 1);  // the stream does recycle within 80 s
}

TEST(World, BackgroundSelfPlayStaysCollisionFree) {
  for (auto [tpl, seed] : {std::pair<ScenarioTemplate, uint64_t>{
                               template_lane_merge(), 9},
                           {template_double_lane_change(), 4},
                           {template_roundabout_entry(), 2}}) {
    SCOPED_TRACE(tpl.id);
    World w(tpl, seed);
    for (int step = 0; step < 500; ++step) {
      w.step({-4.0, 0.0});  // ego holds still; background drives itself
      const auto& veh = w.traffic();
      for (size_t i = 0; i < veh.size(); ++i)
        for (size_t j = i + 1; j < veh.size(); ++j)
          ASSERT_FALSE(vehicles_overlap(veh[i].state, veh[j].state))
              << "step " << step << " ids " << veh[i].id << "," << veh[j].id;
    }
  }
}

TEST(World, FullBrakeEndsStatic) {
  World w(template_lane_merge(), 7);
  EpisodeLog log;
  EpisodeResult res = run_episode(
      w,
      [](const World&, const WorldSnapshot&) {
        return EgoAction{-4.0, 0.0};
      },
      SimConfig{}, &log);
  EXPECT_EQ(res.outcome, Outcome::kStatic);
  // ~7 steps to stop plus 150 steps of standstill
  EXPECT_GE(res.steps, 150);
  EXPECT_LE(res.steps, 170);
  ASSERT_FALSE(res.infractions.empty());
  EXPECT_EQ(res.infractions.back().type, "static");

  // replaying the log through the monitor reproduces the outcome
  EpisodeResult replay = detect_infractions(log, SimConfig{}, w.goal_point(),
                                            w.scenario().goal_radius);
  EXPECT_EQ(replay.outcome, res.outcome);
  EXPECT_EQ(replay.steps, res.steps);
}

TEST(World, RedLightExcusesStandstill) {
  SimConfig cfg;
  InfractionMonitor red_monitor(cfg, {1000, 0}, 2.5);
  InfractionMonitor green_monitor(cfg, {1000, 0}, 2.5);
  VehicleState ego;  // stopped at the origin facing east
  ContextObject light;
  light.kind = ObjectKind::kTrafficLight;
  light.pose = make_pose(10, 0, M_PI);
  light.light = LightState::kRed;
  ContextObject green = light;
  green.light = LightState::kGreen;
  for (int step = 0; step < 200; ++step) {
    EXPECT_FALSE(red_monitor.observe(step, ego, {}, {light}).has_value());
    std::optional<Outcome> o = green_monitor.observe(step, ego, {}, {green});
    if (step < 149) {
      EXPECT_FALSE(o.has_value());
    } else if (step == 149) {
      // 150 steps * 0.2 s reaches the 30 s timeout
      ASSERT_TRUE(o.has_value());
      EXPECT_EQ(*o, Outcome::kStatic);
      break;
    }
  }
  // a red light far away or behind does not excuse the stop
  InfractionMonitor far_monitor(cfg, {1000, 0}, 2.5);
  ContextObject far = light;
  far.pose = make_pose(40, 0, M_PI);
  ContextObject behind = light;
  behind.pose = make_pose(-10, 0, M_PI);
  std::optional<Outcome> out;
  for (int step = 0; step < 200 && !out; ++step)
    out = far_monitor.observe(step, ego, {}, {far, behind});
  ASSERT_TRUE(out.has_value());
  EXPECT_EQ(*out, Outcome::kStatic);
}

TEST(World, MonitorFlagsCrashBeforeGoal) {
  SimConfig cfg;
  InfractionMonitor monitor(cfg, {0, 0}, 2.5);  // ego already at the goal
  VehicleState ego;
  SnapshotVehicle other;
  other.id = 3;
  other.state.pose = make_pose(1.0, 0, 0);  // overlapping
  std::optional<Outcome> o = monitor.observe(0, ego, {other}, {});
  ASSERT_TRUE(o.has_value());
  EXPECT_EQ(*o, Outcome::kCrash);
  EXPECT_EQ(monitor.events().back().other_id, 3);

  InfractionMonitor goal_monitor(cfg, {0.5, 0}, 2.5);
  std::optional<Outcome> g = goal_monitor.observe(0, ego, {}, {});
  ASSERT_TRUE(g.has_value());
  EXPECT_EQ(*g, Outcome::kSuccess);
}

// --- scripted demonstrator --------------------------------------------------------

TEST(HeuristicPolicy, BrakesForOncomingVehicle) {
  ScenarioTemplate tpl = straight_template(100.0);
  Lane oncoming = make_straight_lane(1, {60, 0}, {-40, 0}, 3.5);
  tpl.lanes.push_back(oncoming);
  tpl.traffic = {{1, 1, 35.0, 13.0}};  // one vehicle 25 m ahead, head-on
  World w(tpl, 1);
  HeuristicPolicy policy;
  EgoAction a = policy(w, w.snapshot());
  EXPECT_DOUBLE_EQ(a.accel, -4.0);
}

TEST(HeuristicPolicy, TracksTargetSpeedOnOpenRoad) {
  World w(straight_template(150.0), 1);
  HeuristicPolicy policy;
  EgoAction first = policy(w, w.snapshot());
  EXPECT_DOUBLE_EQ(first.accel, 2.0);  // clamp of 1.5 * (6.8 - 4.0)
  EXPECT_NEAR(first.steer, 0.0, 1e-12);
  EpisodeResult res = run_episode(w, std::cref(policy), SimConfig{});
  EXPECT_EQ(res.outcome, Outcome::kSuccess);
  // settled at target_speed_frac of the limit along the way
  EXPECT_NEAR(w.ego().speed, 0.85 * 8.0, 0.3);
}

TEST(HeuristicPolicy, SampledConfigsCoverTheRanges) {
  Rng rng(3, 0xda7au);
  for (int i = 0; i < 50; ++i) {
    DataPolicyConfig c = sample_data_policy_config(rng);
    EXPECT_GE(c.lookahead_m, 8.0);
    EXPECT_LE(c.lookahead_m, 16.0);
    EXPECT_GE(c.inflation, 1.0);
    EXPECT_LE(c.inflation, 1.6);
    EXPECT_GE(c.target_speed_frac, 0.6);
    EXPECT_LE(c.target_speed_frac, 0.95);
    EXPECT_GE(c.yield_gap, 4.0);
    EXPECT_LE(c.yield_gap, 10.0);
  }
  Rng r1(5, 0xda7au), r2(6, 0xda7au);
  EXPECT_NE(sample_data_policy_config(r1).yield_gap,
            sample_data_policy_config(r2).yield_gap);
}

TEST(HeuristicPolicy, AutopilotCompletesEachScenario) {
  // one smoke seed per template; the aggregate success-rate gate lives in
  // the selfcheck command
  struct Case { const char* id; uint64_t seed; };
  for (Case c : {Case{"lane_merge", 3}, Case{"t_junction", 1},
                 Case{"double_lane_change", 2}, Case{"roundabout_entry", 5},
                 Case{"t_junction_signal", 8}}) {
    SCOPED_TRACE(c.id);
    World w(find_template(c.id), c.seed);
    HeuristicPolicy policy;
    EpisodeResult res = run_episode(w, std::cref(policy), SimConfig{});
    EXPECT_EQ(res.outcome, Outcome::kSuccess) << "steps " << res.steps;
  }
}

}  // namespace
}  // namespace modeplan
