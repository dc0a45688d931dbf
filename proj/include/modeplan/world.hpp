#pragma once

#include <functional>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "modeplan/collision.hpp"
#include "modeplan/idm.hpp"
#include "modeplan/kinematics.hpp"
#include "modeplan/scenario.hpp"
#include "modeplan/scene.hpp"
#include "modeplan/util.hpp"

namespace modeplan {

inline constexpr double kSimDt = 0.2;  // s, control and physics step

struct SimConfig {
  double dt = kSimDt;
  int max_steps = 600;           // 120 s episode cap
  double static_timeout = 30.0;  // s of non-excused standstill
  double static_speed = 0.1;     // m/s threshold
  double red_excuse_dist = 20.0; // m ahead within which a red excuses a stop
  double vectorize_range = 50.0; // m observation radius
};

struct BackgroundVehicle {
  int id = 0;
  int lane = 0;
  double s = 0.0;
  DriverParams params;
  VehicleState state;
};

enum class Outcome { kSuccess, kStatic, kCrash, kTimeout };

inline const char* outcome_name(Outcome o) {
  switch (o) {
    case Outcome::kSuccess: return "success";
    case Outcome::kStatic: return "static";
    case Outcome::kCrash: return "crash";
    case Outcome::kTimeout: return "timeout";
  }
  return "?";
}

inline Outcome outcome_from_name(const std::string& s) {
  for (Outcome o : {Outcome::kSuccess, Outcome::kStatic, Outcome::kCrash,
                    Outcome::kTimeout})
    if (s == outcome_name(o)) return o;
  throw std::runtime_error("unknown outcome: " + s);
}

struct InfractionEvent {
  std::string type;  // "crash" | "static" | "goal" | "wrap"
  int step = 0;
  int other_id = -1;
};

// Deterministic dense-traffic world. Background vehicles are lane followers:
// IDM longitudinal control against the nearest leader in their lane
// (including the ego once it occupies the lane), pure-pursuit steering, and
// the same kinematic step as the ego. Recycled lanes teleport vehicles from
// the end back to the start (logged as wrap events); gaps are computed
// modulo lane length so the stream is seamless.
class World {
 public:
  World(const ScenarioTemplate& tpl, uint64_t seed)
      : tpl_(tpl), route_(tpl.route_lane()), seed_(seed) {
    Rng rng(seed, 0x5ce7a10u);
    // light phases
    for (const LightSpec& l : tpl_.lights)
      light_offsets_.push_back(l.seed_offset ? rng.uniform(0.0, l.cycle())
                                             : 0.0);
    // ego
    const Lane& ego_lane = tpl_.lane_by_id(tpl_.ego_lane);
    ego_.pose = ego_lane.pose_at(tpl_.ego_s);
    ego_.speed = tpl_.ego_speed;
    ego_.speed_limit = tpl_.speed_limit;
    // background traffic
    int next_id = 1;
    for (const TrafficSpec& spec : tpl_.traffic) {
      const Lane& lane = tpl_.lane_by_id(spec.lane);
      for (int i = 0; i < spec.count; ++i) {
        BackgroundVehicle v;
        v.id = next_id++;
        v.lane = spec.lane;
        v.params = sample_driver_params(rng);
        v.s = lane.wrap_s(spec.s0 + i * spec.spacing + rng.uniform(-2.0, 2.0));
        v.state.pose = lane.pose_at(v.s);
        v.state.speed = v.params.target_speed * rng.uniform(0.6, 0.9);
        v.state.speed_limit = lane.speed_limit;
        traffic_.push_back(v);
      }
    }
    build_static_context();
  }

  const ScenarioTemplate& scenario() const { return tpl_; }
  const Lane& route() const { return route_; }
  uint64_t seed() const { return seed_; }
  double time() const { return time_; }
  int step_count() const { return step_; }
  const VehicleState& ego() const { return ego_; }
  const std::vector<BackgroundVehicle>& traffic() const { return traffic_; }
  const std::vector<int>& last_wraps() const { return last_wraps_; }

  Vec2 goal_point() const { return tpl_.route_pts.back(); }

  LightState light_state(size_t idx, double at_time) const {
    const LightSpec& l = tpl_.lights[idx];
    double phase = std::fmod(at_time + light_offsets_[idx], l.cycle());
    if (phase < l.green) return LightState::kGreen;
    if (phase < l.green + l.yellow) return LightState::kYellow;
    return LightState::kRed;
  }

  WorldSnapshot snapshot() const { return snapshot_at(time_); }

  // Snapshot with light states evaluated at a different clock; rollouts use
  // this to advance signals while imagining future steps.
  WorldSnapshot snapshot_at(double at_time) const {
    WorldSnapshot snap;
    snap.time = at_time;
    SnapshotVehicle ego;
    ego.id = 0;
    ego.state = ego_;
    snap.vehicles.push_back(ego);
    for (const BackgroundVehicle& v : traffic_) {
      SnapshotVehicle sv;
      sv.id = v.id;
      sv.state = v.state;
      snap.vehicles.push_back(sv);
    }
    snap.context = static_context_;
    for (size_t i = 0; i < tpl_.lights.size(); ++i) {
      ContextObject c;
      c.kind = ObjectKind::kTrafficLight;
      c.pose = tpl_.lights[i].pose;
      c.light = light_state(i, at_time);
      snap.context.push_back(c);
    }
    return snap;
  }

  // Advance the whole world one step: the ego by `action`, each background
  // vehicle by its own controller, all synchronously from the same pre-step
  // state.
  void step(const EgoAction& action) {
    last_wraps_.clear();
    std::vector<EgoAction> bg_actions;
    bg_actions.reserve(traffic_.size());
    for (const BackgroundVehicle& v : traffic_)
      bg_actions.push_back(background_action(v));

    ego_ = step_kinematics(ego_, action, kSimDt);
    for (size_t i = 0; i < traffic_.size(); ++i) {
      BackgroundVehicle& v = traffic_[i];
      v.state = step_kinematics(v.state, bg_actions[i], kSimDt);
      const Lane& lane = tpl_.lane_by_id(v.lane);
      if (lane.recycle) {
        // teleport from the end back to the start, carrying the overshoot
        // past the endpoint so the stream spacing is preserved (the raw
        // last point, not pose_at(L), which wraps back to the start)
        const Vec2& end_pt = lane.points.back();
        Vec2 dir = end_pt - lane.points[lane.points.size() - 2];
        dir = dir * (1.0 / dir.norm());
        double overshoot = (v.state.pose.position() - end_pt).dot(dir);
        if (overshoot >= 0.0 && v.s > 0.5 * lane.total_length()) {
          v.state.pose = lane.pose_at(std::min(overshoot, 5.0));
          last_wraps_.push_back(v.id);
        }
      }
      v.s = lane.project(v.state.pose.position()).s;
    }
    time_ += kSimDt;
    ++step_;
  }

 private:
  // IDM + pure pursuit for one background vehicle (computed pre-step).
  EgoAction background_action(const BackgroundVehicle& v) const {
    const Lane& lane = tpl_.lane_by_id(v.lane);
    double L = lane.total_length();
    bool looping = lane.recycle || lane.closed;

    // nearest leader in this lane: other background vehicles, plus the ego
    // when it occupies the lane
    double best_gap = kNoLeaderGap;
    double lead_speed = 0.0;
    double lead_half_len = 0.0;
    auto consider = [&](double s_other, double speed, double half_len) {
      double gap = lane.forward_gap(v.s, s_other);
      if (!looping && gap <= 0.0) return;
      if (looping && gap <= 0.0) gap += L;
      if (gap < best_gap) {
        best_gap = gap;
        lead_speed = speed;
        lead_half_len = half_len;
      }
    };
    for (const BackgroundVehicle& o : traffic_) {
      if (o.id == v.id || o.lane != v.lane) continue;
      consider(o.s, o.state.speed, o.state.half_length);
    }
    // the ego registers as a leader from further out than a same-lane
    // vehicle would, so the stream starts yielding while it noses in
    Lane::Projection ep = lane.project(ego_.pose.position());
    if (std::fabs(ep.lateral) <= 0.8 * lane.width)
      consider(ep.s, ego_.speed, ego_.half_length);

    double gap = best_gap;
    if (std::isfinite(gap)) {
      gap -= v.state.half_length + lead_half_len;  // bumper-to-bumper
      gap = std::max(0.1, gap);
    }
    EgoAction a;
    a.accel = adaptive_accel(v.state.speed, v.params, gap, lead_speed);

    // steering: chase a point ahead on the centerline; past the end of an
    // open lane, extrapolate straight so the wrap seam does not bend the path
    double ld = std::max(4.0, 1.0 * v.state.speed);
    double target_s = v.s + ld;
    Vec2 target;
    if (!lane.closed && target_s > L) {
      Pose2 end = lane.pose_at(L);
      Vec2 dir = end.heading_vec();
      target = end.position() + dir * (target_s - L);
    } else {
      target = lane.pose_at(target_s).position();
    }
    a.steer = pure_pursuit_steer(v.state.pose, target);
    return a;
  }

  void build_static_context() {
    // road points: every lane sampled at fixed spacing
    for (const Lane& lane : tpl_.lanes) {
      double L = lane.total_length();
      for (double s = 0.0; s < L; s += 5.0) {
        ContextObject c;
        c.kind = ObjectKind::kRoadPoint;
        c.pose = lane.pose_at(s);
        c.lane_width = lane.width;
        static_context_.push_back(c);
      }
    }
    // goal waypoints: the route subsampled, ordered
    double RL = route_.total_length();
    std::vector<double> stops;
    for (double s = 0.0; s < RL; s += 15.0) stops.push_back(s);
    stops.push_back(RL);
    for (size_t i = 0; i < stops.size(); ++i) {
      ContextObject c;
      c.kind = ObjectKind::kGoalWaypoint;
      c.pose = route_.pose_at(stops[i]);
      c.lane_width = route_.width;
      c.goal_seq = int(i);
      c.goal_total = int(stops.size());
      static_context_.push_back(c);
    }
  }

  ScenarioTemplate tpl_;
  Lane route_;
  uint64_t seed_ = 0;
  double time_ = 0.0;
  int step_ = 0;
  VehicleState ego_;
  std::vector<BackgroundVehicle> traffic_;
  std::vector<double> light_offsets_;
  std::vector<ContextObject> static_context_;
  std::vector<int> last_wraps_;
};

// --- infraction monitoring ------------------------------------------------------

// Incremental outcome checker; detect_infractions replays a log through the
// same code so summaries can never drift from the step data.
class InfractionMonitor {
 public:
  InfractionMonitor(const SimConfig& cfg, Vec2 goal, double goal_radius)
      : cfg_(cfg), goal_(goal), goal_radius_(goal_radius) {}

  const std::vector<InfractionEvent>& events() const { return events_; }

  // Inspect the post-step state; returns an outcome when the episode ends.
  std::optional<Outcome> observe(int step, const VehicleState& ego,
                                 const std::vector<SnapshotVehicle>& others,
                                 const std::vector<ContextObject>& context) {
    for (const SnapshotVehicle& o : others) {
      if (o.id == 0) continue;
      if (vehicles_overlap(ego, o.state)) {
        events_.push_back({"crash", step, o.id});
        return Outcome::kCrash;
      }
    }
    if (distance(ego.pose.position(), goal_) <= goal_radius_) {
      events_.push_back({"goal", step, -1});
      return Outcome::kSuccess;
    }
    if (ego.speed < cfg_.static_speed && !red_light_excuse(ego, context)) {
      ++static_run_;
      if (static_run_ * cfg_.dt >= cfg_.static_timeout) {
        events_.push_back({"static", step, -1});
        return Outcome::kStatic;
      }
    } else {
      static_run_ = 0;
    }
    return std::nullopt;
  }

 private:
  bool red_light_excuse(const VehicleState& ego,
                        const std::vector<ContextObject>& context) const {
    for (const ContextObject& c : context) {
      if (c.kind != ObjectKind::kTrafficLight) continue;
      if (c.light == LightState::kGreen) continue;
      Vec2 local = to_local(ego.pose, c.pose.position());
      if (local.x >= -3.0 && local.x <= cfg_.red_excuse_dist &&
          std::fabs(local.y) <= 5.0)
        return true;
    }
    return false;
  }

  SimConfig cfg_;
  Vec2 goal_;
  double goal_radius_ = 2.5;
  int static_run_ = 0;
  std::vector<InfractionEvent> events_;
};

// --- episode log --------------------------------------------------------------

struct EpisodeLog {
  std::string template_id;
  uint64_t scenario_seed = 0;
  std::string policy_name;
  uint64_t policy_seed = 0;
  double dt = kSimDt;
  Outcome outcome = Outcome::kTimeout;

  struct Step {
    double time = 0.0;
    std::vector<std::pair<int, VehicleState>> vehicles;  // ego id 0 first
    std::vector<LightState> lights;
    std::vector<int> wrapped_ids;
    EgoAction ego_action;
  };
  std::vector<Step> steps;
  std::vector<InfractionEvent> events;
};

struct EpisodeResult {
  Outcome outcome = Outcome::kTimeout;
  int steps = 0;
  std::vector<InfractionEvent> infractions;
};

// Called once per control step before stepping, with the pre-step world.
using StepObserver = std::function<void(const World&, const WorldSnapshot&)>;
using Policy = std::function<EgoAction(const World&, const WorldSnapshot&)>;

inline EpisodeResult run_episode(World& world, const Policy& policy,
                                 const SimConfig& cfg = {},
                                 EpisodeLog* log = nullptr,
                                 const StepObserver& observer = {}) {
  InfractionMonitor monitor(cfg, world.goal_point(),
                            world.scenario().goal_radius);
  if (log) {
    log->template_id = world.scenario().id;
    log->scenario_seed = world.seed();
    log->dt = cfg.dt;
    log->steps.clear();
    log->events.clear();
  }
  EpisodeResult result;
  for (int step = 0; step < cfg.max_steps; ++step) {
    WorldSnapshot snap = world.snapshot();
    if (observer) observer(world, snap);
    EgoAction action = policy(world, snap);

    world.step(action);
    WorldSnapshot after = world.snapshot();
    if (log) {
      EpisodeLog::Step rec;
      rec.time = world.time();
      for (const SnapshotVehicle& v : after.vehicles)
        rec.vehicles.emplace_back(v.id, v.state);
      for (const ContextObject& c : after.context)
        if (c.kind == ObjectKind::kTrafficLight) rec.lights.push_back(c.light);
      rec.wrapped_ids = world.last_wraps();
      rec.ego_action = action;
      log->steps.push_back(std::move(rec));
    }
    result.steps = step + 1;
    std::optional<Outcome> done =
        monitor.observe(step, world.ego(), after.vehicles, after.context);
    if (done) {
      result.outcome = *done;
      result.infractions = monitor.events();
      if (log) {
        log->outcome = *done;
        log->events = monitor.events();
      }
      return result;
    }
  }
  result.outcome = Outcome::kTimeout;
  result.infractions = monitor.events();
  if (log) {
    log->outcome = result.outcome;
    log->events = monitor.events();
  }
  return result;
}

// Replay a log through the monitor; recomputes the outcome from raw steps.
inline EpisodeResult detect_infractions(const EpisodeLog& log,
                                        const SimConfig& cfg, Vec2 goal,
                                        double goal_radius) {
  if (log.steps.empty())
    throw std::runtime_error("detect_infractions: empty history");
  InfractionMonitor monitor(cfg, goal, goal_radius);
  ScenarioTemplate tpl = find_template(log.template_id);
  EpisodeResult result;
  for (size_t i = 0; i < log.steps.size(); ++i) {
    const EpisodeLog::Step& st = log.steps[i];
    std::vector<SnapshotVehicle> vehicles;
    VehicleState ego;
    for (const auto& [id, state] : st.vehicles) {
      SnapshotVehicle v;
      v.id = id;
      v.state = state;
      vehicles.push_back(v);
      if (id == 0) ego = state;
    }
    std::vector<ContextObject> lights;
    for (size_t li = 0; li < st.lights.size() && li < tpl.lights.size(); ++li) {
      ContextObject c;
      c.kind = ObjectKind::kTrafficLight;
      c.pose = tpl.lights[li].pose;
      c.light = st.lights[li];
      lights.push_back(c);
    }
    result.steps = int(i) + 1;
    std::optional<Outcome> done = monitor.observe(int(i), ego, vehicles, lights);
    if (done) {
      result.outcome = *done;
      result.infractions = monitor.events();
      return result;
    }
  }
  result.outcome = Outcome::kTimeout;
  result.infractions = monitor.events();
  return result;
}

// --- log serialization -----------------------------------------------------------

inline std::string episode_log_to_text(const EpisodeLog& log) {
  std::ostringstream os;
  os << "episode v1 template " << log.template_id << " seed "
     << log.scenario_seed << " policy " << log.policy_name << " policy_seed "
     << log.policy_seed << " dt " << format_double(log.dt) << "\n";
  for (const auto& st : log.steps) {
    os << "step " << format_double(st.time) << " action "
       << format_double(st.ego_action.accel) << " "
       << format_double(st.ego_action.steer) << "\n";
    for (const auto& [id, v] : st.vehicles)
      os << "veh " << id << " " << format_double(v.pose.x) << " "
         << format_double(v.pose.y) << " " << format_double(v.pose.theta)
         << " " << format_double(v.speed) << " "
         << format_double(v.half_length) << " " << format_double(v.half_width)
         << " " << format_double(v.speed_limit) << "\n";
    for (LightState l : st.lights)
      os << "light "
         << (l == LightState::kRed ? "red"
                                   : l == LightState::kYellow ? "yellow"
                                                              : "green")
         << "\n";
    for (int id : st.wrapped_ids) os << "wrap " << id << "\n";
  }
  for (const InfractionEvent& e : log.events)
    os << "event " << e.type << " " << e.step << " " << e.other_id << "\n";
  os << "outcome " << outcome_name(log.outcome) << "\n";
  return os.str();
}

inline EpisodeLog episode_log_from_text(const std::string& text) {
  EpisodeLog log;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  auto fail = [&](const std::string& why) {
    throw std::runtime_error("episode log line " + std::to_string(lineno) +
                             ": " + why);
  };
  if (!std::getline(is, line)) fail("empty");
  ++lineno;
  {
    std::vector<std::string> f = split(trim(line), ' ');
    if (f.size() < 12 || f[0] != "episode" || f[1] != "v1") fail("bad header");
    log.template_id = f[3];
    log.scenario_seed = std::stoull(f[5]);
    log.policy_name = f[7];
    log.policy_seed = std::stoull(f[9]);
    log.dt = std::stod(f[11]);
  }
  while (std::getline(is, line)) {
    ++lineno;
    std::vector<std::string> f = split(trim(line), ' ');
    if (f.empty() || f[0].empty()) continue;
    const std::string& k = f[0];
    if (k == "step") {
      if (f.size() < 5) fail("short step");
      EpisodeLog::Step st;
      st.time = std::stod(f[1]);
      st.ego_action.accel = std::stod(f[3]);
      st.ego_action.steer = std::stod(f[4]);
      log.steps.push_back(std::move(st));
    } else if (k == "veh") {
      if (f.size() < 9) fail("short veh");
      if (log.steps.empty()) fail("veh before step");
      VehicleState v;
      v.pose = {std::stod(f[2]), std::stod(f[3]), std::stod(f[4])};
      v.speed = std::stod(f[5]);
      v.half_length = std::stod(f[6]);
      v.half_width = std::stod(f[7]);
      v.speed_limit = std::stod(f[8]);
      log.steps.back().vehicles.emplace_back(std::stoi(f[1]), v);
    } else if (k == "light") {
      if (f.size() < 2) fail("short light");
      if (log.steps.empty()) fail("light before step");
      LightState l = f[1] == "red" ? LightState::kRed
                     : f[1] == "yellow" ? LightState::kYellow
                                        : LightState::kGreen;
      log.steps.back().lights.push_back(l);
    } else if (k == "wrap") {
      if (f.size() < 2) fail("short wrap");
      if (log.steps.empty()) fail("wrap before step");
      log.steps.back().wrapped_ids.push_back(std::stoi(f[1]));
    } else if (k == "event") {
      if (f.size() < 4) fail("short event");
      log.events.push_back({f[1], std::stoi(f[2]), std::stoi(f[3])});
    } else if (k == "outcome") {
      if (f.size() < 2) fail("short outcome");
      log.outcome = outcome_from_name(f[1]);
    } else {
      fail("unknown key '" + k + "'");
    }
  }
  return log;
}

}  // namespace modeplan
