#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <vector>

#include "modeplan/collision.hpp"
#include "modeplan/forecaster.hpp"
#include "modeplan/rng.hpp"
#include "modeplan/world.hpp"

namespace modeplan {

// --- reward -----------------------------------------------------------------

struct RewardWeights {
  double beta_coll = 20.0;
  double beta_lane = 0.1;
  double beta_speed = 1.0;
  double beta_light = 0.0;
};

// Coefficient presets for the two benchmark suites.
inline RewardWeights merge_weights() { return {20.0, 0.1, 1.0, 0.0}; }
inline RewardWeights longest6_weights() { return {20.0, 1.0, 1.0, 4.0}; }

struct RewardContext {
  const Lane* route = nullptr;  // centerline to track; its width scores R_lane
  double speed_limit = 8.0;
  std::vector<ContextObject> lights;  // signals with their current state
};

struct RewardResult {
  double value = 0.0;
  bool terminate = false;
};

// True when `light` governs the stretch of road just ahead of the ego.
inline bool light_faces_ego(const Pose2& ego, const Pose2& light,
                            double max_ahead = 20.0) {
  Vec2 local = to_local(ego, light.position());
  return local.x >= -3.0 && local.x <= max_ahead && std::fabs(local.y) <= 5.0;
}

// Weighted sum of the four shaped terms. A box overlap contributes
// -beta_coll and flags termination; lane and speed terms fall off linearly
// from 1 at perfect tracking; a red light ahead charges in proportion to how
// fast the ego runs it. Every term enters the sum even on the crash step.
inline RewardResult reward(const VehicleState& ego,
                           const std::vector<VehicleState>& others,
                           const RewardContext& ctx, const RewardWeights& w) {
  if (w.beta_coll < 0.0 || w.beta_lane < 0.0 || w.beta_speed < 0.0 ||
      w.beta_light < 0.0)
    throw std::runtime_error("reward: negative weight");
  if (!ctx.route) throw std::runtime_error("reward: missing route context");

  RewardResult out;
  double r_coll = 0.0;
  for (const VehicleState& o : others)
    if (vehicles_overlap(ego, o)) {
      r_coll = -1.0;
      out.terminate = true;
      break;
    }
  double lateral = ctx.route->project(ego.pose.position()).lateral;
  double r_lane = 1.0 - std::fabs(lateral) / (0.5 * ctx.route->width);
  double r_speed =
      1.0 - std::fabs(ego.speed - ctx.speed_limit) / ctx.speed_limit;
  double r_light = 0.0;
  for (const ContextObject& c : ctx.lights)
    if (c.kind == ObjectKind::kTrafficLight && c.light == LightState::kRed &&
        light_faces_ego(ego.pose, c.pose)) {
      r_light = -ego.speed / ctx.speed_limit;
      break;
    }
  out.value = w.beta_coll * r_coll + w.beta_lane * r_lane +
              w.beta_speed * r_speed + w.beta_light * r_light;
  return out;
}

inline double discounted_return(const std::vector<double>& rewards,
                                double gamma) {
  double total = 0.0, g = 1.0;
  for (double r : rewards) {
    total += g * r;
    g *= gamma;
  }
  return total;
}

// --- planner configuration ---------------------------------------------------

struct PlannerConfig {
  int horizon_steps = 15;  // T, imagined control steps per rollout
  int samples = 8;         // N, non-ego mode draws per ego mode
  double gamma = 0.95;
  RewardWeights weights = merge_weights();
  double kp_speed = 1.0;
  double kp_heading = 2.0;
  double accel_clamp = 3.0;
  double steer_clamp = 0.5;
  double lookahead_m = 0.0;  // advisory; executors may ignore it
  double obs_range = 50.0;
  VectorizeCaps caps;

  void validate() const {
    if (horizon_steps < 1) throw std::runtime_error("planner: T < 1");
    if (samples < 1) throw std::runtime_error("planner: N < 1");
    if (gamma <= 0.0 || gamma > 1.0)
      throw std::runtime_error("planner: gamma outside (0, 1]");
  }
};

struct Waypoint {
  Pose2 pose;
  double speed = 0.0;
};

// Waypoint tracking: proportional speed error and proportional bearing to
// the target in the ego frame, both clamped. A target equal to the current
// state commands (0, 0).
inline EgoAction pid_control(const VehicleState& current,
                             const Waypoint& target,
                             const PlannerConfig& cfg = {}) {
  EgoAction a;
  a.accel = std::clamp(cfg.kp_speed * (target.speed - current.speed),
                       -cfg.accel_clamp, cfg.accel_clamp);
  Vec2 local = to_local(current.pose, target.pose.position());
  double bearing = std::atan2(local.y, local.x);
  a.steer =
      std::clamp(cfg.kp_heading * bearing, -cfg.steer_clamp, cfg.steer_clamp);
  return a;
}

// --- rollouts -----------------------------------------------------------------

// One imagined future under frozen mode choices. `states[t]` holds the
// post-step vehicle states aligned with the slots of the initial
// observation; rewards stop at the step that terminated.
struct RolloutSample {
  std::vector<std::vector<VehicleState>> states;
  std::vector<double> rewards;
  int terminated_at = -1;
};

namespace detail {

// Inverse-CDF draw from a categorical distribution.
inline int draw_mode(const std::vector<double>& p, Rng& rng) {
  double u = rng.uniform(), acc = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    acc += p[i];
    if (u < acc) return int(i);
  }
  return int(p.size()) - 1;
}

// Shared rollout core. When `sampler` is non-null, non-ego modes are drawn
// at t=0 from the first forward pass's own mode probabilities, so the draw
// costs no extra model call; otherwise `fixed` supplies every slot.
inline RolloutSample run_rollout(const Forecaster& model, const World& world,
                                 const WorldSnapshot& snap0, int ego_mode,
                                 const ModeAssignment* fixed, Rng* sampler,
                                 const PlannerConfig& cfg,
                                 Waypoint* ego_first = nullptr) {
  cfg.validate();
  FeatureSet fs = vectorize(snap0, 0, cfg.obs_range, cfg.caps);
  if (fixed && int(fixed->z.size()) != fs.num_vehicles())
    throw std::runtime_error("rollout: assignment size mismatch");
  const int K = model.params().config.k_modes;
  if (ego_mode < 0 || ego_mode >= K)
    throw std::runtime_error("rollout: ego mode out of range");

  // Latent modes are carried per vehicle id so re-vectorization cannot
  // scramble them between steps.
  std::map<int, int> mode_of;
  mode_of[0] = ego_mode;
  if (fixed)
    for (int a = 1; a < fs.num_vehicles(); ++a)
      mode_of[fs.vehicle_ids[size_t(a)]] = fixed->z[size_t(a)];

  // The imagined world carries every snapshot vehicle; ones outside the
  // observation window simply hold their last state.
  std::vector<int> ids;
  std::vector<VehicleState> imagined;
  size_t ego_idx = 0;
  for (size_t i = 0; i < snap0.vehicles.size(); ++i) {
    ids.push_back(snap0.vehicles[i].id);
    imagined.push_back(snap0.vehicles[i].state);
    if (snap0.vehicles[i].id == 0) ego_idx = i;
  }
  std::vector<int> slot0_ids = fs.vehicle_ids;

  RewardContext rctx;
  rctx.route = &world.route();
  rctx.speed_limit = world.scenario().speed_limit;

  RolloutSample out;
  double time = snap0.time;
  for (int t = 0; t < cfg.horizon_steps; ++t) {
    TrajectoryBatch tb = model.predict(fs);  // exactly one forward per step
    ModeAssignment za;
    for (int a = 0; a < fs.num_vehicles(); ++a) {
      int id = fs.vehicle_ids[size_t(a)];
      auto it = mode_of.find(id);
      if (it == mode_of.end()) {
        int z;
        if (t == 0 && sampler) {
          // z ~ P(mode | scene): the step-0 draw that diversifies samples
          z = draw_mode(tb.mode_probs(a), *sampler);
        } else {
          // a vehicle that entered the window mid-rollout: most likely mode
          std::vector<double> p = tb.mode_probs(a);
          z = int(std::max_element(p.begin(), p.end()) - p.begin());
        }
        it = mode_of.emplace(id, z).first;
      }
      za.z.push_back(it->second);
    }
    if (t == 0 && ego_first) {
      ego_first->pose = make_pose(tb.mean_at(ego_mode, 0, 0, 0),
                                  tb.mean_at(ego_mode, 0, 0, 1),
                                  tb.mean_at(ego_mode, 0, 0, 2));
      ego_first->speed = std::max(0.0, tb.mean_at(ego_mode, 0, 0, 3));
    }

    std::vector<VehicleState> next = model.step_from_batch(tb, fs, za);
    for (int a = 0; a < fs.num_vehicles(); ++a) {
      int id = fs.vehicle_ids[size_t(a)];
      for (size_t i = 0; i < ids.size(); ++i)
        if (ids[i] == id) imagined[i] = next[size_t(a)];
    }
    time += kSimDt;

    // Statics stay put; signals advance on their fixed-time schedule.
    std::vector<ContextObject> context = world.snapshot_at(time).context;
    rctx.lights.clear();
    for (const ContextObject& c : context)
      if (c.kind == ObjectKind::kTrafficLight) rctx.lights.push_back(c);

    std::vector<VehicleState> others;
    for (size_t i = 0; i < imagined.size(); ++i)
      if (i != ego_idx) others.push_back(imagined[i]);
    RewardResult r = reward(imagined[ego_idx], others, rctx, cfg.weights);

    std::vector<VehicleState> slot_states;
    for (int id : slot0_ids)
      for (size_t i = 0; i < ids.size(); ++i)
        if (ids[i] == id) slot_states.push_back(imagined[i]);
    out.states.push_back(std::move(slot_states));
    out.rewards.push_back(r.value);
    if (r.terminate) {
      out.terminated_at = t;
      break;
    }

    WorldSnapshot snap;
    snap.time = time;
    for (size_t i = 0; i < ids.size(); ++i) {
      SnapshotVehicle v;
      v.id = ids[i];
      v.state = imagined[i];
      snap.vehicles.push_back(v);
    }
    snap.context = std::move(context);
    fs = vectorize(snap, 0, cfg.obs_range, cfg.caps);
  }
  return out;
}

// Stream id for sample n of a plan, shared by every candidate ego mode so
// the non-ego draws act as common random numbers across the argmax.
inline uint64_t sample_stream(int n) { return 0x9e3d0000ull + uint64_t(n); }

}  // namespace detail

// Autoregressive rollout under a fixed, time-consistent mode assignment
// (slot-aligned with the vectorization of `snap0`): one forward pass per
// step, rewards truncated at termination.
inline RolloutSample rollout(const Forecaster& model, const World& world,
                             const WorldSnapshot& snap0,
                             const ModeAssignment& assignment,
                             const PlannerConfig& cfg) {
  if (assignment.z.empty())
    throw std::runtime_error("rollout: empty assignment");
  return detail::run_rollout(model, world, snap0, assignment.z[0], &assignment,
                             nullptr, cfg);
}

// --- mode evaluation and planning ----------------------------------------------

struct ModeEstimate {
  double mean = 0.0;
  std::vector<double> per_sample;  // discounted return of each rollout
  int64_t steps = 0;               // total imagined steps across samples
};

// Expected discounted return of committing the ego to one mode: N rollouts
// with the other agents' modes drawn from the step-0 predictive
// distribution, averaged. Sample n's rng depends only on (plan_seed, n), so
// every candidate ego mode sees the same draws.
inline ModeEstimate evaluate_ego_mode(const Forecaster& model,
                                      const World& world,
                                      const WorldSnapshot& snap0, int ego_mode,
                                      const PlannerConfig& cfg,
                                      uint64_t plan_seed,
                                      Waypoint* ego_first = nullptr) {
  cfg.validate();
  ModeEstimate est;
  for (int n = 0; n < cfg.samples; ++n) {
    Rng rng(plan_seed, detail::sample_stream(n));
    RolloutSample rs =
        detail::run_rollout(model, world, snap0, ego_mode, nullptr, &rng, cfg,
                            n == 0 ? ego_first : nullptr);
    est.per_sample.push_back(discounted_return(rs.rewards, cfg.gamma));
    est.steps += int64_t(rs.rewards.size());
  }
  for (double v : est.per_sample) est.mean += v;
  est.mean /= double(cfg.samples);
  return est;
}

struct PlanResult {
  int mode = 0;
  Waypoint target;             // chosen mode's first-step ego prediction
  std::vector<double> scores;  // one estimate per ego mode
  int64_t forwards = 0;        // model calls spent on this plan
  int64_t steps_rolled = 0;    // imagined steps: K * N * T_effective
};

// Closed-loop plan: score all K ego modes by imagined rollout, pick the
// argmax (ties to the lower index), and hand back that mode's first-step
// ego waypoint for tracking.
inline PlanResult plan(const Forecaster& model, const World& world,
                       const WorldSnapshot& snap0, const PlannerConfig& cfg,
                       uint64_t plan_seed) {
  cfg.validate();
  const int K = model.params().config.k_modes;
  PlanResult out;
  int64_t before = model.forward_count();
  std::vector<Waypoint> firsts(static_cast<size_t>(K));
  for (int k = 0; k < K; ++k) {
    ModeEstimate est = evaluate_ego_mode(model, world, snap0, k, cfg,
                                         plan_seed, &firsts[size_t(k)]);
    out.scores.push_back(est.mean);
    out.steps_rolled += est.steps;
    if (est.mean > out.scores[size_t(out.mode)]) out.mode = k;
  }
  out.target = firsts[size_t(out.mode)];
  out.forwards = model.forward_count() - before;
  return out;
}

// Open-loop plan: a single forward pass, after which every agent slides
// along its predicted waypoints without reacting. Each ego mode is scored
// against N sampled non-ego assignments over min(H, T) steps with the same
// reward and discount; collisions truncate the score.
inline PlanResult open_loop_plan(const Forecaster& model, const World& world,
                                 const WorldSnapshot& snap0,
                                 const PlannerConfig& cfg,
                                 uint64_t plan_seed) {
  cfg.validate();
  FeatureSet fs = vectorize(snap0, 0, cfg.obs_range, cfg.caps);
  int64_t before = model.forward_count();
  TrajectoryBatch tb = model.predict(fs);  // the plan's only model call
  const int A = fs.num_vehicles();
  const int H = std::min(tb.H, cfg.horizon_steps);

  // One assignment per sample, drawn exactly as the closed-loop planner
  // would at its step 0.
  std::vector<std::vector<int>> draws(static_cast<size_t>(cfg.samples));
  for (int n = 0; n < cfg.samples; ++n) {
    Rng rng(plan_seed, detail::sample_stream(n));
    for (int a = 1; a < A; ++a)
      draws[size_t(n)].push_back(detail::draw_mode(tb.mode_probs(a), rng));
  }

  // Vehicles beyond the observation window hold their snapshot state.
  std::vector<VehicleState> frozen;
  for (const SnapshotVehicle& v : snap0.vehicles) {
    bool in_fs = false;
    for (int id : fs.vehicle_ids) in_fs = in_fs || id == v.id;
    if (!in_fs) frozen.push_back(v.state);
  }

  // The signal schedule over the horizon, shared by every (mode, sample).
  std::vector<std::vector<ContextObject>> lights(static_cast<size_t>(H));
  for (int h = 0; h < H; ++h)
    for (const ContextObject& c :
         world.snapshot_at(snap0.time + (h + 1) * kSimDt).context)
      if (c.kind == ObjectKind::kTrafficLight) lights[size_t(h)].push_back(c);

  auto state_at = [&](int z, int a, int h) {
    VehicleState s = fs.vehicle_states[size_t(a)];
    s.pose = make_pose(tb.mean_at(z, a, h, 0), tb.mean_at(z, a, h, 1),
                       tb.mean_at(z, a, h, 2));
    s.speed = std::max(0.0, tb.mean_at(z, a, h, 3));
    return s;
  };

  RewardContext rctx;
  rctx.route = &world.route();
  rctx.speed_limit = world.scenario().speed_limit;

  PlanResult out;
  for (int k = 0; k < tb.K; ++k) {
    double score = 0.0;
    for (int n = 0; n < cfg.samples; ++n) {
      double total = 0.0, g = 1.0;
      for (int h = 0; h < H; ++h) {
        std::vector<VehicleState> others = frozen;
        for (int a = 1; a < A; ++a)
          others.push_back(state_at(draws[size_t(n)][size_t(a - 1)], a, h));
        rctx.lights = lights[size_t(h)];
        RewardResult r = reward(state_at(k, 0, h), others, rctx, cfg.weights);
        total += g * r.value;
        g *= cfg.gamma;
        ++out.steps_rolled;
        if (r.terminate) break;
      }
      score += total;
    }
    out.scores.push_back(score / double(cfg.samples));
    if (out.scores[size_t(k)] > out.scores[size_t(out.mode)]) out.mode = k;
  }
  out.target.pose =
      make_pose(tb.mean_at(out.mode, 0, 0, 0), tb.mean_at(out.mode, 0, 0, 1),
                tb.mean_at(out.mode, 0, 0, 2));
  out.target.speed = std::max(0.0, tb.mean_at(out.mode, 0, 0, 3));
  out.forwards = model.forward_count() - before;
  return out;
}

// Imitation baseline: one forward pass, follow the ego's most likely mode.
inline Waypoint imitation_policy(const Forecaster& model,
                                 const WorldSnapshot& snap0,
                                 const PlannerConfig& cfg) {
  FeatureSet fs = vectorize(snap0, 0, cfg.obs_range, cfg.caps);
  TrajectoryBatch tb = model.predict(fs);
  std::vector<double> p = tb.mode_probs(0);
  int k = int(std::max_element(p.begin(), p.end()) - p.begin());
  Waypoint w;
  w.pose = make_pose(tb.mean_at(k, 0, 0, 0), tb.mean_at(k, 0, 0, 1),
                     tb.mean_at(k, 0, 0, 2));
  w.speed = std::max(0.0, tb.mean_at(k, 0, 0, 3));
  return w;
}

}  // namespace modeplan
