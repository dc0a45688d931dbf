#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "modeplan/dataset.hpp"
#include "modeplan/evalrun.hpp"
#include "modeplan/forecaster.hpp"
#include "modeplan/losses.hpp"
#include "modeplan/planner.hpp"
#include "modeplan/render.hpp"
#include "modeplan/settings.hpp"
#include "modeplan/train.hpp"
#include "modeplan/world.hpp"

namespace modeplan {

namespace detail {

// Small model used by the checks that only need structural behavior.
inline ModelConfig selfcheck_model_config() {
  ModelConfig cfg;
  cfg.k_modes = 2;
  cfg.dim = 16;
  cfg.horizon = 4;
  cfg.encoder_layers = 1;
  cfg.decoder_layers = 1;
  cfg.heads = 2;
  cfg.map_attend_k = 6;
  cfg.ff_mult = 2;
  return cfg;
}

inline FeatureSet selfcheck_scene(uint64_t seed) {
  World world(find_template("lane_merge"), seed);
  HeuristicPolicy pol(autopilot_config());
  for (int i = 0; i < 25; ++i) world.step(pol(world, world.snapshot()));
  return vectorize(world.snapshot(), 0, 40.0);
}

}  // namespace detail

// The invariant suite behind `modeplan selfcheck`: one line per property,
// zero exit only when every property holds. These are cheap smoke-level
// versions of the full test-suite properties.
inline int run_selfcheck(std::ostream& os) {
  int failures = 0;
  auto check = [&](const std::string& name, const std::function<bool()>& fn) {
    bool ok = false;
    std::string err;
    try {
      ok = fn();
    } catch (const std::exception& e) {
      err = e.what();
    }
    os << (ok ? "PASS" : "FAIL") << "  " << name;
    if (!ok && !err.empty()) os << "  (" << err << ")";
    os << "\n";
    os.flush();
    if (!ok) ++failures;
  };

  check("rng streams are deterministic", [] {
    Rng a(7, 3), b(7, 3), c(7, 4);
    bool same = true, diff = false;
    for (int i = 0; i < 64; ++i) {
      uint64_t va = a.next_u64();
      same &= va == b.next_u64();
      diff |= va != c.next_u64();
    }
    return same && diff;
  });

  check("config: defaults survive an empty file", [] {
    HarnessSettings base, loaded;
    loaded.apply(ConfigFile::parse(""));
    return base.model.dim == loaded.model.dim &&
           base.planner.samples == loaded.planner.samples &&
           base.epochs == loaded.epochs;
  });

  check("config: unknown keys are rejected", [] {
    HarnessSettings s;
    try {
      s.apply(ConfigFile::parse("[model]\ndims = 64\n"));
      return false;
    } catch (const std::exception&) {
      return true;
    }
  });

  check("dataset: record round-trip is identity", [] {
    HarnessSettings cfg;
    cfg.model.horizon = 4;
    std::vector<std::string> lines = detail::collect_episode(
        find_template("lane_merge"), 11, 0, cfg);
    if (lines.size() < 3) return false;
    for (size_t i : {size_t(0), lines.size() / 2, lines.size() - 1}) {
      DatasetRecord rec = parse_record(lines[i]);
      if (serialize_record(rec) != lines[i]) return false;
    }
    return true;
  });

  check("dataset: same seeds give byte-identical files", [] {
    HarnessSettings cfg;
    cfg.model.horizon = 4;
    cfg.collect_templates = {"lane_merge"};
    cfg.episodes_per_template = 2;
    std::string dir = (std::filesystem::temp_directory_path() /
                       "modeplan_selfcheck").string();
    std::filesystem::create_directories(dir);
    collect_dataset(cfg, dir + "/a.mpds");
    collect_dataset(cfg, dir + "/b.mpds");
    bool same = read_text_file(dir + "/a.mpds") == read_text_file(dir + "/b.mpds");
    std::filesystem::remove_all(dir);
    return same;
  });

  check("dataset: 90/10 split never divides an episode", [] {
    std::vector<DatasetRecord> recs;
    for (int e = 0; e < 20; ++e)
      for (int s = 0; s < 5; ++s) {
        DatasetRecord r;
        r.template_id = "t";
        r.scenario_seed = uint64_t(e);
        r.step_index = s;
        recs.push_back(r);
      }
    std::vector<int> train, val;
    split_by_episode(recs, &train, &val);
    if (int(train.size() + val.size()) != int(recs.size())) return false;
    std::vector<uint64_t> val_eps;
    for (int i : val) val_eps.push_back(recs[size_t(i)].scenario_seed);
    for (int i : train)
      for (uint64_t e : val_eps)
        if (recs[size_t(i)].scenario_seed == e) return false;
    return val.size() == recs.size() / 10;
  });

  check("model: forward is deterministic", [] {
    ModelConfig cfg = detail::selfcheck_model_config();
    ModelParams params = init_model_params(cfg, 3);
    Forecaster model(params);
    FeatureSet fs = detail::selfcheck_scene(5);
    TrajectoryBatch a = model.predict(fs), b = model.predict(fs);
    for (int k = 0; k < cfg.k_modes; ++k)
      for (int t = 0; t < cfg.horizon; ++t)
        for (int d = 0; d < 4; ++d)
          if (a.mean_at(k, 0, t, d) != b.mean_at(k, 0, t, d)) return false;
    return true;
  });

  check("model: predictions are rigid-transform invariant", [] {
    ModelConfig cfg = detail::selfcheck_model_config();
    ModelParams params = init_model_params(cfg, 3);
    Forecaster model(params);
    FeatureSet fs = detail::selfcheck_scene(6);
    double dx = 31.0, dy = -12.0, rot = 0.85;
    FeatureSet moved = fs;
    auto move_pose = [&](Pose2 p) {
      double c = std::cos(rot), s = std::sin(rot);
      return make_pose(c * p.x - s * p.y + dx, s * p.x + c * p.y + dy,
                       p.theta + rot);
    };
    for (auto& p : moved.vehicle_poses) p = move_pose(p);
    for (auto& v : moved.vehicle_states) v.pose = move_pose(v.pose);
    for (auto& p : moved.context_poses) p = move_pose(p);
    for (auto& o : moved.context_objects) o.pose = move_pose(o.pose);
    TrajectoryBatch a = model.predict(fs), b = model.predict(moved);
    double c = std::cos(rot), s = std::sin(rot);
    for (int k = 0; k < cfg.k_modes; ++k)
      for (int t = 0; t < cfg.horizon; ++t) {
        double ax = a.mean_at(k, 0, t, 0), ay = a.mean_at(k, 0, t, 1);
        double ex = c * ax - s * ay + dx, ey = s * ax + c * ay + dy;
        if (std::fabs(ex - b.mean_at(k, 0, t, 0)) > 1e-6 ||
            std::fabs(ey - b.mean_at(k, 0, t, 1)) > 1e-6)
          return false;
      }
    return true;
  });

  check("loss: non-winning modes get exactly zero gradient", [] {
    ModelConfig cfg = detail::selfcheck_model_config();
    ModelParams params = init_model_params(cfg, 9);
    Forecaster model(params);
    FeatureSet fs = detail::selfcheck_scene(7);
    const int A = fs.num_vehicles(), H = cfg.horizon;
    std::vector<double> gt;
    for (int a = 0; a < A; ++a) {
      const VehicleState& v = fs.vehicle_states[size_t(a)];
      for (int t = 0; t < H; ++t) {
        gt.insert(gt.end(), {v.pose.x + 0.8 * (t + 1), v.pose.y, v.pose.theta,
                             v.speed});
      }
    }
    std::vector<uint8_t> valid(size_t(A) * H, 1);
    Graph g(true);
    Forecaster::BuildOut out = model.build(g, fs);
    WtaLoss wta = wta_nll_loss(g, out, cfg.k_modes, H, gt, valid);
    params.store.zero_grads();
    g.backward(wta.loss);
    // rows (a, k, t) of the losing modes must carry exactly zero gradient
    const double* gm = g.grad(out.means);
    const double* gl = g.grad(out.log_stds);
    for (int a = 0; a < A; ++a)
      for (int k = 0; k < cfg.k_modes; ++k) {
        if (k == wta.winner[size_t(a)]) continue;
        for (int t = 0; t < H; ++t)
          for (int d = 0; d < 4; ++d) {
            size_t i = size_t((a * cfg.k_modes + k) * H + t) * 4 + size_t(d);
            if (std::fabs(gm[i]) > 1e-10 || std::fabs(gl[i]) > 1e-10)
              return false;
          }
      }
    return true;
  });

  check("reward: hand-computed preset values", [] {
    Lane lane = make_straight_lane(0, {0, 0}, {100, 0}, 3.5);
    RewardContext ctx;
    ctx.route = &lane;
    ctx.speed_limit = 8.0;
    VehicleState ego;
    ego.pose = make_pose(30, 0, 0);
    ego.speed = 8.0;
    RewardResult merge = reward(ego, {}, ctx, merge_weights());
    if (std::fabs(merge.value - 1.1) > 1e-9) return false;
    ContextObject red;
    red.kind = ObjectKind::kTrafficLight;
    red.pose = make_pose(35, 0, 0);
    red.light = LightState::kRed;
    ctx.lights.push_back(red);
    RewardResult stop = reward(ego, {}, ctx, longest6_weights());
    return std::fabs(stop.value - (-2.0)) < 1e-9;
  });

  check("planner: forward count equals K*N*T on an open road", [] {
    ModelConfig mc = detail::selfcheck_model_config();
    ModelParams params = init_model_params(mc, 4);
    Forecaster model(params);
    ScenarioTemplate tpl = find_template("lane_merge");
    tpl.traffic.clear();  // nothing to collide with: no early termination
    World world(tpl, 3);
    PlannerConfig pc;
    pc.horizon_steps = 3;
    pc.samples = 2;
    model.reset_forward_count();
    PlanResult pr = plan(model, world, world.snapshot(), pc, 77);
    return pr.forwards == int64_t(mc.k_modes) * pc.samples * pc.horizon_steps &&
           pr.forwards == model.forward_count();
  });

  check("episode log: text round-trip preserves the run", [] {
    World world(find_template("t_junction_signal"), 2);
    HeuristicPolicy pol(autopilot_config());
    Policy policy = [&](const World& w, const WorldSnapshot& s) {
      return pol(w, s);
    };
    SimConfig sc;
    sc.max_steps = 40;
    EpisodeLog log;
    run_episode(world, policy, sc, &log);
    EpisodeLog back = episode_log_from_text(episode_log_to_text(log));
    if (back.steps.size() != log.steps.size()) return false;
    for (size_t i = 0; i < log.steps.size(); ++i) {
      if (back.steps[i].vehicles.size() != log.steps[i].vehicles.size())
        return false;
      for (size_t v = 0; v < log.steps[i].vehicles.size(); ++v)
        if (back.steps[i].vehicles[v].second.pose.x !=
            log.steps[i].vehicles[v].second.pose.x)
          return false;
    }
    return back.outcome == log.outcome;
  });

  check("eval: outcome rates sum to 100 and match raw counts", [] {
    HarnessSettings cfg;
    cfg.eval_templates = {"lane_merge", "t_junction"};
    cfg.seeds_per_template = 3;
    RunCounts counts = run_eval_grid(Approach::kAutopilot, nullptr, cfg);
    if (counts.episodes != 6) return false;
    double total = 0.0;
    int raw = 0;
    for (int i = 0; i < 4; ++i) {
      total += counts.pct(i);
      raw += counts.outcome[i];
    }
    return std::fabs(total - 100.0) < 1e-9 && raw == counts.episodes;
  });

  check("sim: demonstration policy clears the template suite", [] {
    // the demonstrator must actually demonstrate: >= 60% success per template
    for (const std::string& id : HarnessSettings::default_suite()) {
      int succ = 0;
      const int n = 8;
      for (uint64_t s = 0; s < n; ++s) {
        World world(find_template(id), s);
        HeuristicPolicy pol(autopilot_config());
        Policy policy = [&](const World& w, const WorldSnapshot& sn) {
          return pol(w, sn);
        };
        if (run_episode(world, policy).outcome == Outcome::kSuccess) ++succ;
      }
      if (succ * 10 < n * 6) return false;
    }
    return true;
  });

  os << (failures == 0 ? "selfcheck: all properties hold\n"
                       : "selfcheck: " + std::to_string(failures) +
                             " properties FAILED\n");
  return failures == 0 ? 0 : 2;
}

}  // namespace modeplan
