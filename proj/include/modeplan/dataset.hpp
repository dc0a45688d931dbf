#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "modeplan/heuristic_policy.hpp"
#include "modeplan/scene.hpp"
#include "modeplan/settings.hpp"
#include "modeplan/threading.hpp"
#include "modeplan/util.hpp"
#include "modeplan/world.hpp"

namespace modeplan {

// One training sample: the observation at a step plus the realized next H
// steps of every observed agent, as in-frame displacements (the exact form
// integrate_displacements unrolls). Steps past the episode end or across a
// recycle wrap are masked and zeroed.
struct DatasetRecord {
  std::string template_id;
  uint64_t scenario_seed = 0;
  int step_index = 0;
  int H = 0;
  FeatureSet fs;
  std::vector<double> futures;  // [A*H*4]
  std::vector<uint8_t> valid;   // [A*H]
};

inline constexpr int kDatasetSchemaVersion = 1;
inline constexpr int kVehicleSerDim = 8;   // id x y theta speed hl hw limit
inline constexpr int kContextSerDim = 14;  // kind pose attrs (see schema)

inline std::string dataset_schema_text() {
  return
      "# modeplan-dataset v" + std::to_string(kDatasetSchemaVersion) + "\n"
      "# one record per line: space-separated key=value fields, float64\n"
      "# arrays base64-encoded little-endian\n"
      "# fields: template=<id> seed=<u64> step=<int> A=<vehicles> C=<context>\n"
      "#         H=<horizon> veh=<f64[A*8]> ctx=<f64[C*14]> fut=<f64[A*H*4]>\n"
      "#         mask=<u8[A*H]>\n"
      "# veh row: id x y theta speed half_length half_width speed_limit\n"
      "# ctx row: kind x y theta lane_width in_intersection can_change_left\n"
      "#          can_change_right box_half_length box_half_width light\n"
      "#          ped_speed goal_seq goal_total\n"
      "# fut row: per-step in-frame displacement dx dy dtheta dspeed\n";
}

// --- record serialization ---------------------------------------------------

inline std::string serialize_record(const DatasetRecord& rec) {
  const FeatureSet& fs = rec.fs;
  int A = fs.num_vehicles(), C = fs.num_context();
  if (int(rec.futures.size()) != A * rec.H * 4 ||
      int(rec.valid.size()) != A * rec.H)
    throw std::runtime_error("serialize_record: future shape mismatch");

  std::vector<double> veh;
  veh.reserve(size_t(A) * kVehicleSerDim);
  for (int a = 0; a < A; ++a) {
    const VehicleState& s = fs.vehicle_states[size_t(a)];
    veh.insert(veh.end(),
               {double(fs.vehicle_ids[size_t(a)]), s.pose.x, s.pose.y,
                s.pose.theta, s.speed, s.half_length, s.half_width,
                s.speed_limit});
  }
  std::vector<double> ctx;
  ctx.reserve(size_t(C) * kContextSerDim);
  for (int c = 0; c < C; ++c) {
    const ContextObject& o = fs.context_objects[size_t(c)];
    ctx.insert(ctx.end(),
               {double(int(o.kind)), o.pose.x, o.pose.y, o.pose.theta,
                o.lane_width, o.in_intersection ? 1.0 : 0.0,
                o.can_change_left ? 1.0 : 0.0, o.can_change_right ? 1.0 : 0.0,
                o.box_half_length, o.box_half_width, double(int(o.light)),
                o.speed, double(o.goal_seq), double(o.goal_total)});
  }
  std::string line;
  line += "template=" + rec.template_id;
  line += " seed=" + std::to_string(rec.scenario_seed);
  line += " step=" + std::to_string(rec.step_index);
  line += " A=" + std::to_string(A);
  line += " C=" + std::to_string(C);
  line += " H=" + std::to_string(rec.H);
  line += " veh=" + base64_encode_doubles(veh);
  line += " ctx=" + base64_encode_doubles(ctx);
  line += " fut=" + base64_encode_doubles(rec.futures);
  line += " mask=" + base64_encode(rec.valid.data(), rec.valid.size());
  return line;
}

inline DatasetRecord parse_record(const std::string& line) {
  std::map<std::string, std::string> kv;
  for (const std::string& tok : split(line, ' ')) {
    if (tok.empty()) continue;
    size_t eq = tok.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("field '" + tok + "' is not key=value");
    kv[tok.substr(0, eq)] = tok.substr(eq + 1);
  }
  for (const char* need :
       {"template", "seed", "step", "A", "C", "H", "veh", "ctx", "fut", "mask"})
    if (!kv.count(need))
      throw std::runtime_error(std::string("missing field '") + need + "'");

  DatasetRecord rec;
  rec.template_id = kv["template"];
  rec.scenario_seed = std::stoull(kv["seed"]);
  rec.step_index = std::stoi(kv["step"]);
  rec.H = std::stoi(kv["H"]);
  int A = std::stoi(kv["A"]);
  int C = std::stoi(kv["C"]);
  if (A < 1 || C < 0 || rec.H < 1 || rec.step_index < 0)
    throw std::runtime_error("non-positive record dimensions");

  std::vector<double> veh = base64_decode_doubles(kv["veh"]);
  std::vector<double> ctx = base64_decode_doubles(kv["ctx"]);
  rec.futures = base64_decode_doubles(kv["fut"]);
  std::vector<uint8_t> mask = base64_decode(kv["mask"]);
  if (int(veh.size()) != A * kVehicleSerDim)
    throw std::runtime_error("veh payload size mismatch");
  if (int(ctx.size()) != C * kContextSerDim)
    throw std::runtime_error("ctx payload size mismatch");
  if (int(rec.futures.size()) != A * rec.H * 4)
    throw std::runtime_error("fut payload size mismatch");
  if (int(mask.size()) != A * rec.H)
    throw std::runtime_error("mask payload size mismatch");
  rec.valid = std::move(mask);

  FeatureSet& fs = rec.fs;
  for (int a = 0; a < A; ++a) {
    const double* r = veh.data() + size_t(a) * kVehicleSerDim;
    VehicleState s;
    s.pose = {r[1], r[2], r[3]};
    s.speed = r[4];
    s.half_length = r[5];
    s.half_width = r[6];
    s.speed_limit = r[7];
    fs.vehicle_ids.push_back(int(r[0]));
    fs.vehicle_states.push_back(s);
    fs.vehicle_poses.push_back(s.pose);
    fs.vehicle_features.push_back(vehicle_raw_features(s, a == 0));
    fs.vehicle_mask.push_back(1);
  }
  for (int c = 0; c < C; ++c) {
    const double* r = ctx.data() + size_t(c) * kContextSerDim;
    int kind = int(r[0]);
    if (kind < int(ObjectKind::kRoadPoint) || kind > int(ObjectKind::kGoalWaypoint))
      throw std::runtime_error("unknown context kind " + std::to_string(kind));
    int light = int(r[10]);
    if (light < int(LightState::kRed) || light > int(LightState::kGreen))
      throw std::runtime_error("unknown light state " + std::to_string(light));
    ContextObject o;
    o.kind = ObjectKind(kind);
    o.pose = {r[1], r[2], r[3]};
    o.lane_width = r[4];
    o.in_intersection = r[5] != 0.0;
    o.can_change_left = r[6] != 0.0;
    o.can_change_right = r[7] != 0.0;
    o.box_half_length = r[8];
    o.box_half_width = r[9];
    o.light = LightState(light);
    o.speed = r[11];
    o.goal_seq = int(r[12]);
    o.goal_total = int(r[13]);
    fs.context_objects.push_back(o);
    fs.context_poses.push_back(o.pose);
    fs.context_features.push_back(context_raw_features(o));
    fs.context_mask.push_back(1);
  }
  return rec;
}

// --- file io ------------------------------------------------------------------

// Writes under a temporary name and renames into place, so readers never see
// a partial dataset; a sidecar `<path>.schema` carries the format notes.
inline void write_dataset(const std::string& path,
                          const std::vector<DatasetRecord>& records) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("dataset: cannot write " + tmp);
    out << dataset_schema_text();
    for (const DatasetRecord& rec : records) out << serialize_record(rec) << "\n";
    if (!out) {
      out.close();
      std::filesystem::remove(tmp);
      throw std::runtime_error("dataset: write failed for " + tmp);
    }
  }
  write_text_file(path + ".schema", dataset_schema_text());
  std::filesystem::rename(tmp, path);
}

inline std::vector<DatasetRecord> read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("dataset: cannot open " + path);
  std::vector<DatasetRecord> records;
  std::string line;
  int line_no = 0;
  bool saw_version = false;
  while (std::getline(in, line)) {
    ++line_no;
    std::string t = trim(line);
    if (t.empty()) continue;
    if (t.front() == '#') {
      if (starts_with(t, "# modeplan-dataset v")) {
        if (t != "# modeplan-dataset v" + std::to_string(kDatasetSchemaVersion))
          throw std::runtime_error("dataset: line " + std::to_string(line_no) +
                                   ": unsupported schema '" + t + "'");
        saw_version = true;
      }
      continue;
    }
    if (!saw_version)
      throw std::runtime_error("dataset: " + path + " has no schema header");
    try {
      records.push_back(parse_record(t));
    } catch (const std::exception& e) {
      throw std::runtime_error("dataset: line " + std::to_string(line_no) +
                               ": " + e.what());
    }
  }
  return records;
}

// --- collection ----------------------------------------------------------------

struct CollectStats {
  int episodes = 0;
  int records = 0;
};

namespace detail {

// All records of one demonstration episode, already serialized. Futures use
// only observed (pre-step) states, so an N-step episode yields N records and
// the last H of them are mask-padded; a recycle wrap masks the remainder of
// that vehicle's future (the teleport is not a realizable motion).
inline std::vector<std::string> collect_episode(const ScenarioTemplate& tpl,
                                                uint64_t collect_seed,
                                                uint64_t stream,
                                                const HarnessSettings& cfg) {
  Rng rng(collect_seed, stream);
  DataPolicyConfig pc = sample_data_policy_config(rng);
  uint64_t world_seed = rng.next_u64();
  World world(tpl, world_seed);
  HeuristicPolicy policy(pc);

  std::vector<FeatureSet> obs;
  std::vector<std::vector<SnapshotVehicle>> states;
  std::vector<std::vector<int>> wraps;  // [i] = ids recycled in step i -> i+1
  StepObserver observer = [&](const World& w, const WorldSnapshot& snap) {
    if (!obs.empty()) wraps.push_back(w.last_wraps());
    obs.push_back(vectorize(snap, 0, cfg.obs_range, cfg.caps()));
    states.push_back(snap.vehicles);
  };
  run_episode(world, policy, cfg.sim_config(), nullptr, observer);

  const int N = int(obs.size());
  const int H = cfg.model.horizon;
  auto state_of = [&](int t, int id) -> const VehicleState* {
    for (const SnapshotVehicle& v : states[size_t(t)])
      if (v.id == id) return &v.state;
    return nullptr;
  };
  auto wrapped = [&](int t, int id) {
    for (int w : wraps[size_t(t)])
      if (w == id) return true;
    return false;
  };

  std::vector<std::string> lines;
  lines.reserve(size_t(N));
  for (int i = 0; i < N; ++i) {
    DatasetRecord rec;
    rec.template_id = tpl.id;
    rec.scenario_seed = world_seed;
    rec.step_index = i;
    rec.H = H;
    rec.fs = obs[size_t(i)];
    int A = rec.fs.num_vehicles();
    rec.futures.assign(size_t(A) * H * 4, 0.0);
    rec.valid.assign(size_t(A) * H, 0);
    for (int a = 0; a < A; ++a) {
      int id = rec.fs.vehicle_ids[size_t(a)];
      VehicleState prev = rec.fs.vehicle_states[size_t(a)];
      for (int h = 1; h <= H; ++h) {
        int t = i + h;
        if (t >= N || wrapped(t - 1, id)) break;
        const VehicleState* cur = state_of(t, id);
        if (!cur) break;
        Vec2 d = to_local(prev.pose, cur->pose.position());
        size_t row = (size_t(a) * H + h - 1) * 4;
        rec.futures[row + 0] = d.x;
        rec.futures[row + 1] = d.y;
        rec.futures[row + 2] = wrap_angle(cur->pose.theta - prev.pose.theta);
        rec.futures[row + 3] = cur->speed - prev.speed;
        rec.valid[size_t(a) * H + h - 1] = 1;
        prev = *cur;
      }
    }
    lines.push_back(serialize_record(rec));
  }
  return lines;
}

}  // namespace detail

// Runs the demonstration grid (one sampled policy config per episode) and
// streams every record to `out_path`. Parallel episodes reduce in episode
// order, so the file is byte-identical for any thread count.
inline CollectStats collect_dataset(const HarnessSettings& cfg,
                                    const std::string& out_path) {
  std::vector<std::pair<ScenarioTemplate, uint64_t>> jobs;
  for (int ti = 0; ti < int(cfg.collect_templates.size()); ++ti) {
    ScenarioTemplate tpl = find_template(cfg.collect_templates[size_t(ti)]);
    for (int e = 0; e < cfg.episodes_per_template; ++e)
      jobs.emplace_back(tpl, uint64_t(ti) * 1000000 + uint64_t(e));
  }

  std::string tmp = out_path + ".tmp";
  CollectStats stats;
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("dataset: cannot write " + tmp);
    out << dataset_schema_text();
    try {
      parallel_ordered<std::vector<std::string>>(
          int(jobs.size()), cfg.threads,
          [&](int i) {
            return detail::collect_episode(jobs[size_t(i)].first,
                                           cfg.collect_seed,
                                           jobs[size_t(i)].second, cfg);
          },
          [&](int, std::vector<std::string>&& lines) {
            for (const std::string& line : lines) out << line << "\n";
            if (!out) throw std::runtime_error("dataset: write failed " + tmp);
            stats.episodes += 1;
            stats.records += int(lines.size());
          });
    } catch (...) {
      out.close();
      std::filesystem::remove(tmp);
      throw;
    }
  }
  write_text_file(out_path + ".schema", dataset_schema_text());
  std::filesystem::rename(tmp, out_path);
  return stats;
}

// --- train/val split ------------------------------------------------------------

// 90/10 split by episode (never by record): every 10th distinct
// (template, seed) episode, in order of first appearance, goes to validation
// so the two sets share no timesteps of any one episode.
inline void split_by_episode(const std::vector<DatasetRecord>& records,
                             std::vector<int>* train_idx,
                             std::vector<int>* val_idx) {
  std::map<std::pair<std::string, uint64_t>, int> episode_ordinal;
  train_idx->clear();
  val_idx->clear();
  for (int i = 0; i < int(records.size()); ++i) {
    auto key = std::make_pair(records[size_t(i)].template_id,
                              records[size_t(i)].scenario_seed);
    auto [it, fresh] = episode_ordinal.emplace(key, int(episode_ordinal.size()));
    (void)fresh;
    if (it->second % 10 == 9)
      val_idx->push_back(i);
    else
      train_idx->push_back(i);
  }
}

}  // namespace modeplan
