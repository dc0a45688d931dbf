#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "modeplan/configfile.hpp"
#include "modeplan/model.hpp"
#include "modeplan/planner.hpp"
#include "modeplan/world.hpp"

namespace modeplan {

// Every tunable of the command-line tools in one place. Construction gives
// the documented defaults; `apply` overlays a config file; explicit CLI
// flags overlay both (resolution order: defaults, then file, then flags).
struct HarnessSettings {
  ModelConfig model;        // [model]
  PlannerConfig planner;    // [planner]

  // [sim] observation + episode limits shared by collect and eval
  double obs_range = 40.0;
  int max_vehicles = 8;
  int max_steps = 360;
  double static_timeout = 30.0;

  // [train]
  int epochs = 30;
  int batch_size = 16;
  double lr = 3e-4;
  double weight_decay = 1e-4;
  uint64_t model_seed = 0;

  // [collect]
  std::vector<std::string> collect_templates = default_suite();
  int episodes_per_template = 40;
  uint64_t collect_seed = 1;

  // [eval]
  std::vector<std::string> eval_templates = default_suite();
  int seeds_per_template = 20;
  uint64_t eval_seed = 1000;
  int threads = 1;

  HarnessSettings() {
    planner.obs_range = obs_range;
    planner.caps.vehicles = max_vehicles;
  }

  static std::vector<std::string> default_suite() {
    return {"lane_merge", "t_junction", "double_lane_change",
            "roundabout_entry"};
  }

  void apply(const ConfigFile& cfg) {
    cfg.require_known(known_keys());
    model.dim = cfg.get_int("model.dim", model.dim);
    model.encoder_layers = cfg.get_int("model.encoder_layers", model.encoder_layers);
    model.decoder_layers = cfg.get_int("model.decoder_layers", model.decoder_layers);
    model.heads = cfg.get_int("model.heads", model.heads);
    model.k_modes = cfg.get_int("model.k_modes", model.k_modes);
    model.horizon = cfg.get_int("model.horizon", model.horizon);
    model.ff_mult = cfg.get_int("model.ff_mult", model.ff_mult);
    model.map_attend_k = cfg.get_int("model.map_attend_k", model.map_attend_k);

    std::string preset = cfg.get_string("planner.preset", "");
    if (preset == "merge")
      planner.weights = merge_weights();
    else if (preset == "longest6")
      planner.weights = longest6_weights();
    else if (!preset.empty())
      throw std::runtime_error("config: planner.preset must be merge or longest6");
    planner.weights.beta_coll = cfg.get_double("planner.beta_collision", planner.weights.beta_coll);
    planner.weights.beta_lane = cfg.get_double("planner.beta_lane", planner.weights.beta_lane);
    planner.weights.beta_speed = cfg.get_double("planner.beta_speed", planner.weights.beta_speed);
    planner.weights.beta_light = cfg.get_double("planner.beta_light", planner.weights.beta_light);
    planner.horizon_steps = cfg.get_int("planner.horizon_steps", planner.horizon_steps);
    planner.samples = cfg.get_int("planner.samples", planner.samples);
    planner.gamma = cfg.get_double("planner.gamma", planner.gamma);
    planner.kp_speed = cfg.get_double("planner.kp_speed", planner.kp_speed);
    planner.kp_heading = cfg.get_double("planner.kp_heading", planner.kp_heading);
    planner.accel_clamp = cfg.get_double("planner.accel_clamp", planner.accel_clamp);
    planner.steer_clamp = cfg.get_double("planner.steer_clamp", planner.steer_clamp);

    obs_range = cfg.get_double("sim.obs_range", obs_range);
    max_vehicles = cfg.get_int("sim.max_vehicles", max_vehicles);
    max_steps = cfg.get_int("sim.max_steps", max_steps);
    static_timeout = cfg.get_double("sim.static_timeout", static_timeout);

    epochs = cfg.get_int("train.epochs", epochs);
    batch_size = cfg.get_int("train.batch_size", batch_size);
    lr = cfg.get_double("train.lr", lr);
    weight_decay = cfg.get_double("train.weight_decay", weight_decay);
    model_seed = cfg.get_u64("train.model_seed", model_seed);

    std::string ct = cfg.get_string("collect.templates", "");
    if (!ct.empty()) collect_templates = parse_list(ct);
    episodes_per_template = cfg.get_int("collect.episodes_per_template", episodes_per_template);
    collect_seed = cfg.get_u64("collect.seed", collect_seed);

    std::string et = cfg.get_string("eval.templates", "");
    if (!et.empty()) eval_templates = parse_list(et);
    seeds_per_template = cfg.get_int("eval.seeds_per_template", seeds_per_template);
    eval_seed = cfg.get_u64("eval.seed", eval_seed);
    threads = cfg.get_int("eval.threads", threads);

    planner.obs_range = obs_range;
    planner.caps.vehicles = max_vehicles;
    planner.validate();
    if (model.dim < 1 || model.k_modes < 1 || model.horizon < 1 ||
        model.heads < 1 || model.dim % model.heads != 0)
      throw std::runtime_error("config: invalid model shape");
    if (max_steps < 1 || epochs < 1 || batch_size < 1 ||
        episodes_per_template < 0 || seeds_per_template < 1 || threads < 1)
      throw std::runtime_error("config: non-positive count");
    if (lr <= 0.0 || weight_decay < 0.0 || obs_range <= 0.0)
      throw std::runtime_error("config: non-positive rate or range");
  }

  SimConfig sim_config() const {
    SimConfig c;
    c.max_steps = max_steps;
    c.static_timeout = static_timeout;
    return c;
  }

  VectorizeCaps caps() const {
    VectorizeCaps c;
    c.vehicles = max_vehicles;
    return c;
  }

  static std::vector<std::string> known_keys() {
    return {"model.dim",        "model.encoder_layers", "model.decoder_layers",
            "model.heads",      "model.k_modes",        "model.horizon",
            "model.ff_mult",    "model.map_attend_k",   "planner.preset",
            "planner.beta_collision", "planner.beta_lane", "planner.beta_speed",
            "planner.beta_light", "planner.horizon_steps", "planner.samples",
            "planner.gamma",    "planner.kp_speed",     "planner.kp_heading",
            "planner.accel_clamp", "planner.steer_clamp", "sim.obs_range",
            "sim.max_vehicles", "sim.max_steps",        "sim.static_timeout",
            "train.epochs",     "train.batch_size",     "train.lr",
            "train.weight_decay", "train.model_seed",   "collect.templates",
            "collect.episodes_per_template", "collect.seed", "eval.templates",
            "eval.seeds_per_template", "eval.seed",     "eval.threads"};
  }

  static std::vector<std::string> parse_list(const std::string& csv) {
    std::vector<std::string> out;
    for (const std::string& part : split(csv, ','))
      if (!trim(part).empty()) out.push_back(trim(part));
    return out;
  }
};

}  // namespace modeplan
