#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "modeplan/optim.hpp"
#include "modeplan/rng.hpp"
#include "modeplan/scene.hpp"

namespace modeplan {

struct ModelConfig {
  int k_modes = 8;         // K trajectory hypotheses per agent
  int dim = 128;           // embedding width D
  int horizon = 10;        // prediction steps H
  int encoder_layers = 4;
  int decoder_layers = 4;
  int heads = 8;
  int map_attend_k = 50;   // road points each vehicle attends to
  int ff_mult = 4;

  int ff_dim() const { return ff_mult * dim; }
  int head_out_dim() const { return horizon * 8; }
};

// Reduced preset for desk-scale experiments; the default config above is the
// full-size one.
inline ModelConfig desk_model_config() {
  ModelConfig c;
  c.dim = 64;
  c.encoder_layers = 2;
  c.decoder_layers = 2;
  c.heads = 4;
  c.map_attend_k = 12;
  c.ff_mult = 2;
  return c;
}

// Parameter blocks plus cached store indices for fast forward construction.
struct ModelParams {
  struct Mlp {
    int w1 = -1, b1 = -1, w2 = -1, b2 = -1;
  };
  struct AttnBlock {
    int ln_g = -1, ln_b = -1;
    int q_w = -1, q_b = -1;
    int wk = -1, wv = -1;
    int o_w = -1, o_b = -1;
  };
  struct FfBlock {
    int ln_g = -1, ln_b = -1;
    int w1 = -1, b1 = -1, w2 = -1, b2 = -1;
  };
  struct EncLayer {
    AttnBlock attn;
    FfBlock ff;
  };
  struct DecLayer {
    AttnBlock cross;
    AttnBlock self_modes;
    FfBlock ff;
  };

  ModelConfig config;
  ParamStore store;

  Mlp in_vehicle, in_road, in_light, in_ped, in_stop, in_goal;
  Mlp pair_mlp;
  std::vector<EncLayer> enc;
  std::vector<DecLayer> dec;
  int enc_ln_g = -1, enc_ln_b = -1;
  int dec_ln_g = -1, dec_ln_b = -1;
  int anchor_ego = -1, anchor_other = -1;
  Mlp head;
  int logit_w = -1, logit_b = -1;
};

namespace detail {

struct ParamInit {
  ParamStore& store;
  Rng& rng;

  // Weight matrices: uniform in +-1/sqrt(fan_in).
  int weight(const std::string& name, int rows, int cols) {
    int id = store.add(name, rows, cols);
    double bound = 1.0 / std::sqrt(double(cols));
    for (double& v : store[id].value.data) v = rng.uniform(-bound, bound);
    return id;
  }

  int gaussian(const std::string& name, int rows, int cols, double stddev) {
    int id = store.add(name, rows, cols, /*no_decay=*/true);
    for (double& v : store[id].value.data) v = rng.normal(0.0, stddev);
    return id;
  }

  int gaussian_weight(const std::string& name, int rows, int cols,
                      double stddev) {
    int id = store.add(name, rows, cols);
    for (double& v : store[id].value.data) v = rng.normal(0.0, stddev);
    return id;
  }

  int bias(const std::string& name, int cols) {
    return store.add(name, 1, cols, /*no_decay=*/true);
  }

  int ln_gain(const std::string& name, int cols) {
    int id = store.add(name, 1, cols, /*no_decay=*/true);
    store[id].value.fill(1.0);
    return id;
  }

  ModelParams::Mlp mlp(const std::string& name, int in, int hidden, int out) {
    ModelParams::Mlp m;
    m.w1 = weight(name + ".w1", hidden, in);
    m.b1 = bias(name + ".b1", hidden);
    m.w2 = weight(name + ".w2", out, hidden);
    m.b2 = bias(name + ".b2", out);
    return m;
  }

  // Relative-pose MLP uses Gaussian(0.02) init per the small-signal role of
  // positional terms.
  ModelParams::Mlp pair_mlp(const std::string& name, int in, int out) {
    ModelParams::Mlp m;
    m.w1 = gaussian_weight(name + ".w1", out, in, 0.02);
    m.b1 = bias(name + ".b1", out);
    m.w2 = gaussian_weight(name + ".w2", out, out, 0.02);
    m.b2 = bias(name + ".b2", out);
    return m;
  }

  ModelParams::AttnBlock attn_block(const std::string& name, int dim) {
    ModelParams::AttnBlock b;
    b.ln_g = ln_gain(name + ".ln.g", dim);
    b.ln_b = bias(name + ".ln.b", dim);
    b.q_w = weight(name + ".q.w", dim, dim);
    b.q_b = bias(name + ".q.b", dim);
    b.wk = weight(name + ".wk", dim, dim);
    b.wv = weight(name + ".wv", dim, dim);
    b.o_w = weight(name + ".o.w", dim, dim);
    b.o_b = bias(name + ".o.b", dim);
    return b;
  }

  ModelParams::FfBlock ff_block(const std::string& name, int dim, int ff) {
    ModelParams::FfBlock b;
    b.ln_g = ln_gain(name + ".ln.g", dim);
    b.ln_b = bias(name + ".ln.b", dim);
    b.w1 = weight(name + ".w1", ff, dim);
    b.b1 = bias(name + ".b1", ff);
    b.w2 = weight(name + ".w2", dim, ff);
    b.b2 = bias(name + ".b2", dim);
    return b;
  }
};

}  // namespace detail

inline ModelParams init_model_params(const ModelConfig& config, uint64_t seed) {
  ModelParams p;
  p.config = config;
  Rng rng(seed, 0x90de1u);
  detail::ParamInit init{p.store, rng};
  int d = config.dim;

  p.in_vehicle = init.mlp("in.vehicle", kVehicleFeatureDim, d, d);
  p.in_road = init.mlp("in.road", context_feature_dim(ObjectKind::kRoadPoint), d, d);
  p.in_light = init.mlp("in.light", context_feature_dim(ObjectKind::kTrafficLight), d, d);
  p.in_ped = init.mlp("in.ped", context_feature_dim(ObjectKind::kPedestrian), d, d);
  p.in_stop = init.mlp("in.stop", context_feature_dim(ObjectKind::kStopSign), d, d);
  p.in_goal = init.mlp("in.goal", context_feature_dim(ObjectKind::kGoalWaypoint), d, d);
  p.pair_mlp = init.pair_mlp("pair", 4, d);

  for (int l = 0; l < config.encoder_layers; ++l) {
    std::string base = "enc" + std::to_string(l);
    ModelParams::EncLayer layer;
    layer.attn = init.attn_block(base + ".attn", d);
    layer.ff = init.ff_block(base + ".ff", d, config.ff_dim());
    p.enc.push_back(layer);
  }
  p.enc_ln_g = init.ln_gain("enc.final_ln.g", d);
  p.enc_ln_b = init.bias("enc.final_ln.b", d);

  p.anchor_ego = init.gaussian("anchor.ego", config.k_modes, d, 0.02);
  p.anchor_other = init.gaussian("anchor.other", config.k_modes, d, 0.02);

  for (int l = 0; l < config.decoder_layers; ++l) {
    std::string base = "dec" + std::to_string(l);
    ModelParams::DecLayer layer;
    layer.cross = init.attn_block(base + ".cross", d);
    layer.self_modes = init.attn_block(base + ".self", d);
    layer.ff = init.ff_block(base + ".ff", d, config.ff_dim());
    p.dec.push_back(layer);
  }
  p.dec_ln_g = init.ln_gain("dec.final_ln.g", d);
  p.dec_ln_b = init.bias("dec.final_ln.b", d);

  p.head = init.mlp("head", d, d, config.head_out_dim());
  p.logit_w = init.weight("logit.w", 1, d);
  p.logit_b = init.bias("logit.b", 1);
  return p;
}

// Config <-> checkpoint metadata round-trip.
inline std::map<std::string, std::string> model_config_meta(
    const ModelConfig& c) {
  return {{"k_modes", std::to_string(c.k_modes)},
          {"dim", std::to_string(c.dim)},
          {"horizon", std::to_string(c.horizon)},
          {"encoder_layers", std::to_string(c.encoder_layers)},
          {"decoder_layers", std::to_string(c.decoder_layers)},
          {"heads", std::to_string(c.heads)},
          {"map_attend_k", std::to_string(c.map_attend_k)},
          {"ff_mult", std::to_string(c.ff_mult)}};
}

inline ModelConfig model_config_from_meta(
    const std::map<std::string, std::string>& meta) {
  ModelConfig c;
  auto get = [&](const char* key, int fallback) {
    auto it = meta.find(key);
    return it == meta.end() ? fallback : std::stoi(it->second);
  };
  c.k_modes = get("k_modes", c.k_modes);
  c.dim = get("dim", c.dim);
  c.horizon = get("horizon", c.horizon);
  c.encoder_layers = get("encoder_layers", c.encoder_layers);
  c.decoder_layers = get("decoder_layers", c.decoder_layers);
  c.heads = get("heads", c.heads);
  c.map_attend_k = get("map_attend_k", c.map_attend_k);
  c.ff_mult = get("ff_mult", c.ff_mult);
  return c;
}

}  // namespace modeplan
