#pragma once

#include <algorithm>
#include <cstring>
#include <stdexcept>
#include <vector>

#include "modeplan/graph.hpp"
#include "modeplan/model.hpp"
#include "modeplan/scene.hpp"

namespace modeplan {

// Model output for one scene: K trajectory hypotheses per agent.
struct TrajectoryBatch {
  int K = 0, A = 0, H = 0;
  Tensor means;        // [K, A, H, 4] absolute (x, y, theta, v) waypoints
  Tensor log_stds;     // [K, A, H, 4], clamped to [-5, 2]
  Tensor mode_logits;  // [A, K]

  double mean_at(int k, int a, int t, int d) const {
    return means.data[size_t((((k * A) + a) * H + t) * 4 + d)];
  }
  std::vector<double> mode_probs(int a) const {
    std::vector<double> p(mode_logits.data.begin() + size_t(a) * K,
                          mode_logits.data.begin() + size_t(a + 1) * K);
    softmax_inplace(p.data(), K);
    return p;
  }
};

// One categorical latent per agent, aligned with FeatureSet vehicle order.
struct ModeAssignment {
  std::vector<int> z;
};

class Forecaster {
 public:
  explicit Forecaster(ModelParams& params) : p_(&params) {}

  const ModelConfig& config() const { return p_->config; }
  ModelParams& params() { return *p_; }
  const ModelParams& params() const { return *p_; }

  int64_t forward_count() const { return forward_count_; }
  void reset_forward_count() { forward_count_ = 0; }

  // Host-side wiring of one scene: attention pair lists plus the raw
  // relative-pose rows feeding the positional MLP. Computed once per forward
  // and shared by every encoder layer and the decoder cross-attention.
  struct SceneWiring {
    std::vector<int> key_idx;      // pool row per pair (pool = vehicles, context)
    std::vector<int> qstart;       // per-vehicle pair ranges, size A+1
    std::vector<double> pair_raw;  // [npair+1, 4]; last row = identity rel pose
    int npair = 0;
  };

  SceneWiring wire_scene(const FeatureSet& fs) const {
    const int A = fs.num_vehicles();
    const int C = fs.num_context();
    SceneWiring w;
    w.qstart.assign(size_t(A) + 1, 0);
    std::vector<int> road_rows;
    for (int c = 0; c < C; ++c)
      if (fs.context_objects[size_t(c)].kind == ObjectKind::kRoadPoint)
        road_rows.push_back(c);
    std::vector<Pose2> road_poses;
    road_poses.reserve(road_rows.size());
    for (int r : road_rows) road_poses.push_back(fs.context_poses[size_t(r)]);

    for (int i = 0; i < A; ++i) {
      const Pose2& anchor = fs.vehicle_poses[size_t(i)];
      auto push_pair = [&](int pool_idx, const Pose2& other) {
        RelPose r = relative_pose(anchor, other);
        w.key_idx.push_back(pool_idx);
        w.pair_raw.insert(w.pair_raw.end(),
                          {r.x, r.y, r.sin_theta, r.cos_theta});
      };
      for (int j = 0; j < A; ++j) push_pair(j, fs.vehicle_poses[size_t(j)]);
      if (!road_rows.empty()) {
        std::vector<int> sel =
            nearest_map_features(anchor, road_poses, p_->config.map_attend_k);
        // nearest_map_features returns distance order; re-sort by row for a
        // stable pool-index ordering
        std::vector<int> rows;
        rows.reserve(sel.size());
        for (int s : sel) rows.push_back(road_rows[size_t(s)]);
        std::sort(rows.begin(), rows.end());
        for (int r : rows) push_pair(A + r, fs.context_poses[size_t(r)]);
      }
      for (int c = 0; c < C; ++c)
        if (fs.context_objects[size_t(c)].kind != ObjectKind::kRoadPoint)
          push_pair(A + c, fs.context_poses[size_t(c)]);
      w.qstart[size_t(i) + 1] = int(w.key_idx.size());
    }
    w.npair = int(w.key_idx.size());
    w.pair_raw.insert(w.pair_raw.end(), {0.0, 0.0, 0.0, 1.0});
    return w;
  }

  struct EncoderNodes {
    int vehicles = -1;   // [A, D] input embeddings
    int context = -1;    // [C, D] or -1 when C == 0
    int p_all = -1;      // [npair+1, D] positional embeddings
    int encoded = -1;    // [A, D] refined agent features
  };

  struct BuildOut {
    int means = -1;        // [A*K*H, 4] absolute waypoints, rows (a, k, t)
    int log_stds = -1;     // [A*K*H, 4]
    int mode_logits = -1;  // [A, K]
    int encoded = -1;      // [A, D]
    int A = 0;
  };

  EncoderNodes build_encoder(Graph& g, const FeatureSet& fs,
                             const SceneWiring& w) const {
    const ModelConfig& cfg = p_->config;
    const int A = fs.num_vehicles();
    if (A < 1) throw std::runtime_error("forecaster: empty scene");

    EncoderNodes out;
    // per-type input MLPs
    {
      int raw = g.input(A, kVehicleFeatureDim);
      double* dst = g.mutable_val(raw);
      for (int i = 0; i < A; ++i)
        for (int c = 0; c < kVehicleFeatureDim; ++c)
          dst[size_t(i) * kVehicleFeatureDim + c] =
              fs.vehicle_features[size_t(i)][size_t(c)];
      out.vehicles = apply_mlp(g, raw, p_->in_vehicle);
    }
    out.context = embed_context(g, fs);

    // positional embeddings, one batch for all pairs + identity row
    {
      int raw = g.input(w.npair + 1, 4);
      std::memcpy(g.mutable_val(raw), w.pair_raw.data(),
                  w.pair_raw.size() * sizeof(double));
      out.p_all = apply_mlp(g, raw, p_->pair_mlp);
    }

    int kv_pool = out.context < 0 ? out.vehicles
                                  : g.concat_rows(out.vehicles, out.context);
    std::vector<int> ident(static_cast<size_t>(w.npair));
    for (int i = 0; i < w.npair; ++i) ident[size_t(i)] = i;
    int p_enc = g.gather_rows(out.p_all, ident);

    int x = out.vehicles;
    for (const auto& layer : p_->enc) {
      x = apply_attn(g, x, kv_pool, p_enc, layer.attn, w.key_idx, w.qstart);
      x = apply_ff(g, x, layer.ff);
    }
    out.encoded = g.layer_norm(x, pm(g, p_->enc_ln_g), pm(g, p_->enc_ln_b));
    return out;
  }

  BuildOut build_decoder(Graph& g, const FeatureSet& fs, const SceneWiring& w,
                         const EncoderNodes& enc) const {
    const ModelConfig& cfg = p_->config;
    const int A = fs.num_vehicles();
    const int K = cfg.k_modes;
    const int H = cfg.horizon;
    const int rows = A * K;

    // queries: refined agent feature + per-mode anchor (ego gets its own set)
    int anchors = g.concat_rows(pm(g, p_->anchor_ego), pm(g, p_->anchor_other));
    std::vector<int> ia(static_cast<size_t>(rows));
    std::vector<int> ib(static_cast<size_t>(rows));
    for (int a = 0; a < A; ++a)
      for (int k = 0; k < K; ++k) {
        ia[size_t(a * K + k)] = a;
        ib[size_t(a * K + k)] = a == 0 ? k : K + k;
      }
    int x = g.gather_add_rows(enc.encoded, anchors, ia, ib);

    int kv_pool = enc.context < 0 ? enc.encoded
                                  : g.concat_rows(enc.encoded, enc.context);

    // replicate the per-agent pair structure across the K modes
    std::vector<int> cross_keys, cross_p, cross_qstart(size_t(rows) + 1, 0);
    for (int a = 0; a < A; ++a)
      for (int k = 0; k < K; ++k) {
        for (int pr = w.qstart[size_t(a)]; pr < w.qstart[size_t(a) + 1]; ++pr) {
          cross_keys.push_back(w.key_idx[size_t(pr)]);
          cross_p.push_back(pr);
        }
        cross_qstart[size_t(a * K + k) + 1] = int(cross_keys.size());
      }
    int p_cross = g.gather_rows(enc.p_all, cross_p);

    // mode self-attention: only modes of the same agent see each other; the
    // relative pose between an agent's own modes is the identity
    std::vector<int> self_keys(size_t(rows) * K);
    std::vector<int> self_p(size_t(rows) * K, w.npair);
    std::vector<int> self_qstart(size_t(rows) + 1, 0);
    for (int r = 0; r < rows; ++r) {
      int a = r / K;
      for (int k2 = 0; k2 < K; ++k2) self_keys[size_t(r) * K + k2] = a * K + k2;
      self_qstart[size_t(r) + 1] = (r + 1) * K;
    }
    int p_self = g.gather_rows(enc.p_all, self_p);

    for (const auto& layer : p_->dec) {
      x = apply_attn(g, x, kv_pool, p_cross, layer.cross, cross_keys,
                     cross_qstart);
      x = apply_self_attn(g, x, p_self, layer.self_modes, self_keys,
                          self_qstart);
      x = apply_ff(g, x, layer.ff);
    }
    int dec_out = g.layer_norm(x, pm(g, p_->dec_ln_g), pm(g, p_->dec_ln_b));

    // heads
    int h1 = g.linear(dec_out, pm(g, p_->head.w1), pm(g, p_->head.b1));
    int h2 = g.linear(g.gelu(h1), pm(g, p_->head.w2), pm(g, p_->head.b2));
    int per_step = g.view(h2, rows * H, 8);
    int disp = g.slice_cols(per_step, 0, 4);
    int log_stds = g.slice_cols(per_step, 4, 8);

    std::vector<double> init(size_t(rows) * 4);
    for (int a = 0; a < A; ++a) {
      const VehicleState& s = fs.vehicle_states[size_t(a)];
      for (int k = 0; k < K; ++k) {
        size_t base = size_t(a * K + k) * 4;
        init[base + 0] = s.pose.x;
        init[base + 1] = s.pose.y;
        init[base + 2] = s.pose.theta;
        init[base + 3] = s.speed;
      }
    }
    BuildOut out;
    out.means = g.integrate(disp, std::move(init), H);
    out.log_stds = log_stds;
    int logit_rows = g.linear(dec_out, pm(g, p_->logit_w), pm(g, p_->logit_b));
    out.mode_logits = g.view(logit_rows, A, K);
    out.encoded = enc.encoded;
    out.A = A;
    return out;
  }

  // Full forward pass: one graph construction per call.
  BuildOut build(Graph& g, const FeatureSet& fs) const {
    ++forward_count_;
    SceneWiring w = wire_scene(fs);
    EncoderNodes enc = build_encoder(g, fs, w);
    return build_decoder(g, fs, w, enc);
  }

  TrajectoryBatch predict(const FeatureSet& fs) const {
    Graph g(false);
    BuildOut out = build(g, fs);
    return extract(g, out);
  }

  // Spec-facing encode: refined agent features [A, D].
  Tensor encode(const FeatureSet& fs) const {
    Graph g(false);
    SceneWiring w = wire_scene(fs);
    EncoderNodes enc = build_encoder(g, fs, w);
    return g.tensor_of(enc.encoded);
  }

  // Spec-facing decode from a precomputed encoding.
  TrajectoryBatch decode(const Tensor& encoded, const FeatureSet& fs) const {
    ++forward_count_;
    Graph g(false);
    SceneWiring w = wire_scene(fs);
    EncoderNodes enc;
    enc.vehicles = -1;
    enc.context = embed_context(g, fs);
    {
      int raw = g.input(w.npair + 1, 4);
      std::memcpy(g.mutable_val(raw), w.pair_raw.data(),
                  w.pair_raw.size() * sizeof(double));
      enc.p_all = apply_mlp(g, raw, p_->pair_mlp);
    }
    enc.encoded = g.input(encoded);
    BuildOut out = build_decoder(g, fs, w, enc);
    return extract(g, out);
  }

  TrajectoryBatch extract(const Graph& g, const BuildOut& out) const {
    const ModelConfig& cfg = p_->config;
    TrajectoryBatch tb;
    tb.K = cfg.k_modes;
    tb.A = out.A;
    tb.H = cfg.horizon;
    tb.means = Tensor({tb.K, tb.A, tb.H, 4});
    tb.log_stds = Tensor({tb.K, tb.A, tb.H, 4});
    tb.mode_logits = g.tensor_of(out.mode_logits);
    const double* mv = g.val(out.means);
    const double* lv = g.val(out.log_stds);
    for (int a = 0; a < tb.A; ++a)
      for (int k = 0; k < tb.K; ++k)
        for (int t = 0; t < tb.H; ++t)
          for (int d = 0; d < 4; ++d) {
            size_t src = (size_t((a * tb.K + k) * tb.H + t)) * 4 + d;
            size_t dst = (size_t(((k * tb.A + a) * tb.H + t))) * 4 + d;
            tb.means.data[dst] = mv[src];
            tb.log_stds.data[dst] =
                std::min(2.0, std::max(-5.0, lv[src]));
          }
    return tb;
  }

  // First-step extraction for closed-loop rollouts: one forward pass, then
  // means[z_a, a, 0, :] converted back to world-frame vehicle states.
  std::vector<VehicleState> predict_step(const FeatureSet& fs,
                                         const ModeAssignment& assignment) const {
    TrajectoryBatch tb = predict(fs);
    return step_from_batch(tb, fs, assignment);
  }

  std::vector<VehicleState> step_from_batch(const TrajectoryBatch& tb,
                                            const FeatureSet& fs,
                                            const ModeAssignment& assignment) const {
    const int A = tb.A;
    if (int(assignment.z.size()) != A)
      throw std::runtime_error("predict_step: assignment size mismatch");
    std::vector<VehicleState> next(static_cast<size_t>(A));
    for (int a = 0; a < A; ++a) {
      int z = assignment.z[size_t(a)];
      if (z < 0 || z >= tb.K)
        throw std::runtime_error("predict_step: mode index out of range");
      VehicleState s = fs.vehicle_states[size_t(a)];
      s.pose = make_pose(tb.mean_at(z, a, 0, 0), tb.mean_at(z, a, 0, 1),
                         tb.mean_at(z, a, 0, 2));
      s.speed = std::max(0.0, tb.mean_at(z, a, 0, 3));
      next[size_t(a)] = s;
    }
    return next;
  }

 private:
  int pm(Graph& g, int idx) const {
    return g.param(p_->store[idx].value, p_->store[idx].grad);
  }

  int apply_mlp(Graph& g, int x, const ModelParams::Mlp& m) const {
    int h = g.linear(x, pm(g, m.w1), pm(g, m.b1));
    return g.linear(g.gelu(h), pm(g, m.w2), pm(g, m.b2));
  }

  int embed_context(Graph& g, const FeatureSet& fs) const {
    const int C = fs.num_context();
    if (C == 0) return -1;
    // embed contiguous runs of equal kind with that kind's MLP, then stack
    int out = -1;
    int run_begin = 0;
    while (run_begin < C) {
      ObjectKind kind = fs.context_objects[size_t(run_begin)].kind;
      int run_end = run_begin;
      while (run_end < C && fs.context_objects[size_t(run_end)].kind == kind)
        ++run_end;
      int dim = context_feature_dim(kind);
      int raw = g.input(run_end - run_begin, dim);
      double* dst = g.mutable_val(raw);
      for (int r = run_begin; r < run_end; ++r)
        for (int c = 0; c < dim; ++c)
          dst[size_t(r - run_begin) * dim + c] =
              fs.context_features[size_t(r)][size_t(c)];
      int block = apply_mlp(g, raw, mlp_for(kind));
      out = out < 0 ? block : g.concat_rows(out, block);
      run_begin = run_end;
    }
    return out;
  }

  const ModelParams::Mlp& mlp_for(ObjectKind kind) const {
    switch (kind) {
      case ObjectKind::kRoadPoint:
        return p_->in_road;
      case ObjectKind::kTrafficLight:
        return p_->in_light;
      case ObjectKind::kPedestrian:
        return p_->in_ped;
      case ObjectKind::kStopSign:
        return p_->in_stop;
      case ObjectKind::kGoalWaypoint:
        return p_->in_goal;
    }
    return p_->in_road;
  }

  int apply_attn(Graph& g, int x, int kv, int p, const ModelParams::AttnBlock& b,
                 const std::vector<int>& key_idx,
                 const std::vector<int>& qstart) const {
    int h = g.layer_norm(x, pm(g, b.ln_g), pm(g, b.ln_b));
    int q = g.linear(h, pm(g, b.q_w), pm(g, b.q_b));
    int att = g.rel_attn(q, kv, p, pm(g, b.wk), pm(g, b.wv), p_->config.heads,
                         key_idx, qstart);
    int o = g.linear(att, pm(g, b.o_w), pm(g, b.o_b));
    return g.add(x, o);
  }

  int apply_ff(Graph& g, int x, const ModelParams::FfBlock& b) const {
    int h = g.layer_norm(x, pm(g, b.ln_g), pm(g, b.ln_b));
    int f = g.linear(h, pm(g, b.w1), pm(g, b.b1));
    f = g.linear(g.gelu(f), pm(g, b.w2), pm(g, b.b2));
    return g.add(x, f);
  }

  // Self-attention uses the normed activations as both query source and
  // key/value pool.
  int apply_self_attn(Graph& g, int x, int p, const ModelParams::AttnBlock& b,
                      const std::vector<int>& key_idx,
                      const std::vector<int>& qstart) const {
    int h = g.layer_norm(x, pm(g, b.ln_g), pm(g, b.ln_b));
    int q = g.linear(h, pm(g, b.q_w), pm(g, b.q_b));
    int att = g.rel_attn(q, h, p, pm(g, b.wk), pm(g, b.wv), p_->config.heads,
                         key_idx, qstart);
    int o = g.linear(att, pm(g, b.o_w), pm(g, b.o_b));
    return g.add(x, o);
  }

  ModelParams* p_;
  mutable int64_t forward_count_ = 0;
};

}  // namespace modeplan
