#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "modeplan/checkpoint.hpp"
#include "modeplan/dataset.hpp"
#include "modeplan/forecaster.hpp"
#include "modeplan/losses.hpp"
#include "modeplan/model.hpp"
#include "modeplan/optim.hpp"
#include "modeplan/settings.hpp"

namespace modeplan {

// A dataset record with its loss targets precomputed: displacement futures
// integrated to absolute states from each agent's observed pose. Masks are
// prefix-shaped by construction (a future ends at the episode end or a wrap);
// anything after the first masked step is ignored.
struct TrainSample {
  FeatureSet fs;
  std::vector<double> gt_abs;   // [A*H, 4]
  std::vector<uint8_t> valid;   // [A*H]
};

inline TrainSample make_train_sample(const DatasetRecord& rec) {
  const int A = rec.fs.num_vehicles(), H = rec.H;
  TrainSample s;
  s.fs = rec.fs;
  s.gt_abs.assign(size_t(A) * H * 4, 0.0);
  s.valid.assign(size_t(A) * H, 0);
  for (int a = 0; a < A; ++a) {
    int n = 0;
    while (n < H && rec.valid[size_t(a) * H + n]) ++n;
    if (n == 0) continue;
    const VehicleState& v = rec.fs.vehicle_states[size_t(a)];
    double init[4] = {v.pose.x, v.pose.y, v.pose.theta, v.speed};
    std::vector<double> abs = integrate_displacements(
        init, rec.futures.data() + size_t(a) * H * 4, n);
    for (int t = 0; t < n; ++t) {
      for (int d = 0; d < 4; ++d)
        s.gt_abs[(size_t(a) * H + t) * 4 + d] = abs[size_t(t) * 4 + d];
      s.valid[size_t(a) * H + t] = 1;
    }
  }
  return s;
}

inline bool has_valid_step(const TrainSample& s) {
  for (uint8_t v : s.valid)
    if (v) return true;
  return false;
}

struct EpochStats {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainResult {
  std::vector<EpochStats> history;
  int train_used = 0;
  int val_used = 0;
  int skipped = 0;  // records with no unmasked step (episode tails)
};

namespace detail {

inline double sample_loss(Graph& g, const Forecaster& model,
                          const ModelConfig& cfg, const TrainSample& s) {
  Forecaster::BuildOut out = model.build(g, s.fs);
  WtaLoss wta = wta_nll_loss(g, out, cfg.k_modes, cfg.horizon, s.gt_abs, s.valid);
  int loss = g.add(wta.loss,
                   mode_ce_loss(g, out.mode_logits, wta.winner, wta.valid_agents));
  g.backward(loss);
  return g.val(loss)[0];
}

}  // namespace detail

// Mean loss over samples, no gradients; used for the validation curve.
inline double evaluate_loss(const Forecaster& model, const ModelConfig& cfg,
                            const std::vector<TrainSample>& samples) {
  if (samples.empty()) throw std::runtime_error("evaluate_loss: no samples");
  double total = 0.0;
  for (const TrainSample& s : samples) {
    Graph g(false);
    Forecaster::BuildOut out = model.build(g, s.fs);
    WtaLoss wta =
        wta_nll_loss(g, out, cfg.k_modes, cfg.horizon, s.gt_abs, s.valid);
    int loss = g.add(wta.loss, mode_ce_loss(g, out.mode_logits, wta.winner,
                                            wta.valid_agents));
    total += g.val(loss)[0];
  }
  return total / double(samples.size());
}

// Full training run: 90/10 episode split, per-epoch shuffle, batched AdamW
// with a per-epoch cosine rate that reaches exactly zero on the final epoch,
// checkpoint written once at the end. Single-writer by design; parallelism
// lives in collection and evaluation, not here.
inline TrainResult train_model(const HarnessSettings& cfg,
                               const std::vector<DatasetRecord>& records,
                               const std::string& ckpt_path,
                               std::ostream* progress = nullptr) {
  std::vector<int> train_idx, val_idx;
  split_by_episode(records, &train_idx, &val_idx);

  TrainResult result;
  std::vector<TrainSample> train, val;
  for (int i : train_idx) {
    TrainSample s = make_train_sample(records[size_t(i)]);
    if (has_valid_step(s))
      train.push_back(std::move(s));
    else
      ++result.skipped;
  }
  for (int i : val_idx) {
    TrainSample s = make_train_sample(records[size_t(i)]);
    if (has_valid_step(s))
      val.push_back(std::move(s));
    else
      ++result.skipped;
  }
  if (train.empty() || val.empty())
    throw std::runtime_error("train: empty split (need at least 10 episodes)");
  result.train_used = int(train.size());
  result.val_used = int(val.size());

  ModelParams params = init_model_params(cfg.model, cfg.model_seed);
  Forecaster model(params);
  OptimState opt;
  opt.lr_base = cfg.lr;
  opt.weight_decay = cfg.weight_decay;

  std::vector<int> order(train.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = int(i);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    double lr_now =
        cfg.epochs > 1 ? cosine_lr(epoch, cfg.epochs - 1, cfg.lr) : cfg.lr;
    Rng shuffle_rng(cfg.model_seed, 0xe90c0000ull + uint64_t(epoch));
    shuffle_rng.shuffle(order);

    double epoch_loss = 0.0;
    int batches = 0;
    for (size_t at = 0; at < order.size(); at += size_t(cfg.batch_size)) {
      size_t end = std::min(order.size(), at + size_t(cfg.batch_size));
      params.store.zero_grads();
      double batch_loss = 0.0;
      for (size_t j = at; j < end; ++j) {
        Graph g(true);
        batch_loss += detail::sample_loss(g, model, cfg.model, train[size_t(order[j])]);
      }
      batch_loss /= double(end - at);
      if (!std::isfinite(batch_loss))
        throw std::runtime_error("train: non-finite loss at epoch " +
                                 std::to_string(epoch) + ", batch " +
                                 std::to_string(batches));
      params.store.scale_grads(1.0 / double(end - at));
      adamw_step(params.store, opt, lr_now);
      epoch_loss += batch_loss * double(end - at);
      ++batches;
    }
    EpochStats st;
    st.epoch = epoch;
    st.lr = lr_now;
    st.train_loss = epoch_loss / double(order.size());
    st.val_loss = evaluate_loss(model, cfg.model, val);
    result.history.push_back(st);
    if (progress) {
      double wall = std::chrono::duration<double>(
                        std::chrono::steady_clock::now() - t0)
                        .count();
      (*progress) << "epoch " << (epoch + 1) << "/" << cfg.epochs << "  lr "
                  << format_double(st.lr) << "  train "
                  << format_double(st.train_loss) << "  val "
                  << format_double(st.val_loss) << "  (" << int(wall) << "s)\n";
      progress->flush();
    }
  }

  std::map<std::string, std::string> meta;
  meta["k_modes"] = std::to_string(cfg.model.k_modes);
  meta["dim"] = std::to_string(cfg.model.dim);
  meta["horizon"] = std::to_string(cfg.model.horizon);
  meta["encoder_layers"] = std::to_string(cfg.model.encoder_layers);
  meta["decoder_layers"] = std::to_string(cfg.model.decoder_layers);
  meta["heads"] = std::to_string(cfg.model.heads);
  meta["map_attend_k"] = std::to_string(cfg.model.map_attend_k);
  meta["ff_mult"] = std::to_string(cfg.model.ff_mult);
  meta["model_seed"] = std::to_string(cfg.model_seed);
  meta["epochs"] = std::to_string(cfg.epochs);
  meta["batch_size"] = std::to_string(cfg.batch_size);
  meta["lr"] = format_double(cfg.lr);
  meta["weight_decay"] = format_double(cfg.weight_decay);
  meta["train_records"] = std::to_string(result.train_used);
  meta["val_records"] = std::to_string(result.val_used);
  meta["final_train_loss"] = format_double(result.history.back().train_loss);
  meta["final_val_loss"] = format_double(result.history.back().val_loss);
  save_checkpoint(ckpt_path, meta, params.store);

  // Deterministic training curve next to the checkpoint (no wall times, so
  // repeat runs with the same seeds are byte-identical).
  std::string tsv = "epoch\tlr\ttrain_loss\tval_loss\n";
  for (const EpochStats& st : result.history)
    tsv += std::to_string(st.epoch) + "\t" + format_double(st.lr) + "\t" +
           format_double(st.train_loss) + "\t" + format_double(st.val_loss) +
           "\n";
  write_text_file(ckpt_path + ".metrics.tsv", tsv);
  return result;
}

// Loads a trained model; returns the metadata for callers that log it.
// The architecture comes from the checkpoint meta; the block-count and
// size checks below catch any meta/payload mismatch.
inline std::map<std::string, std::string> load_model(const std::string& path,
                                                     ModelParams* out_params) {
  ParamStore probe;
  std::map<std::string, std::string> meta = load_checkpoint(path, probe);
  ModelConfig cfg = model_config_from_meta(meta);
  *out_params = init_model_params(cfg, 0);
  ParamStore& store = out_params->store;
  if (store.size() != probe.size())
    throw std::runtime_error("checkpoint: block count mismatch in " + path);
  for (int i = 0; i < probe.size(); ++i) {
    int idx = store.find(probe[i].name);
    if (idx < 0)
      throw std::runtime_error("checkpoint: unexpected block " + probe[i].name);
    if (store[idx].value.numel() != probe[i].value.numel())
      throw std::runtime_error("checkpoint: size mismatch for " + probe[i].name);
    store[idx].value = probe[i].value;
  }
  return meta;
}

}  // namespace modeplan
