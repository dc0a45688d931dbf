#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "modeplan/forecaster.hpp"
#include "modeplan/graph.hpp"

namespace modeplan {

// Unroll per-step in-frame displacements from a start state to absolute
// states; the host-side twin of the graph's integrate op (used to turn
// dataset displacement futures into absolute targets).
inline std::vector<double> integrate_displacements(
    const double* init4, const double* disp, int steps) {
  std::vector<double> out(size_t(steps) * 4);
  double x = init4[0], y = init4[1], th = init4[2], v = init4[3];
  for (int t = 0; t < steps; ++t) {
    double ct = std::cos(th), st = std::sin(th);
    x += ct * disp[size_t(t) * 4 + 0] - st * disp[size_t(t) * 4 + 1];
    y += st * disp[size_t(t) * 4 + 0] + ct * disp[size_t(t) * 4 + 1];
    th = wrap_angle(th + disp[size_t(t) * 4 + 2]);
    v += disp[size_t(t) * 4 + 3];
    out[size_t(t) * 4 + 0] = x;
    out[size_t(t) * 4 + 1] = y;
    out[size_t(t) * 4 + 2] = th;
    out[size_t(t) * 4 + 3] = v;
  }
  return out;
}

struct WtaLoss {
  int loss = -1;                  // scalar node: mean over agents of winner NLL
  std::vector<int> winner;        // per agent; -1 for agents with no valid step
  std::vector<int> valid_agents;  // agents contributing to the mean
};

// Winner-takes-all Gaussian NLL. The winner per agent is the mode with the
// lowest mean position error over its valid steps (computed from values, so
// no gradient flows through the selection); only winner rows enter the NLL,
// leaving non-winning modes with exactly zero gradient.
//
// `gt_abs` is [A*H, 4] absolute targets; `valid` is A*H step flags.
inline WtaLoss wta_nll_loss(Graph& g, const Forecaster::BuildOut& out, int K,
                            int H, const std::vector<double>& gt_abs,
                            const std::vector<uint8_t>& valid) {
  const int A = out.A;
  if (int(gt_abs.size()) != A * H * 4 || int(valid.size()) != A * H)
    throw std::runtime_error("wta_nll_loss: target shape mismatch");
  const double* means = g.val(out.means);

  WtaLoss res;
  res.winner.assign(size_t(A), -1);
  std::vector<int> sel_rows;
  std::vector<double> sel_targets;
  for (int a = 0; a < A; ++a) {
    std::vector<int> steps;
    for (int t = 0; t < H; ++t)
      if (valid[size_t(a * H + t)]) steps.push_back(t);
    if (steps.empty()) continue;
    int best_k = 0;
    double best_ade = 0.0;
    for (int k = 0; k < K; ++k) {
      double ade = 0.0;
      for (int t : steps) {
        size_t row = size_t((a * K + k) * H + t);
        double dx = means[row * 4 + 0] - gt_abs[size_t(a * H + t) * 4 + 0];
        double dy = means[row * 4 + 1] - gt_abs[size_t(a * H + t) * 4 + 1];
        ade += std::sqrt(dx * dx + dy * dy);
      }
      ade /= double(steps.size());
      if (k == 0 || ade < best_ade) {
        best_ade = ade;
        best_k = k;
      }
    }
    res.winner[size_t(a)] = best_k;
    res.valid_agents.push_back(a);
    for (int t : steps) {
      sel_rows.push_back((a * K + best_k) * H + t);
      for (int d = 0; d < 4; ++d) {
        double target = gt_abs[size_t(a * H + t) * 4 + d];
        if (d == 2) {
          // headings are 2pi-periodic: score against the representative
          // nearest the prediction so a target at +pi and a prediction at
          // -pi do not read as a 2pi error (a constant shift, no gradient)
          double pred = means[size_t((a * K + best_k) * H + t) * 4 + 2];
          target = pred - wrap_angle(pred - target);
        }
        sel_targets.push_back(target);
      }
    }
  }
  if (res.valid_agents.empty())
    throw std::runtime_error("wta_nll_loss: no valid agents");

  int pred = g.gather_rows(out.means, sel_rows);
  int ls = g.gather_rows(out.log_stds, sel_rows);
  int nll = g.gauss_nll(pred, ls, std::move(sel_targets));
  res.loss = g.scale(g.sum_all(nll), 1.0 / double(res.valid_agents.size()));
  return res;
}

// Mean cross-entropy of the mode distribution against the (detached) winner.
inline int mode_ce_loss(Graph& g, int mode_logits,
                        const std::vector<int>& winner,
                        const std::vector<int>& valid_agents) {
  if (valid_agents.empty())
    throw std::runtime_error("mode_ce_loss: no valid agents");
  std::vector<int> targets;
  targets.reserve(valid_agents.size());
  for (int a : valid_agents) {
    if (winner[size_t(a)] < 0)
      throw std::runtime_error("mode_ce_loss: agent without winner");
    targets.push_back(winner[size_t(a)]);
  }
  int rows = g.gather_rows(mode_logits, valid_agents);
  int ce = g.ce_rows(rows, std::move(targets));
  return g.scale(g.sum_all(ce), 1.0 / double(valid_agents.size()));
}

}  // namespace modeplan
