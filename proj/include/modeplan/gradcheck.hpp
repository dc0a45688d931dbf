#pragma once

#include <cmath>
#include <functional>
#include <string>

#include "modeplan/graph.hpp"
#include "modeplan/optim.hpp"
#include "modeplan/rng.hpp"

namespace modeplan {

struct GradCheckReport {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  std::string worst_block;
  int worst_coord = -1;
  int coords_checked = 0;
};

// Compare analytic parameter gradients of a scalar loss against central
// finite differences. `build_loss` constructs the loss in a fresh graph and
// returns the loss node; it must be a pure function of the params.
//
// With max_coords_per_block < 0 every coordinate is checked; otherwise a
// deterministic random subset per block. Coordinates whose absolute
// disagreement is within `abs_tol` are counted as exact: central differences
// on a float64 loss carry cancellation noise of roughly ulp(loss)/eps, which
// dominates the relative error wherever the true gradient is numerically
// zero.
inline GradCheckReport grad_check(ParamStore& params,
                                  const std::function<int(Graph&)>& build_loss,
                                  double eps = 1e-6,
                                  int max_coords_per_block = -1,
                                  uint64_t seed = 0, double abs_tol = 0.0) {
  params.zero_grads();
  {
    Graph g(true);
    int loss = build_loss(g);
    g.backward(loss);
  }
  auto eval = [&]() {
    Graph g(false);
    int loss = build_loss(g);
    return g.scalar_of(loss);
  };

  GradCheckReport report;
  Rng rng(seed, 0xfd1ffu);
  for (int b = 0; b < params.size(); ++b) {
    ParamBlock& blk = params[b];
    size_t n = blk.value.data.size();
    std::vector<size_t> coords;
    if (max_coords_per_block < 0 || size_t(max_coords_per_block) >= n) {
      coords.resize(n);
      for (size_t i = 0; i < n; ++i) coords[i] = i;
    } else {
      for (int i = 0; i < max_coords_per_block; ++i)
        coords.push_back(size_t(rng.uniform_index(n)));
    }
    for (size_t idx : coords) {
      double saved = blk.value.data[idx];
      blk.value.data[idx] = saved + eps;
      double fp = eval();
      blk.value.data[idx] = saved - eps;
      double fm = eval();
      blk.value.data[idx] = saved;
      double numeric = (fp - fm) / (2.0 * eps);
      double analytic = blk.grad.data[idx];
      double abs_err = std::fabs(analytic - numeric);
      double rel_err =
          abs_err <= abs_tol
              ? 0.0
              : abs_err /
                    std::max(1e-6, std::fabs(analytic) + std::fabs(numeric));
      ++report.coords_checked;
      if (rel_err > report.max_rel_err) {
        report.max_rel_err = rel_err;
        report.max_abs_err = abs_err;
        report.worst_block = blk.name;
        report.worst_coord = int(idx);
      }
    }
  }
  return report;
}

}  // namespace modeplan
