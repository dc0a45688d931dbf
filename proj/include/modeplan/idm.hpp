#pragma once

#include <algorithm>
#include <cmath>
#include <limits>

#include "modeplan/rng.hpp"

namespace modeplan {

// Car-following parameters, randomized per background driver.
struct DriverParams {
  double target_speed = 8.0;   // v0, m/s
  double min_gap = 2.0;        // s0, m
  double time_headway = 1.5;   // T_h, s
  double max_accel = 2.0;      // a_max, m/s^2
  double comfort_decel = 2.0;  // b, m/s^2
};

inline constexpr double kNoLeaderGap = std::numeric_limits<double>::infinity();

// Intelligent-driver-model acceleration. With no leader pass gap = infinity.
// The result is clamped to [-2b, a_max] so emergency braking stays bounded.
inline double adaptive_accel(double own_speed, const DriverParams& p,
                             double gap, double lead_speed) {
  double v = std::max(0.0, own_speed);
  double free = std::pow(v / p.target_speed, 4.0);
  double interaction = 0.0;
  if (std::isfinite(gap)) {
    double dv = v - lead_speed;
    double s_star = p.min_gap + v * p.time_headway +
                    v * dv / (2.0 * std::sqrt(p.max_accel * p.comfort_decel));
    interaction = (s_star / gap) * (s_star / gap);
  }
  double a = p.max_accel * (1.0 - free - interaction);
  return std::clamp(a, -2.0 * p.comfort_decel, p.max_accel);
}

// Seeded per-vehicle parameter draw: uniform ranges around typical urban
// following behavior.
inline DriverParams sample_driver_params(Rng& rng) {
  DriverParams p;
  p.target_speed = rng.uniform(5.5, 8.5);
  p.min_gap = rng.uniform(1.5, 3.0);
  p.time_headway = rng.uniform(1.0, 1.8);
  p.max_accel = rng.uniform(1.5, 2.5);
  p.comfort_decel = rng.uniform(1.5, 2.5);
  return p;
}

}  // namespace modeplan
