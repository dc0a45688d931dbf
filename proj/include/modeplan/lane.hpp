#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "modeplan/geometry.hpp"

namespace modeplan {

// Polyline lane with arc-length parameterization.
//
// `recycle` lanes carry endless background traffic: a vehicle that runs off
// the end re-enters at the start (a logged teleport; arc coordinates and
// car-following gaps are treated modulo the lane length so the stream stays
// consistent across the seam). `closed` lanes are geometric loops
// (roundabouts) where the wrap is physically continuous.
struct Lane {
  int id = 0;
  std::vector<Vec2> points;
  double width = 3.5;
  double speed_limit = 8.0;
  bool recycle = false;
  bool closed = false;
  int merge_target = -1;  // lane id this lane feeds into, -1 if none

  std::vector<double> cum_s;  // cumulative arc length per point

  void finalize() {
    if (points.size() < 2) throw std::runtime_error("lane: needs >= 2 points");
    cum_s.assign(points.size(), 0.0);
    for (size_t i = 1; i < points.size(); ++i)
      cum_s[i] = cum_s[i - 1] + (points[i] - points[i - 1]).norm();
  }

  double length() const { return cum_s.back(); }

  // Emulate the closing segment of a loop by reading point i modulo n.
  const Vec2& pt(size_t i) const { return points[i % points.size()]; }

  int segment_count() const {
    return int(points.size()) - (closed ? 0 : 1);
  }

  double segment_length(int seg) const {
    return (pt(size_t(seg) + 1) - pt(size_t(seg))).norm();
  }

  double total_length() const {
    double L = length();
    if (closed) L += (points.front() - points.back()).norm();
    return L;
  }

  double wrap_s(double s) const {
    double L = total_length();
    if (!recycle && !closed) return std::clamp(s, 0.0, L);
    s = std::fmod(s, L);
    if (s < 0.0) s += L;
    return s;
  }

  Pose2 pose_at(double s) const {
    s = wrap_s(s);
    int nseg = segment_count();
    double run = 0.0;
    for (int i = 0; i < nseg; ++i) {
      double len = segment_length(i);
      if (s <= run + len || i == nseg - 1) {
        double f = len > 0.0 ? std::clamp((s - run) / len, 0.0, 1.0) : 0.0;
        Vec2 a = pt(size_t(i)), b = pt(size_t(i) + 1);
        Vec2 p = a + (b - a) * f;
        Vec2 d = b - a;
        return make_pose(p.x, p.y, std::atan2(d.y, d.x));
      }
      run += len;
    }
    throw std::runtime_error("lane: empty");
  }

  // Arc position and signed lateral offset (left of travel positive) of the
  // nearest centerline point.
  struct Projection {
    double s = 0.0;
    double lateral = 0.0;
    double distance = 0.0;
  };

  Projection project(const Vec2& p) const {
    Projection best;
    double best_d2 = 1e300;
    int nseg = segment_count();
    double run = 0.0;
    for (int i = 0; i < nseg; ++i) {
      Vec2 a = pt(size_t(i)), b = pt(size_t(i) + 1);
      Vec2 ab = b - a;
      double len2 = ab.dot(ab);
      double f = len2 > 0.0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
      Vec2 q = a + ab * f;
      double d2 = (p - q).dot(p - q);
      if (d2 < best_d2) {
        best_d2 = d2;
        best.s = run + f * std::sqrt(len2);
        best.lateral = ab.norm() > 0.0
                           ? (ab * (1.0 / ab.norm())).cross(p - q)
                           : 0.0;
        best.distance = std::sqrt(d2);
      }
      run += segment_length(i);
    }
    return best;
  }

  // Forward arc distance from s0 to s1, modulo length on looping lanes.
  double forward_gap(double s0, double s1) const {
    double L = total_length();
    double d = s1 - s0;
    if (recycle || closed) {
      d = std::fmod(d, L);
      if (d < 0.0) d += L;
    }
    return d;
  }
};

// Straight lane helper: from a to b with evenly spaced intermediate points.
inline Lane make_straight_lane(int id, Vec2 a, Vec2 b, double width,
                               double point_spacing = 10.0) {
  Lane lane;
  lane.id = id;
  lane.width = width;
  double len = (b - a).norm();
  int n = std::max(2, int(std::ceil(len / point_spacing)) + 1);
  for (int i = 0; i < n; ++i) {
    double f = double(i) / double(n - 1);
    lane.points.push_back(a + (b - a) * f);
  }
  lane.finalize();
  return lane;
}

// Circular loop lane (counter-clockwise), closed.
inline Lane make_ring_lane(int id, Vec2 center, double radius, double width,
                           int n_points = 48) {
  Lane lane;
  lane.id = id;
  lane.width = width;
  lane.closed = true;
  for (int i = 0; i < n_points; ++i) {
    double a = 2.0 * M_PI * double(i) / double(n_points);
    lane.points.push_back(
        {center.x + radius * std::cos(a), center.y + radius * std::sin(a)});
  }
  lane.finalize();
  return lane;
}

// Arc lane segment (counter-clockwise if a0 < a1), open.
inline Lane make_arc_lane(int id, Vec2 center, double radius, double a0,
                          double a1, double width, int n_points = 24) {
  Lane lane;
  lane.id = id;
  lane.width = width;
  for (int i = 0; i < n_points; ++i) {
    double a = a0 + (a1 - a0) * double(i) / double(n_points - 1);
    lane.points.push_back(
        {center.x + radius * std::cos(a), center.y + radius * std::sin(a)});
  }
  lane.finalize();
  return lane;
}

}  // namespace modeplan
