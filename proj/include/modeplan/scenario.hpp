#pragma once

#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "modeplan/idm.hpp"
#include "modeplan/lane.hpp"
#include "modeplan/rng.hpp"
#include "modeplan/util.hpp"

namespace modeplan {

// Background traffic placement: `count` vehicles on `lane` starting at arc
// position s0, spaced `spacing` apart (plus per-vehicle seeded jitter).
struct TrafficSpec {
  int lane = 0;
  int count = 0;
  double s0 = 0.0;
  double spacing = 13.0;
};

// Fixed-time signal on the ego route. `seed_offset` draws the initial phase
// from the scenario seed so different seeds meet the light differently.
struct LightSpec {
  Pose2 pose;
  double green = 10.0;
  double yellow = 2.0;
  double red = 8.0;
  bool seed_offset = true;

  double cycle() const { return green + yellow + red; }
};

// A complete scenario definition: lane graph, traffic, ego spawn and route.
// The route is stored as a dense centerline polyline; the merge fields mark
// where that route enters the dense target lane.
struct ScenarioTemplate {
  std::string id;
  std::vector<Lane> lanes;
  std::vector<TrafficSpec> traffic;

  int ego_lane = 0;
  double ego_s = 0.0;
  double ego_speed = 4.0;

  std::vector<Vec2> route_pts;
  int merge_lane = -1;      // dense lane the route enters, -1 if none
  double merge_lane_s = 0;  // merge point, arc position on that lane
  double route_merge_s = 0; // merge point, arc position along the route

  std::vector<LightSpec> lights;
  double speed_limit = 8.0;
  double goal_radius = 2.5;

  const Lane& lane_by_id(int id) const {
    for (const Lane& l : lanes)
      if (l.id == id) return l;
    throw std::runtime_error("scenario: unknown lane id " + std::to_string(id));
  }

  Lane route_lane() const {
    Lane r;
    r.id = -1;
    r.points = route_pts;
    r.width = 3.5;
    r.speed_limit = speed_limit;
    r.finalize();
    return r;
  }
};

namespace detail {

inline void append_route_segment(std::vector<Vec2>& route, const Lane& lane,
                                 double s_from, double s_to,
                                 double step = 3.0) {
  for (double s = s_from; s < s_to; s += step) {
    Pose2 p = lane.pose_at(s);
    route.push_back({p.x, p.y});
  }
  Pose2 end = lane.pose_at(s_to);
  route.push_back({end.x, end.y});
}

}  // namespace detail

// --- built-in templates -----------------------------------------------------

// Highway-style on-ramp into a single dense stream.
inline ScenarioTemplate template_lane_merge() {
  ScenarioTemplate t;
  t.id = "lane_merge";
  Lane main = make_straight_lane(0, {-200, 0}, {200, 0}, 3.5);
  main.recycle = true;
  Lane ramp;
  ramp.id = 1;
  ramp.width = 3.5;
  ramp.merge_target = 0;
  ramp.points = {{-60, -10}, {-40, -8.2}, {-22, -5.6}, {-8, -1.6}, {4, 0}};
  ramp.finalize();
  t.lanes = {main, ramp};
  t.traffic = {{0, 12, 120.0, 13.0}};
  t.ego_lane = 1;
  t.ego_s = 0.0;
  t.ego_speed = 5.0;
  t.route_pts = ramp.points;
  detail::append_route_segment(t.route_pts, main, 208.0, 244.0);
  t.merge_lane = 0;
  t.merge_lane_s = 204.0;  // x = 4 on the main lane
  t.route_merge_s = t.route_lane().project({4, 0}).s;
  return t;
}

// Right turn from a stem road into cross traffic.
inline ScenarioTemplate template_t_junction(bool signalized) {
  ScenarioTemplate t;
  t.id = signalized ? "t_junction_signal" : "t_junction";
  Lane main = make_straight_lane(0, {-200, 0}, {200, 0}, 3.5);
  main.recycle = true;
  Lane stem = make_straight_lane(1, {0, -50}, {0, -6}, 3.5);
  stem.merge_target = 0;
  Lane turn = make_arc_lane(2, {6, -6}, 6.0, M_PI, M_PI / 2, 3.5, 12);
  turn.merge_target = 0;
  t.lanes = {main, stem, turn};
  t.traffic = {{0, 12, 126.0, 13.0}};
  t.ego_lane = 1;
  t.ego_s = 0.0;
  t.ego_speed = 4.0;
  detail::append_route_segment(t.route_pts, stem, 0.0, stem.total_length());
  for (size_t i = 1; i < turn.points.size(); ++i) t.route_pts.push_back(turn.points[i]);
  detail::append_route_segment(t.route_pts, main, 210.0, 246.0);
  t.merge_lane = 0;
  t.merge_lane_s = 206.0;  // x = 6 on the main lane
  t.route_merge_s = t.route_lane().project({6, 0}).s;
  if (signalized) {
    LightSpec light;
    light.pose = make_pose(1.8, -9.0, M_PI / 2);
    t.lights.push_back(light);
  }
  return t;
}

// Two successive lane changes across parallel dense streams.
inline ScenarioTemplate template_double_lane_change() {
  ScenarioTemplate t;
  t.id = "double_lane_change";
  Lane a = make_straight_lane(0, {-200, 0}, {200, 0}, 3.5);
  Lane b = make_straight_lane(1, {-200, 3.5}, {200, 3.5}, 3.5);
  b.recycle = true;
  Lane c = make_straight_lane(2, {-200, 7}, {200, 7}, 3.5);
  c.recycle = true;
  t.lanes = {a, b, c};
  t.traffic = {{1, 11, 110.0, 14.0}, {2, 11, 116.0, 14.0}};
  t.ego_lane = 0;
  t.ego_s = 160.0;  // x = -40
  t.ego_speed = 5.0;
  t.route_pts = {{-40, 0}, {-20, 0}, {0, 0},    {18, 3.5},
                 {30, 3.5}, {48, 7}, {60, 7},   {70, 7}};
  t.merge_lane = 1;
  t.merge_lane_s = 218.0;  // x = 18 on lane 1
  t.route_merge_s = t.route_lane().project({18, 3.5}).s;
  return t;
}

// Tangential entry into a circulating ring.
inline ScenarioTemplate template_roundabout_entry() {
  ScenarioTemplate t;
  t.id = "roundabout_entry";
  Lane ring = make_ring_lane(0, {0, 0}, 20.0, 3.5, 48);
  Lane entry;
  entry.id = 1;
  entry.width = 3.5;
  entry.merge_target = 0;
  entry.points = {{-52, -30}, {-34, -29}, {-18, -26}, {-7, -22.6}, {0, -20}};
  entry.finalize();
  t.lanes = {ring, entry};
  t.traffic = {{0, 7, 20.0, 16.0}};
  t.ego_lane = 1;
  t.ego_s = 0.0;
  t.ego_speed = 4.0;
  t.route_pts = entry.points;
  // ring arc position of (0, -20) is 3/4 around from (20, 0)
  double ring_len = ring.total_length();
  double s_touch = ring.project({0, -20}).s;
  detail::append_route_segment(t.route_pts, ring, s_touch + 2.0,
                               s_touch + 0.34 * ring_len);
  t.merge_lane = 0;
  t.merge_lane_s = s_touch;
  t.route_merge_s = t.route_lane().project({0, -20}).s;
  return t;
}

inline std::vector<ScenarioTemplate> builtin_templates() {
  return {template_lane_merge(), template_t_junction(false),
          template_double_lane_change(), template_roundabout_entry(),
          template_t_junction(true)};
}

inline ScenarioTemplate find_template(const std::string& id) {
  for (ScenarioTemplate& t : builtin_templates())
    if (t.id == id) return t;
  throw std::runtime_error("unknown scenario template: " + id);
}

// --- catalog serialization ----------------------------------------------------

inline std::string catalog_to_text(const std::vector<ScenarioTemplate>& ts) {
  std::ostringstream os;
  os << "catalog v1\n";
  for (const ScenarioTemplate& t : ts) {
    os << "template " << t.id << "\n";
    os << "limit " << format_double(t.speed_limit) << " goal_radius "
       << format_double(t.goal_radius) << "\n";
    for (const Lane& l : t.lanes) {
      os << "lane " << l.id << " width " << format_double(l.width)
         << " recycle " << int(l.recycle) << " closed " << int(l.closed)
         << " merge " << l.merge_target << "\n";
      for (const Vec2& p : l.points)
        os << "pt " << format_double(p.x) << " " << format_double(p.y) << "\n";
    }
    for (const TrafficSpec& s : t.traffic)
      os << "traffic " << s.lane << " " << s.count << " "
         << format_double(s.s0) << " " << format_double(s.spacing) << "\n";
    os << "ego " << t.ego_lane << " " << format_double(t.ego_s) << " "
       << format_double(t.ego_speed) << "\n";
    os << "route";
    for (const Vec2& p : t.route_pts)
      os << " " << format_double(p.x) << " " << format_double(p.y);
    os << "\n";
    os << "merge " << t.merge_lane << " " << format_double(t.merge_lane_s)
       << " " << format_double(t.route_merge_s) << "\n";
    for (const LightSpec& l : t.lights)
      os << "light " << format_double(l.pose.x) << " "
         << format_double(l.pose.y) << " " << format_double(l.pose.theta)
         << " " << format_double(l.green) << " " << format_double(l.yellow)
         << " " << format_double(l.red) << " " << int(l.seed_offset) << "\n";
    os << "end\n";
  }
  return os.str();
}

inline std::vector<ScenarioTemplate> catalog_from_text(const std::string& text) {
  std::vector<ScenarioTemplate> out;
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || trim(line) != "catalog v1")
    throw std::runtime_error("catalog: bad header");
  ScenarioTemplate cur;
  Lane* lane = nullptr;
  bool open = false;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    std::vector<std::string> f = split(trim(line), ' ');
    if (f.empty() || f[0].empty()) continue;
    auto need = [&](size_t n) {
      if (f.size() < n)
        throw std::runtime_error("catalog: short line " +
                                 std::to_string(lineno));
    };
    const std::string& k = f[0];
    if (k == "template") {
      need(2);
      cur = ScenarioTemplate{};
      cur.id = f[1];
      lane = nullptr;
      open = true;
    } else if (!open) {
      throw std::runtime_error("catalog: content outside template, line " +
                               std::to_string(lineno));
    } else if (k == "limit") {
      need(4);
      cur.speed_limit = std::stod(f[1]);
      cur.goal_radius = std::stod(f[3]);
    } else if (k == "lane") {
      need(10);
      Lane l;
      l.id = std::stoi(f[1]);
      l.width = std::stod(f[3]);
      l.recycle = std::stoi(f[5]) != 0;
      l.closed = std::stoi(f[7]) != 0;
      l.merge_target = std::stoi(f[9]);
      l.speed_limit = cur.speed_limit;
      cur.lanes.push_back(l);
      lane = &cur.lanes.back();
    } else if (k == "pt") {
      need(3);
      if (!lane) throw std::runtime_error("catalog: pt before lane, line " +
                                          std::to_string(lineno));
      lane->points.push_back({std::stod(f[1]), std::stod(f[2])});
    } else if (k == "traffic") {
      need(5);
      cur.traffic.push_back(
          {std::stoi(f[1]), std::stoi(f[2]), std::stod(f[3]), std::stod(f[4])});
    } else if (k == "ego") {
      need(4);
      cur.ego_lane = std::stoi(f[1]);
      cur.ego_s = std::stod(f[2]);
      cur.ego_speed = std::stod(f[3]);
    } else if (k == "route") {
      if ((f.size() - 1) % 2 != 0)
        throw std::runtime_error("catalog: odd route coords, line " +
                                 std::to_string(lineno));
      for (size_t i = 1; i + 1 < f.size(); i += 2)
        cur.route_pts.push_back({std::stod(f[i]), std::stod(f[i + 1])});
    } else if (k == "merge") {
      need(4);
      cur.merge_lane = std::stoi(f[1]);
      cur.merge_lane_s = std::stod(f[2]);
      cur.route_merge_s = std::stod(f[3]);
    } else if (k == "light") {
      need(8);
      LightSpec l;
      l.pose = make_pose(std::stod(f[1]), std::stod(f[2]), std::stod(f[3]));
      l.green = std::stod(f[4]);
      l.yellow = std::stod(f[5]);
      l.red = std::stod(f[6]);
      l.seed_offset = std::stoi(f[7]) != 0;
      cur.lights.push_back(l);
    } else if (k == "end") {
      for (Lane& l : cur.lanes) l.finalize();
      out.push_back(cur);
      open = false;
    } else {
      throw std::runtime_error("catalog: unknown key '" + k + "' line " +
                               std::to_string(lineno));
    }
  }
  if (open) throw std::runtime_error("catalog: missing end");
  return out;
}

}  // namespace modeplan
