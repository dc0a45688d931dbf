#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "modeplan/planner.hpp"
#include "modeplan/scenario.hpp"
#include "modeplan/settings.hpp"
#include "modeplan/util.hpp"
#include "modeplan/world.hpp"

namespace modeplan {

namespace detail {

inline std::string svg_color(LightState l) {
  switch (l) {
    case LightState::kRed: return "#d33";
    case LightState::kYellow: return "#da3";
    case LightState::kGreen: return "#3a3";
  }
  return "#888";
}

inline void svg_polyline(std::string& out, const std::vector<Vec2>& pts,
                         const std::string& attrs) {
  out += "  <polyline fill=\"none\" " + attrs + " points=\"";
  for (size_t i = 0; i < pts.size(); ++i) {
    if (i) out += " ";
    out += format_double(pts[i].x) + "," + format_double(pts[i].y);
  }
  out += "\"/>\n";
}

}  // namespace detail

// One frame: lane ribbons, the ego route, every vehicle box at `step`, light
// discs in their state at that step, and the ego's full driven trace. All
// geometry is in world coordinates under a single y-flip transform, and the
// trace polyline keeps exact (round-trippable) coordinate text.
inline std::string render_frame_svg(const EpisodeLog& log,
                                    const ScenarioTemplate& tpl, int step) {
  if (step < 0 || step >= int(log.steps.size()))
    throw std::runtime_error("render: frame step out of range");

  double min_x = 1e18, min_y = 1e18, max_x = -1e18, max_y = -1e18;
  auto grow = [&](const Vec2& p) {
    min_x = std::min(min_x, p.x);
    max_x = std::max(max_x, p.x);
    min_y = std::min(min_y, p.y);
    max_y = std::max(max_y, p.y);
  };
  for (const Lane& lane : tpl.lanes)
    for (const Vec2& p : lane.points) grow(p);
  for (const Vec2& p : tpl.route_pts) grow(p);
  double margin = 8.0;
  double w = (max_x - min_x) + 2 * margin, h = (max_y - min_y) + 2 * margin;

  char buf[256];
  std::string out;
  std::snprintf(buf, sizeof(buf),
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" "
                "height=\"%.0f\" viewBox=\"0 0 %.2f %.2f\">\n",
                2.5 * w, 2.5 * h, w, h);
  out += buf;
  std::snprintf(buf, sizeof(buf),
                "<g transform=\"matrix(1 0 0 -1 %.4f %.4f)\">\n",
                -min_x + margin, max_y + margin);
  out += buf;

  for (const Lane& lane : tpl.lanes)
    detail::svg_polyline(out, lane.points,
                         "stroke=\"#d8d8d8\" stroke-width=\"" +
                             format_double(lane.width) +
                             "\" stroke-linecap=\"round\" stroke-linejoin=\"round\"");
  for (const Lane& lane : tpl.lanes)
    detail::svg_polyline(out, lane.points,
                         "stroke=\"#aaa\" stroke-width=\"0.15\" "
                         "stroke-dasharray=\"1.5,1.5\"");
  detail::svg_polyline(out, tpl.route_pts,
                       "stroke=\"#46c\" stroke-width=\"0.4\" "
                       "stroke-dasharray=\"2,1\" opacity=\"0.8\"");

  const EpisodeLog::Step& st = log.steps[size_t(step)];
  for (size_t li = 0; li < st.lights.size() && li < tpl.lights.size(); ++li) {
    const Pose2& p = tpl.lights[li].pose;
    std::snprintf(buf, sizeof(buf),
                  "  <circle cx=\"%.3f\" cy=\"%.3f\" r=\"1.2\" fill=\"%s\"/>\n",
                  p.x, p.y, detail::svg_color(st.lights[li]).c_str());
    out += buf;
  }

  for (const auto& [id, v] : st.vehicles) {
    std::snprintf(
        buf, sizeof(buf),
        "  <g transform=\"translate(%.4f %.4f) rotate(%.4f)\"><rect "
        "x=\"%.3f\" y=\"%.3f\" width=\"%.3f\" height=\"%.3f\" fill=\"%s\" "
        "opacity=\"0.9\"/></g>\n",
        v.pose.x, v.pose.y, v.pose.theta * 180.0 / M_PI, -v.half_length,
        -v.half_width, 2 * v.half_length, 2 * v.half_width,
        id == 0 ? "#c33" : "#369");
    out += buf;
  }

  // realized ego path across the whole episode, exact coordinates
  std::vector<Vec2> trace;
  for (const auto& s : log.steps)
    for (const auto& [id, v] : s.vehicles)
      if (id == 0) trace.push_back(v.pose.position());
  detail::svg_polyline(out, trace,
                       "id=\"ego-trace\" stroke=\"#c33\" stroke-width=\"0.25\"");

  out += "</g>\n";
  std::snprintf(buf, sizeof(buf),
                "<text x=\"4\" y=\"10\" font-size=\"6\">%s seed %llu step %d "
                "(%s)</text>\n",
                log.template_id.c_str(),
                static_cast<unsigned long long>(log.scenario_seed), step,
                outcome_name(log.outcome));
  out += buf;
  out += "</svg>\n";
  return out;
}

// Pulls the exact ego-trace coordinates back out of a rendered frame.
inline std::vector<Vec2> parse_ego_trace_svg(const std::string& svg) {
  size_t at = svg.find("id=\"ego-trace\"");
  if (at == std::string::npos)
    throw std::runtime_error("render: frame has no ego-trace polyline");
  size_t p0 = svg.find("points=\"", at);
  if (p0 == std::string::npos)
    throw std::runtime_error("render: ego-trace has no points");
  p0 += 8;
  size_t p1 = svg.find('"', p0);
  std::vector<Vec2> pts;
  for (const std::string& pair : split(svg.substr(p0, p1 - p0), ' ')) {
    if (trim(pair).empty()) continue;
    std::vector<std::string> xy = split(pair, ',');
    if (xy.size() != 2) throw std::runtime_error("render: bad trace point");
    pts.push_back({std::stod(xy[0]), std::stod(xy[1])});
  }
  return pts;
}

// Per-step speed and shaped reward of the logged ego, tab-delimited.
inline std::string episode_series_tsv(const EpisodeLog& log,
                                      const ScenarioTemplate& tpl,
                                      const RewardWeights& weights) {
  Lane route = tpl.route_lane();
  std::string out = "step\ttime\tspeed\treward\tterminate\n";
  for (int i = 0; i < int(log.steps.size()); ++i) {
    const EpisodeLog::Step& st = log.steps[size_t(i)];
    VehicleState ego;
    std::vector<VehicleState> others;
    bool saw_ego = false;
    for (const auto& [id, v] : st.vehicles) {
      if (id == 0) {
        ego = v;
        saw_ego = true;
      } else {
        others.push_back(v);
      }
    }
    if (!saw_ego)
      throw std::runtime_error("render: step " + std::to_string(i) +
                               " has no ego vehicle");
    RewardContext ctx;
    ctx.route = &route;
    ctx.speed_limit = tpl.speed_limit;
    for (size_t li = 0; li < st.lights.size() && li < tpl.lights.size(); ++li) {
      ContextObject c;
      c.kind = ObjectKind::kTrafficLight;
      c.pose = tpl.lights[li].pose;
      c.light = st.lights[li];
      ctx.lights.push_back(c);
    }
    RewardResult r = reward(ego, others, ctx, weights);
    out += std::to_string(i) + "\t" + format_double(st.time) + "\t" +
           format_double(ego.speed) + "\t" + format_double(r.value) + "\t" +
           (r.terminate ? "1" : "0") + "\n";
  }
  return out;
}

struct RenderStats {
  int frames = 0;
  int steps = 0;
};

// Renders a saved episode: one SVG frame every `stride` steps plus the
// speed/reward series. The log parser reports malformed lines by number.
inline RenderStats render_episode(const std::string& log_path,
                                  const std::string& out_dir, int stride,
                                  const RewardWeights& weights) {
  if (stride < 1) throw std::runtime_error("render: stride must be >= 1");
  EpisodeLog log = episode_log_from_text(read_text_file(log_path));
  if (log.steps.empty()) throw std::runtime_error("render: log has no steps");
  ScenarioTemplate tpl = find_template(log.template_id);
  std::filesystem::create_directories(out_dir);

  RenderStats stats;
  stats.steps = int(log.steps.size());
  for (int i = 0; i < int(log.steps.size()); i += stride) {
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%04d.svg", i);
    write_text_file(out_dir + "/" + name, render_frame_svg(log, tpl, i));
    ++stats.frames;
  }
  write_text_file(out_dir + "/series.tsv",
                  episode_series_tsv(log, tpl, weights));
  return stats;
}

}  // namespace modeplan
