#include <gtest/gtest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "modeplan/evalrun.hpp"
#include "modeplan/render.hpp"
#include "modeplan/settings.hpp"
#include "modeplan/train.hpp"

namespace modeplan {
namespace {

std::string temp_dir(const std::string& tag) {
  std::string dir =
      (std::filesystem::temp_directory_path() / ("modeplan_" + tag)).string();
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

HarnessSettings small_eval_settings() {
  HarnessSettings cfg;
  cfg.eval_templates = {"lane_merge", "t_junction"};
  cfg.seeds_per_template = 3;
  cfg.max_steps = 150;
  return cfg;
}

// A saved autopilot episode for the render tests.
EpisodeLog autopilot_log(const std::string& template_id, uint64_t seed,
                         int max_steps = 120) {
  World world(find_template(template_id), seed);
  HeuristicPolicy pol(autopilot_config());
  Policy policy = [&](const World& w, const WorldSnapshot& s) {
    return pol(w, s);
  };
  SimConfig sc;
  sc.max_steps = max_steps;
  EpisodeLog log;
  run_episode(world, policy, sc, &log);
  log.policy_name = "autopilot";
  return log;
}

// --- evaluation reports ----------------------------------------------------

TEST(EvalReport, MeanAndStderrAcrossRuns) {
  // three model seeds scoring 90/92/94 percent success: mean 92, se 1.155
  std::vector<RunCounts> runs(3);
  for (int r = 0; r < 3; ++r) {
    runs[size_t(r)].episodes = 100;
    runs[size_t(r)].outcome[int(Outcome::kSuccess)] = 90 + 2 * r;
    runs[size_t(r)].outcome[int(Outcome::kCrash)] = 10 - 2 * r;
  }
  ApproachReport rep = summarize_runs(Approach::kClosedLoop, runs);
  EXPECT_DOUBLE_EQ(rep.mean[int(Outcome::kSuccess)], 92.0);
  EXPECT_NEAR(rep.se[int(Outcome::kSuccess)], 2.0 / std::sqrt(3.0), 1e-12);
  EXPECT_NEAR(rep.se[int(Outcome::kSuccess)], 1.1547, 1e-4);
  // a single run reports zero spread rather than dividing by zero
  ApproachReport one = summarize_runs(Approach::kAutopilot, {runs[0]});
  EXPECT_DOUBLE_EQ(one.se[int(Outcome::kSuccess)], 0.0);
}

TEST(EvalReport, RatesPartitionEveryEpisode) {
  HarnessSettings cfg = small_eval_settings();
  RunCounts counts = run_eval_grid(Approach::kDataPolicy, nullptr, cfg);
  EXPECT_EQ(counts.episodes, 6);
  double total = 0.0;
  int raw = 0;
  for (int i = 0; i < 4; ++i) {
    total += counts.pct(i);
    raw += counts.outcome[i];
  }
  EXPECT_DOUBLE_EQ(total, 100.0);
  EXPECT_EQ(raw, counts.episodes);
}

TEST(EvalReport, GridIsDeterministicAcrossThreadCounts) {
  HarnessSettings cfg = small_eval_settings();
  std::string dir1 = temp_dir("grid1"), dir4 = temp_dir("grid4");
  RunCounts a = run_eval_grid(Approach::kAutopilot, nullptr, cfg, dir1);
  cfg.threads = 4;
  RunCounts b = run_eval_grid(Approach::kAutopilot, nullptr, cfg, dir4);
  for (int i = 0; i < 4; ++i) EXPECT_EQ(a.outcome[i], b.outcome[i]);
  for (const auto& entry : std::filesystem::directory_iterator(dir1)) {
    std::string name = entry.path().filename().string();
    EXPECT_EQ(read_text_file(dir1 + "/" + name),
              read_text_file(dir4 + "/" + name))
        << name;
  }
  std::filesystem::remove_all(dir1);
  std::filesystem::remove_all(dir4);
}

TEST(EvalReport, ReportedRatesMatchRecomputationFromLogs) {
  HarnessSettings cfg = small_eval_settings();
  std::string dir = temp_dir("logs");
  RunCounts counts = run_eval_grid(Approach::kAutopilot, nullptr, cfg, dir);
  RunCounts recount;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    EpisodeLog log = episode_log_from_text(read_text_file(entry.path()));
    ScenarioTemplate tpl = find_template(log.template_id);
    // the saved log alone must support outcome recomputation
    EpisodeResult again = detect_infractions(
        log, cfg.sim_config(), tpl.route_pts.back(), tpl.goal_radius);
    EXPECT_EQ(again.outcome, log.outcome) << entry.path();
    recount.add(log.outcome);
  }
  EXPECT_EQ(recount.episodes, counts.episodes);
  for (int i = 0; i < 4; ++i) EXPECT_EQ(recount.outcome[i], counts.outcome[i]);
  std::filesystem::remove_all(dir);
}

TEST(EvalReport, MissingCheckpointFailsBeforeAnyEpisode) {
  HarnessSettings cfg = small_eval_settings();
  std::string dir = temp_dir("nockpt");
  EXPECT_THROW(run_evaluation({Approach::kClosedLoop}, {dir + "/absent.ckpt"},
                              cfg, dir),
               std::exception);
  // no episode ran, so no logs appeared
  int files = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    (void)e;
    ++files;
  }
  EXPECT_EQ(files, 0);
  EXPECT_THROW(run_evaluation({Approach::kImitation}, {}, cfg, dir),
               std::exception);
  std::filesystem::remove_all(dir);
}

TEST(EvalReport, ApproachNamesRoundTrip) {
  for (Approach a : {Approach::kClosedLoop, Approach::kOpenLoop,
                     Approach::kImitation, Approach::kDataPolicy,
                     Approach::kAutopilot})
    EXPECT_EQ(approach_from_name(approach_name(a)), a);
  EXPECT_THROW(approach_from_name("open-loop"), std::exception);
}

TEST(EvalReport, TsvListsRatesAndRawCounts) {
  std::vector<RunCounts> runs(2);
  for (auto& r : runs) {
    r.episodes = 4;
    r.outcome[int(Outcome::kSuccess)] = 3;
    r.outcome[int(Outcome::kTimeout)] = 1;
  }
  EvalReport report;
  report.rows.push_back(summarize_runs(Approach::kAutopilot, runs));
  std::string tsv = eval_report_tsv(report);
  EXPECT_NE(tsv.find("autopilot"), std::string::npos);
  EXPECT_NE(tsv.find("75"), std::string::npos);
  EXPECT_NE(tsv.find("#run"), std::string::npos);
}

// --- rendering ---------------------------------------------------------------

TEST(Render, FrameCountFollowsStrideNotAgents) {
  std::string dir = temp_dir("render");
  // two templates with different vehicle counts, same step count
  EpisodeLog a = autopilot_log("lane_merge", 4, 100);
  EpisodeLog b = autopilot_log("double_lane_change", 4, 100);
  ASSERT_EQ(a.steps.size(), 100u);
  ASSERT_EQ(b.steps.size(), 100u);
  ASSERT_NE(a.steps[0].vehicles.size(), b.steps[0].vehicles.size());
  write_text_file(dir + "/a.log", episode_log_to_text(a));
  write_text_file(dir + "/b.log", episode_log_to_text(b));
  RenderStats sa = render_episode(dir + "/a.log", dir + "/a", 10, merge_weights());
  RenderStats sb = render_episode(dir + "/b.log", dir + "/b", 10, merge_weights());
  EXPECT_EQ(sa.frames, 10);  // 100 steps at stride 10
  EXPECT_EQ(sb.frames, 10);  // unchanged by the agent count
  EXPECT_EQ(sa.steps, 100);
  std::filesystem::remove_all(dir);
}

TEST(Render, EgoTraceRoundTripsExactly) {
  EpisodeLog log = autopilot_log("t_junction", 9, 80);
  ScenarioTemplate tpl = find_template("t_junction");
  std::string svg = render_frame_svg(log, tpl, 0);
  std::vector<Vec2> trace = parse_ego_trace_svg(svg);
  ASSERT_EQ(trace.size(), log.steps.size());
  for (size_t i = 0; i < trace.size(); ++i) {
    EXPECT_EQ(trace[i].x, log.steps[i].vehicles[0].second.pose.x);
    EXPECT_EQ(trace[i].y, log.steps[i].vehicles[0].second.pose.y);
  }
}

TEST(Render, SeriesHasOneRowPerStep) {
  EpisodeLog log = autopilot_log("lane_merge", 2, 60);
  ScenarioTemplate tpl = find_template("lane_merge");
  std::string tsv = episode_series_tsv(log, tpl, merge_weights());
  int rows = 0;
  for (char c : tsv) rows += c == '\n';
  EXPECT_EQ(rows, 61);  // header plus one row per step
  EXPECT_EQ(tsv.substr(0, 4), "step");
}

TEST(Render, MalformedLogReportsLineNumber) {
  std::string dir = temp_dir("badlog");
  EpisodeLog log = autopilot_log("lane_merge", 3, 30);
  std::string text = episode_log_to_text(log);
  // corrupt the third line
  size_t p = text.find('\n', text.find('\n') + 1);
  text.replace(p + 1, 4, "????");
  write_text_file(dir + "/bad.log", text);
  try {
    render_episode(dir + "/bad.log", dir + "/out", 10, merge_weights());
    FAIL() << "expected parse error";
  } catch (const std::exception& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace modeplan
