#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "modeplan/forecaster.hpp"
#include "modeplan/heuristic_policy.hpp"
#include "modeplan/planner.hpp"
#include "modeplan/settings.hpp"
#include "modeplan/threading.hpp"
#include "modeplan/train.hpp"
#include "modeplan/world.hpp"

namespace modeplan {

// The five driving policies under comparison. The first three need a trained
// checkpoint; the scripted two close the loop without one.
enum class Approach {
  kClosedLoop,  // imagined-rollout planning over ego latent modes
  kOpenLoop,    // score modes once against frozen predictions
  kImitation,   // follow the most likely predicted ego mode
  kDataPolicy,  // demonstration policy with per-episode sampled style
  kAutopilot,   // demonstration policy at its default style
};

inline const char* approach_name(Approach a) {
  switch (a) {
    case Approach::kClosedLoop: return "closed_loop";
    case Approach::kOpenLoop: return "open_loop";
    case Approach::kImitation: return "imitation";
    case Approach::kDataPolicy: return "data_policy";
    case Approach::kAutopilot: return "autopilot";
  }
  return "?";
}

inline Approach approach_from_name(const std::string& s) {
  for (Approach a : {Approach::kClosedLoop, Approach::kOpenLoop,
                     Approach::kImitation, Approach::kDataPolicy,
                     Approach::kAutopilot})
    if (s == approach_name(a)) return a;
  throw std::runtime_error("unknown approach '" + s + "'");
}

inline bool approach_needs_model(Approach a) {
  return a == Approach::kClosedLoop || a == Approach::kOpenLoop ||
         a == Approach::kImitation;
}

// Outcome tally of one grid run (one model seed over all templates x seeds).
struct RunCounts {
  int outcome[4] = {0, 0, 0, 0};  // success, static, crash, timeout
  int episodes = 0;

  void add(Outcome o) {
    outcome[int(o)] += 1;
    episodes += 1;
  }
  double pct(int i) const {
    return episodes ? 100.0 * double(outcome[i]) / double(episodes) : 0.0;
  }
};

// One policy row of the final comparison: per-run rates plus their mean and
// standard error across model seeds (sample sd / sqrt(n); zero for n = 1).
struct ApproachReport {
  std::string approach;
  std::vector<RunCounts> runs;
  int episodes_per_run = 0;
  double mean[4] = {0, 0, 0, 0};
  double se[4] = {0, 0, 0, 0};
};

struct EvalReport {
  std::vector<ApproachReport> rows;
};

inline ApproachReport summarize_runs(const std::string& approach,
                                     std::vector<RunCounts> runs) {
  if (runs.empty()) throw std::runtime_error("summarize_runs: no runs");
  ApproachReport rep;
  rep.approach = approach;
  rep.episodes_per_run = runs.front().episodes;
  rep.runs = std::move(runs);
  int n = int(rep.runs.size());
  for (int i = 0; i < 4; ++i) {
    double m = 0.0;
    for (const RunCounts& r : rep.runs) m += r.pct(i);
    m /= double(n);
    rep.mean[i] = m;
    if (n > 1) {
      double ss = 0.0;
      for (const RunCounts& r : rep.runs) {
        double d = r.pct(i) - m;
        ss += d * d;
      }
      rep.se[i] = std::sqrt(ss / double(n - 1)) / std::sqrt(double(n));
    }
  }
  return rep;
}

// --- single episode --------------------------------------------------------------

// Runs one episode of `approach`. `policy_stream` seeds everything the policy
// itself randomizes (per-step plan seeds, the data policy's style); scenario
// randomness comes only from `scenario_seed`, so approaches face identical
// traffic.
inline EpisodeResult run_eval_episode(Approach approach,
                                      const ScenarioTemplate& tpl,
                                      uint64_t scenario_seed,
                                      ModelParams* params,
                                      const HarnessSettings& cfg,
                                      uint64_t policy_stream,
                                      EpisodeLog* log = nullptr) {
  if (approach_needs_model(approach) && !params)
    throw std::runtime_error("run_eval_episode: approach needs a checkpoint");
  World world(tpl, scenario_seed);
  Policy policy;
  HeuristicPolicy scripted;  // kept alive for the scripted approaches

  switch (approach) {
    case Approach::kClosedLoop:
    case Approach::kOpenLoop: {
      // fresh per-episode instance so forward counters never race across
      // parallel episodes; parameters themselves are shared read-only
      auto model = std::make_shared<Forecaster>(*params);
      bool open = approach == Approach::kOpenLoop;
      policy = [model, &cfg, policy_stream, open](const World& w,
                                                  const WorldSnapshot& snap) {
        uint64_t plan_seed = derive_seed(policy_stream, uint64_t(w.step_count()));
        PlanResult pr = open ? open_loop_plan(*model, w, snap, cfg.planner, plan_seed)
                             : plan(*model, w, snap, cfg.planner, plan_seed);
        return pid_control(w.ego(), pr.target, cfg.planner);
      };
      break;
    }
    case Approach::kImitation: {
      auto model = std::make_shared<Forecaster>(*params);
      policy = [model, &cfg](const World& w, const WorldSnapshot& snap) {
        Waypoint target = imitation_policy(*model, snap, cfg.planner);
        return pid_control(w.ego(), target, cfg.planner);
      };
      break;
    }
    case Approach::kDataPolicy: {
      Rng rng(cfg.eval_seed, policy_stream);
      scripted = HeuristicPolicy(sample_data_policy_config(rng));
      policy = [&scripted](const World& w, const WorldSnapshot& snap) {
        return scripted(w, snap);
      };
      break;
    }
    case Approach::kAutopilot: {
      scripted = HeuristicPolicy(autopilot_config());
      policy = [&scripted](const World& w, const WorldSnapshot& snap) {
        return scripted(w, snap);
      };
      break;
    }
  }

  if (log) {
    log->policy_name = approach_name(approach);
    log->policy_seed = policy_stream;
  }
  EpisodeResult result = run_episode(world, policy, cfg.sim_config(), log);
  if (log) {
    // run_episode fills identity fields from the world; keep the policy tag
    log->policy_name = approach_name(approach);
    log->policy_seed = policy_stream;
  }
  return result;
}

// --- the grid ----------------------------------------------------------------------

// Every template x seed episode of one run. Episodes parallelize; outcomes
// reduce in episode order so the tally and any written logs are identical
// for any thread count.
inline RunCounts run_eval_grid(Approach approach, ModelParams* params,
                               const HarnessSettings& cfg,
                               const std::string& log_dir = "",
                               const std::string& run_tag = "",
                               std::ostream* progress = nullptr) {
  struct Job {
    ScenarioTemplate tpl;
    uint64_t scenario_seed;
    uint64_t policy_stream;
  };
  std::vector<Job> jobs;
  for (int ti = 0; ti < int(cfg.eval_templates.size()); ++ti) {
    ScenarioTemplate tpl = find_template(cfg.eval_templates[size_t(ti)]);
    for (int s = 0; s < cfg.seeds_per_template; ++s)
      jobs.push_back({tpl, cfg.eval_seed + uint64_t(s),
                      uint64_t(ti) * 1000000 + uint64_t(s)});
  }
  if (!log_dir.empty()) std::filesystem::create_directories(log_dir);

  struct EpisodeOut {
    Outcome outcome;
    std::string log_name;
    std::string log_text;
  };
  RunCounts counts;
  parallel_ordered<EpisodeOut>(
      int(jobs.size()), cfg.threads,
      [&](int i) {
        const Job& job = jobs[size_t(i)];
        EpisodeOut out;
        EpisodeLog log;
        EpisodeResult r =
            run_eval_episode(approach, job.tpl, job.scenario_seed, params, cfg,
                             job.policy_stream, log_dir.empty() ? nullptr : &log);
        out.outcome = r.outcome;
        if (!log_dir.empty()) {
          out.log_name = run_tag + std::string(approach_name(approach)) + "_" +
                         job.tpl.id + "_s" + std::to_string(job.scenario_seed) +
                         ".log";
          out.log_text = episode_log_to_text(log);
        }
        return out;
      },
      [&](int i, EpisodeOut&& out) {
        counts.add(out.outcome);
        if (!out.log_name.empty())
          write_text_file(log_dir + "/" + out.log_name, out.log_text);
        if (progress && (i + 1) % 10 == 0) {
          (*progress) << "  " << approach_name(approach) << " " << (i + 1) << "/"
                      << jobs.size() << " episodes\n";
          progress->flush();
        }
      });
  return counts;
}

// --- report assembly ------------------------------------------------------------------

// Runs each requested approach over the grid: learned approaches once per
// checkpoint (model seed), scripted ones once. All checkpoints are loaded
// up front, so a missing file fails before any episode runs.
inline EvalReport run_evaluation(const std::vector<Approach>& approaches,
                                 const std::vector<std::string>& checkpoints,
                                 const HarnessSettings& cfg,
                                 const std::string& log_dir = "",
                                 std::ostream* progress = nullptr) {
  bool needs_model = false;
  for (Approach a : approaches) needs_model |= approach_needs_model(a);
  std::vector<ModelParams> models;
  if (needs_model) {
    if (checkpoints.empty())
      throw std::runtime_error("eval: approach requires --checkpoint");
    for (const std::string& path : checkpoints) {
      ModelParams params = init_model_params(desk_model_config(), 0);
      load_model(path, &params);
      models.push_back(std::move(params));
    }
  }

  EvalReport report;
  for (Approach a : approaches) {
    std::vector<RunCounts> runs;
    if (approach_needs_model(a)) {
      for (int m = 0; m < int(models.size()); ++m) {
        if (progress)
          (*progress) << approach_name(a) << ": model seed run " << m << "\n";
        runs.push_back(run_eval_grid(a, &models[size_t(m)], cfg, log_dir,
                                     "m" + std::to_string(m) + "_", progress));
      }
    } else {
      if (progress) (*progress) << approach_name(a) << ": scripted run\n";
      runs.push_back(run_eval_grid(a, nullptr, cfg, log_dir, "", progress));
    }
    report.rows.push_back(summarize_runs(approach_name(a), std::move(runs)));
  }
  return report;
}

// Machine form: exact rates and raw counts, one summary row plus one line
// per run so the summary can be re-derived from this file alone.
inline std::string eval_report_tsv(const EvalReport& report) {
  std::string out =
      "approach\truns\tepisodes_per_run\tsuccess_mean\tsuccess_se\t"
      "static_mean\tstatic_se\tcrash_mean\tcrash_se\ttimeout_mean\ttimeout_se\n";
  for (const ApproachReport& row : report.rows) {
    out += row.approach + "\t" + std::to_string(row.runs.size()) + "\t" +
           std::to_string(row.episodes_per_run);
    for (int i = 0; i < 4; ++i)
      out += "\t" + format_double(row.mean[i]) + "\t" + format_double(row.se[i]);
    out += "\n";
  }
  out += "#run\tapproach\trun_index\tsuccess\tstatic\tcrash\ttimeout\tepisodes\n";
  for (const ApproachReport& row : report.rows)
    for (int r = 0; r < int(row.runs.size()); ++r) {
      const RunCounts& c = row.runs[size_t(r)];
      out += "#run\t" + row.approach + "\t" + std::to_string(r);
      for (int i = 0; i < 4; ++i) out += "\t" + std::to_string(c.outcome[i]);
      out += "\t" + std::to_string(c.episodes) + "\n";
    }
  return out;
}

// Human form: fixed-width table with mean +/- standard error.
inline std::string eval_report_table(const EvalReport& report) {
  char buf[160];
  std::string out;
  std::snprintf(buf, sizeof(buf), "%-12s %9s %15s %15s %15s %15s\n", "approach",
                "episodes", "success%", "static%", "crash%", "timeout%");
  out += buf;
  for (const ApproachReport& row : report.rows) {
    std::string eps = std::to_string(row.runs.size()) + "x" +
                      std::to_string(row.episodes_per_run);
    std::snprintf(buf, sizeof(buf), "%-12s %9s", row.approach.c_str(),
                  eps.c_str());
    out += buf;
    for (int i = 0; i < 4; ++i) {
      std::snprintf(buf, sizeof(buf), "   %5.1f +- %4.1f", row.mean[i],
                    row.se[i]);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

}  // namespace modeplan
