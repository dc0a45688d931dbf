#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "modeplan/configfile.hpp"
#include "modeplan/dataset.hpp"
#include "modeplan/settings.hpp"
#include "modeplan/threading.hpp"
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

// --- config file parsing -------------------------------------------------

TEST(ConfigFile, SectionsPrefixKeys) {
  ConfigFile cfg = ConfigFile::parse(
      "top = 1\n"
      "[model]\n"
      "dim = 64  \n"
      "# a comment\n"
      "; another comment\n"
      "[train]\n"
      "lr = 3e-4\n");
  EXPECT_EQ(cfg.get_int("top", 0), 1);
  EXPECT_EQ(cfg.get_int("model.dim", 0), 64);
  EXPECT_DOUBLE_EQ(cfg.get_double("train.lr", 0.0), 3e-4);
  EXPECT_FALSE(cfg.has("dim"));
}

TEST(ConfigFile, ErrorsCarryLineNumbers) {
  try {
    ConfigFile::parse("[model]\ndim = 64\nnonsense line\n");
    FAIL() << "expected parse error";
  } catch (const std::exception& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
}

TEST(ConfigFile, TypedGettersRejectTrailingGarbage) {
  ConfigFile cfg = ConfigFile::parse("[model]\ndim = 64x\nlr = 1.5.2\n");
  EXPECT_THROW(cfg.get_int("model.dim", 0), std::exception);
  EXPECT_THROW(cfg.get_double("model.lr", 0.0), std::exception);
}

TEST(Settings, ConfigFileOverridesDefaults) {
  HarnessSettings s;
  int default_dim = s.model.dim;
  s.apply(ConfigFile::parse("[model]\ndim = 48\nheads = 6\n"));
  EXPECT_EQ(s.model.dim, 48);
  EXPECT_NE(s.model.dim, default_dim);
  EXPECT_EQ(s.model.heads, 6);
  // untouched keys keep their defaults
  EXPECT_EQ(s.epochs, HarnessSettings().epochs);
}

TEST(Settings, FlagStyleOverrideWinsOverFile) {
  // the CLI layers flag values onto the parsed file before applying
  ConfigFile cfg = ConfigFile::parse("[train]\nepochs = 30\n");
  cfg.set("train.epochs", "5");
  HarnessSettings s;
  s.apply(cfg);
  EXPECT_EQ(s.epochs, 5);
}

TEST(Settings, UnknownKeyRejected) {
  HarnessSettings s;
  EXPECT_THROW(s.apply(ConfigFile::parse("[model]\nwidth = 64\n")),
               std::exception);
}

TEST(Settings, PlannerPresetAndShapeChecks) {
  HarnessSettings s;
  s.apply(ConfigFile::parse("[planner]\npreset = longest6\n"));
  EXPECT_DOUBLE_EQ(s.planner.weights.beta_light, 4.0);
  HarnessSettings bad;
  // dim must stay divisible by heads
  EXPECT_THROW(bad.apply(ConfigFile::parse("[model]\ndim = 65\n")),
               std::exception);
}

TEST(Settings, SimKeysReachPlannerObservation) {
  HarnessSettings s;
  s.apply(ConfigFile::parse("[sim]\nobs_range = 25\nmax_vehicles = 5\n"));
  EXPECT_DOUBLE_EQ(s.planner.obs_range, 25.0);
  EXPECT_EQ(s.planner.caps.vehicles, 5);
}

// --- ordered parallel reduction -------------------------------------------

TEST(Threading, ConsumesInIndexOrderForAnyThreadCount) {
  for (int threads : {1, 2, 4}) {
    std::vector<int> order;
    parallel_ordered<int>(
        20, threads, [](int i) { return i * i; },
        [&](int i, int&& v) {
          EXPECT_EQ(v, i * i);
          order.push_back(i);
        });
    ASSERT_EQ(order.size(), 20u);
    for (int i = 0; i < 20; ++i) EXPECT_EQ(order[size_t(i)], i);
  }
}

TEST(Threading, JobExceptionPropagates) {
  EXPECT_THROW(parallel_ordered<int>(
                   8, 4,
                   [](int i) {
                     if (i == 5) throw std::runtime_error("job 5 failed");
                     return i;
                   },
                   [](int, int&&) {}),
               std::runtime_error);
}

TEST(Threading, ConsumerExceptionPropagates) {
  EXPECT_THROW(parallel_ordered<int>(
                   8, 2, [](int i) { return i; },
                   [](int i, int&&) {
                     if (i == 3) throw std::runtime_error("consume 3 failed");
                   }),
               std::runtime_error);
}

// --- dataset records -------------------------------------------------------

HarnessSettings tiny_collect_settings() {
  HarnessSettings cfg;
  cfg.model.horizon = 5;
  cfg.collect_templates = {"lane_merge"};
  cfg.episodes_per_template = 2;
  cfg.max_steps = 80;
  return cfg;
}

TEST(Dataset, RecordRoundTripIsIdentity) {
  HarnessSettings cfg = tiny_collect_settings();
  std::vector<std::string> lines =
      detail::collect_episode(find_template("lane_merge"), 3, 1, cfg);
  ASSERT_GT(lines.size(), 10u);
  for (const std::string& line : lines) {
    DatasetRecord rec = parse_record(line);
    EXPECT_EQ(serialize_record(rec), line);
  }
}

TEST(Dataset, EpisodeYieldsOneRecordPerStepWithPaddedTail) {
  // an N-step episode must produce N records whose last H are mask-padded
  HarnessSettings cfg = tiny_collect_settings();
  const int H = cfg.model.horizon;
  std::vector<std::string> lines =
      detail::collect_episode(find_template("lane_merge"), 7, 0, cfg);
  const int n = int(lines.size());
  std::vector<DatasetRecord> recs;
  for (const std::string& line : lines) recs.push_back(parse_record(line));
  for (int i = 0; i < n; ++i) {
    EXPECT_EQ(recs[size_t(i)].step_index, i);
    // ego future steps that land inside the episode are observed
    int expect_valid = std::min(H, n - 1 - i);
    int ego_valid = 0;
    for (int h = 0; h < H; ++h) ego_valid += recs[size_t(i)].valid[size_t(h)];
    EXPECT_EQ(ego_valid, expect_valid) << "record " << i;
    // validity is a prefix: once masked, stays masked
    for (int h = 1; h < H; ++h)
      EXPECT_LE(recs[size_t(i)].valid[size_t(h)],
                recs[size_t(i)].valid[size_t(h - 1)]);
  }
  // exactly the last H records have a padded ego future
  for (int i = 0; i < n; ++i) {
    bool padded = recs[size_t(i)].valid[size_t(H - 1)] == 0;
    EXPECT_EQ(padded, i >= n - H) << "record " << i;
  }
}

TEST(Dataset, MaskedFutureEntriesAreZero) {
  HarnessSettings cfg = tiny_collect_settings();
  std::vector<std::string> lines =
      detail::collect_episode(find_template("lane_merge"), 11, 2, cfg);
  DatasetRecord rec = parse_record(lines.back());  // fully padded ego future
  const int H = rec.H;
  for (int a = 0; a < rec.fs.num_vehicles(); ++a)
    for (int h = 0; h < H; ++h)
      if (!rec.valid[size_t(a * H + h)])
        for (int d = 0; d < 4; ++d)
          EXPECT_EQ(rec.futures[size_t((a * H + h) * 4 + d)], 0.0);
}

TEST(Dataset, FuturesAreInFrameDisplacements) {
  // unrolling the stored displacements must land on the simulated states
  HarnessSettings cfg = tiny_collect_settings();
  ScenarioTemplate tpl = find_template("lane_merge");
  std::vector<std::string> lines = detail::collect_episode(tpl, 5, 3, cfg);
  std::vector<DatasetRecord> recs;
  for (const std::string& line : lines) recs.push_back(parse_record(line));

  const DatasetRecord& r0 = recs[0];
  const int H = r0.H;
  ASSERT_GE(int(recs.size()), H + 1);
  // ego is agent 0 in every record; integrate its displacement rows
  std::vector<double> init = {r0.fs.vehicle_states[0].pose.x,
                              r0.fs.vehicle_states[0].pose.y,
                              r0.fs.vehicle_states[0].pose.theta,
                              r0.fs.vehicle_states[0].speed};
  std::vector<double> disp(r0.futures.begin(), r0.futures.begin() + H * 4);
  std::vector<double> abs = integrate_displacements(init, disp, H);
  for (int h = 0; h < H; ++h) {
    ASSERT_TRUE(r0.valid[size_t(h)]);
    const VehicleState& truth = recs[size_t(h + 1)].fs.vehicle_states[0];
    EXPECT_NEAR(abs[size_t(h) * 4 + 0], truth.pose.x, 1e-9);
    EXPECT_NEAR(abs[size_t(h) * 4 + 1], truth.pose.y, 1e-9);
    EXPECT_NEAR(abs[size_t(h) * 4 + 3], truth.speed, 1e-9);
  }
}

TEST(Dataset, CollectIsByteIdenticalAcrossRunsAndThreads) {
  std::string dir = temp_dir("collect");
  HarnessSettings cfg = tiny_collect_settings();
  cfg.collect_templates = {"lane_merge", "t_junction"};
  collect_dataset(cfg, dir + "/a.mpds");
  collect_dataset(cfg, dir + "/b.mpds");
  cfg.threads = 4;
  collect_dataset(cfg, dir + "/c.mpds");
  std::string a = read_text_file(dir + "/a.mpds");
  EXPECT_EQ(a, read_text_file(dir + "/b.mpds"));
  EXPECT_EQ(a, read_text_file(dir + "/c.mpds"));
  EXPECT_FALSE(std::filesystem::exists(dir + "/a.mpds.tmp"));
  std::filesystem::remove_all(dir);
}

TEST(Dataset, FileRoundTripAndSchemaSidecar) {
  std::string dir = temp_dir("dsfile");
  HarnessSettings cfg = tiny_collect_settings();
  CollectStats stats = collect_dataset(cfg, dir + "/d.mpds");
  EXPECT_EQ(stats.episodes, 2);
  std::vector<DatasetRecord> recs = read_dataset(dir + "/d.mpds");
  EXPECT_EQ(int(recs.size()), stats.records);
  EXPECT_NE(read_text_file(dir + "/d.mpds.schema").find("modeplan-dataset v1"),
            std::string::npos);
  std::filesystem::remove_all(dir);
}

TEST(Dataset, ReadErrorsNameTheLine) {
  std::string dir = temp_dir("dsbad");
  write_text_file(dir + "/bad.mpds",
                  dataset_schema_text() + "not a record\n");
  try {
    read_dataset(dir + "/bad.mpds");
    FAIL() << "expected parse error";
  } catch (const std::exception& e) {
    EXPECT_NE(std::string(e.what()).find("line"), std::string::npos);
  }
  std::filesystem::remove_all(dir);
}

TEST(Dataset, SplitByEpisodeIsDisjointAndTenPercent) {
  std::vector<DatasetRecord> recs;
  for (int e = 0; e < 30; ++e) {
    DatasetRecord r;
    r.template_id = e % 2 ? "a" : "b";
    r.scenario_seed = uint64_t(e / 2);  // ids repeat across templates
    for (int s = 0; s < 7; ++s) {
      r.step_index = s;
      recs.push_back(r);
    }
  }
  std::vector<int> train, val;
  split_by_episode(recs, &train, &val);
  EXPECT_EQ(train.size() + val.size(), recs.size());
  EXPECT_EQ(val.size(), recs.size() / 10);
  std::set<std::pair<std::string, uint64_t>> val_eps;
  for (int i : val)
    val_eps.insert({recs[size_t(i)].template_id, recs[size_t(i)].scenario_seed});
  for (int i : train)
    EXPECT_EQ(val_eps.count(
                  {recs[size_t(i)].template_id, recs[size_t(i)].scenario_seed}),
              0u);
}

}  // namespace
}  // namespace modeplan
