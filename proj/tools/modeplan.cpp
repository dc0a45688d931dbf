// Command-line front end: collect demonstrations, train the forecaster,
// evaluate planning approaches, render saved episodes, and run the built-in
// invariant suite. Every run is reproducible from a config file plus the
// seeds baked into that config; flags mirror config keys and override them.
#include <cstdint>
#include <exception>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "modeplan/dataset.hpp"
#include "modeplan/evalrun.hpp"
#include "modeplan/render.hpp"
#include "modeplan/selfcheck.hpp"
#include "modeplan/settings.hpp"
#include "modeplan/train.hpp"
#include "modeplan/util.hpp"

namespace {

using namespace modeplan;

// Key/value overrides captured from flags. Resolution order is fixed:
// built-in defaults, then the config file, then any flag the user passed.
struct Overrides {
  std::string config_path;
  std::map<std::string, std::string> values;
};

void add_config_options(CLI::App* cmd, Overrides* ov) {
  cmd->add_option("--config", ov->config_path, "INI config file")
      ->check(CLI::ExistingFile);
  for (const std::string& key : HarnessSettings::known_keys()) {
    cmd->add_option_function<std::string>(
        "--" + key,
        [ov, key](const std::string& v) { ov->values[key] = v; },
        "overrides config key " + key);
  }
}

HarnessSettings resolve_settings(const Overrides& ov) {
  ConfigFile cfg;
  if (!ov.config_path.empty()) cfg = ConfigFile::load(ov.config_path);
  for (const auto& [key, value] : ov.values) cfg.set(key, value);
  HarnessSettings settings;
  settings.apply(cfg);
  return settings;
}

int run_collect(const HarnessSettings& cfg, const std::string& out_path) {
  CollectStats stats = collect_dataset(cfg, out_path);
  std::cout << "collect: wrote " << stats.records << " records from "
            << stats.episodes << " episodes to " << out_path << "\n";
  return 0;
}

int run_train(const HarnessSettings& cfg, const std::string& data_path,
              const std::string& ckpt_path) {
  std::vector<DatasetRecord> records = read_dataset(data_path);
  std::cout << "train: " << records.size() << " records from " << data_path
            << "\n";
  TrainResult result = train_model(cfg, records, ckpt_path, &std::cout);
  std::cout << "train: wrote " << ckpt_path << " (final val loss "
            << format_double(result.history.back().val_loss) << ")\n";
  return 0;
}

int run_eval(const HarnessSettings& cfg, const std::vector<Approach>& approaches,
             const std::vector<std::string>& checkpoints,
             const std::string& out_prefix, const std::string& log_dir) {
  EvalReport report =
      run_evaluation(approaches, checkpoints, cfg, log_dir, &std::cout);
  std::string table = eval_report_table(report);
  std::cout << table;
  if (!out_prefix.empty()) {
    write_text_file(out_prefix + ".tsv", eval_report_tsv(report));
    write_text_file(out_prefix + ".txt", table);
    std::cout << "eval: wrote " << out_prefix << ".tsv and " << out_prefix
              << ".txt\n";
  }
  return 0;
}

int run_render(const HarnessSettings& cfg, const std::string& log_path,
               const std::string& out_dir, int stride) {
  RenderStats stats =
      render_episode(log_path, out_dir, stride, cfg.planner.weights);
  std::cout << "render: " << stats.frames << " frames from " << stats.steps
            << " steps in " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mode-conditioned trajectory forecasting and planning"};
  app.require_subcommand(1);

  Overrides ov;

  auto* collect = app.add_subcommand(
      "collect", "run the demonstration policy and record a dataset");
  std::string collect_out;
  collect->add_option("--out", collect_out, "dataset file to write")
      ->required();
  add_config_options(collect, &ov);

  auto* train = app.add_subcommand("train", "fit the forecaster to a dataset");
  std::string train_data, train_ckpt;
  train->add_option("--data", train_data, "dataset file from `collect`")
      ->required()
      ->check(CLI::ExistingFile);
  train->add_option("--out", train_ckpt, "checkpoint file to write")
      ->required();
  add_config_options(train, &ov);

  auto* eval = app.add_subcommand(
      "eval", "run approaches over the scenario grid and report outcomes");
  std::vector<std::string> eval_approaches, eval_ckpts;
  std::string eval_out, eval_logs;
  eval->add_option("--approach", eval_approaches,
                   "closed_loop, open_loop, imitation, data_policy, autopilot")
      ->required()
      ->delimiter(',');
  eval->add_option("--checkpoint", eval_ckpts,
                   "trained checkpoint; repeat for multiple model seeds");
  eval->add_option("--out", eval_out, "report path prefix (.tsv/.txt)");
  eval->add_option("--log-dir", eval_logs, "directory for episode logs");
  add_config_options(eval, &ov);

  auto* render = app.add_subcommand(
      "render", "draw SVG frames and the reward series for a saved episode");
  std::string render_log, render_out;
  int render_stride = 10;
  render->add_option("--log", render_log, "episode log from `eval --log-dir`")
      ->required()
      ->check(CLI::ExistingFile);
  render->add_option("--out", render_out, "output directory")->required();
  render->add_option("--stride", render_stride, "steps between frames");
  add_config_options(render, &ov);

  auto* selfcheck =
      app.add_subcommand("selfcheck", "verify the built-in invariant suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  // Bad config values and unknown names are usage errors, not runtime ones.
  HarnessSettings cfg;
  std::vector<Approach> approaches;
  try {
    if (!selfcheck->parsed()) cfg = resolve_settings(ov);
    for (const std::string& name : eval_approaches)
      approaches.push_back(approach_from_name(name));
  } catch (const std::exception& e) {
    std::cerr << "modeplan: " << e.what() << "\n";
    return 1;
  }

  try {
    if (collect->parsed()) return run_collect(cfg, collect_out);
    if (train->parsed()) return run_train(cfg, train_data, train_ckpt);
    if (eval->parsed())
      return run_eval(cfg, approaches, eval_ckpts, eval_out, eval_logs);
    if (render->parsed())
      return run_render(cfg, render_log, render_out, render_stride);
    if (selfcheck->parsed()) return run_selfcheck(std::cout);
  } catch (const std::exception& e) {
    std::cerr << "modeplan: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
