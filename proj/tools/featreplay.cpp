// Command-line front end: run experiments, score volumes, render generated masks.

#include "featreplay/errors.hpp"
#include "featreplay/experiment.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

using namespace featreplay;

namespace {

constexpr int kOk = 0;
constexpr int kRuntimeError = 1;
constexpr int kUsageError = 2;

int cmd_run(const std::string& config_path, const std::string& output) {
  const ExperimentConfig cfg = load_experiment_config(config_path);
  const auto run_dir = resolve_output_dir(output.empty() ? cfg.output_dir : std::filesystem::path(output));
  run_experiment(cfg, run_dir, &std::cerr);
  std::cout << run_dir.string() << "\n";
  return kOk;
}

int cmd_eval_ood(const std::string& run_dir, const std::string& volumes, const std::string& stream, const std::string& method, int stage,
                 const std::string& output) {
  const auto stage_dir = find_stage_dir(run_dir, stream, method, stage);
  const auto verdicts = eval_ood(stage_dir, volumes);
  for (const auto& v : verdicts) {
    std::cout << v.subject_id << " score=" << format_number(v.score) << " tau=" << format_number(v.tau) << ' ' << (v.is_id ? "ID" : "OOD")
              << " best_task=" << v.best_task << "\n";
  }
  const std::filesystem::path out = output.empty() ? std::filesystem::path(run_dir) / "eval_ood.json" : std::filesystem::path(output);
  std::ofstream f(out);
  f << nlohmann::json{{"schema_version", 1}, {"checkpoint", stage_dir.string()}, {"verdicts", verdicts_to_json(verdicts)}}.dump(2) << "\n";
  if (!f) throw std::runtime_error("cannot write " + out.string());
  return kOk;
}

int cmd_show_generated(const std::string& run_dir, const std::vector<int>& tasks, const std::vector<double>& slices, std::uint64_t seed,
                       const std::string& stream, const std::string& method, int stage, const std::string& output) {
  const auto stage_dir = find_stage_dir(run_dir, stream, method, stage);
  const std::filesystem::path out = output.empty() ? std::filesystem::path(run_dir) / "generated" : std::filesystem::path(output);
  const auto masks = show_generated(stage_dir, tasks, slices, seed, out);
  for (const auto& m : masks) std::cout << m.file.string() << " foreground=" << format_number(m.foreground_fraction) << "\n";
  return kOk;
}

int cmd_export(const std::string& config_path, const std::string& out_dir) {
  const ExperimentConfig cfg = load_experiment_config(config_path);
  for (const auto& sc : cfg.streams) export_stream(build_stream(sc), std::filesystem::path(out_dir) / sc.name);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continual segmentation with generative feature replay"};
  app.require_subcommand(1);

  std::string config_path, output, run_dir, volumes, stream, method, out_dir;
  int stage = -1;
  std::uint64_t seed = 0;
  std::vector<int> tasks;
  std::vector<double> slices;

  auto* run = app.add_subcommand("run", "Train every configured method and write a run directory");
  run->add_option("config", config_path, "Experiment config (JSON)")->required();
  run->add_option("-o,--output", output, "Run directory (default: config output_dir)");

  auto* eval = app.add_subcommand("eval-ood", "Score volumes with a trained run's OoD detector");
  eval->add_option("run_dir", run_dir)->required();
  eval->add_option("volumes", volumes, "Directory of raw volumes (*.json sidecars)")->required();
  eval->add_option("--stream", stream);
  eval->add_option("--method", method);
  eval->add_option("--stage", stage, "Stage index (default: last)");
  eval->add_option("-o,--output", output, "Verdict file (default: <run_dir>/eval_ood.json)");

  auto* show = app.add_subcommand("show-generated", "Write decoder masks of generated features as PGM images");
  show->add_option("run_dir", run_dir)->required();
  show->add_option("--task", tasks, "Task indices")->required()->delimiter(',');
  show->add_option("--slices", slices, "Slice positions in [0, 1]")->required()->delimiter(',');
  show->add_option("--seed", seed);
  show->add_option("--stream", stream);
  show->add_option("--method", method);
  show->add_option("--stage", stage);
  show->add_option("-o,--output", output, "Output directory (default: <run_dir>/generated)");

  auto* exp = app.add_subcommand("export-volumes", "Write a config's synthetic streams in the raw volume format");
  exp->add_option("config", config_path)->required();
  exp->add_option("out_dir", out_dir)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsageError;
  }

  try {
    if (*run) return cmd_run(config_path, output);
    if (*eval) return cmd_eval_ood(run_dir, volumes, stream, method, stage, output);
    if (*show) return cmd_show_generated(run_dir, tasks, slices, seed, stream, method, stage, output);
    if (*exp) return cmd_export(config_path, out_dir);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsageError;
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return kUsageError;
}
