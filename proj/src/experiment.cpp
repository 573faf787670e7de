#include "featreplay/experiment.hpp"

#include "featreplay/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

namespace featreplay {

// --- domains ---------------------------------------------------------------------------------

namespace {

DomainSpec hippocampus_base(const std::string& name) {
  DomainSpec d;
  d.name = name;
  d.noise_sigma = 0.02;
  return d;
}

DomainSpec prostate_base(const std::string& name) {
  DomainSpec d;
  d.name = name;
  d.organ_offset = {0.0, 0.1, 0.0};
  d.organ_axes_min = {0.5, 0.32, 0.32};
  d.organ_axes_max = {0.75, 0.48, 0.48};
  d.deformation = 0.2;
  d.body_axes = {1.3, 0.9, 0.92};
  return d;
}

template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

}  // namespace

DomainSpec domain_preset(const std::string& name) {
  DomainSpec d;
  if (name == "decath") {
    d = hippocampus_base(name);
  } else if (name == "dryad") {
    // Same anatomy, intensities shifted above the whole decath range.
    d = hippocampus_base(name);
    d.gamma = 1.2;
    d.contrast = 1.1;
    d.brightness = 1.2;
  } else if (name == "harp") {
    d = hippocampus_base(name);
    d.gamma = 0.6;
    d.contrast = 0.5;
    d.brightness = 0.25;
    d.noise_sigma = 0.1;
    d.organ_offset = {0.0, 0.1, 0.1};
    d.organ_axes_min = {0.45, 0.4, 0.35};
    d.organ_axes_max = {0.7, 0.55, 0.5};
    d.distractor = false;
  } else if (name == "bidmc") {
    d = prostate_base(name);
    d.coil = true;
    d.contrast = 0.9;
    d.brightness = 0.05;
    d.noise_sigma = 0.05;
  } else if (name == "i2cvb") {
    d = prostate_base(name);
    d.gamma = 0.8;
    d.contrast = 1.1;
    d.noise_sigma = 0.03;
  } else if (name == "hk") {
    d = prostate_base(name);
    d.coil = true;
    d.gamma = 1.3;
    d.contrast = 0.8;
    d.brightness = 0.1;
    d.noise_sigma = 0.06;
  } else if (name == "ucl") {
    d = prostate_base(name);
  } else if (name == "runmc") {
    d = prostate_base(name);
    d.gamma = 0.7;
    d.contrast = 0.6;
    d.brightness = 0.3;
    d.noise_sigma = 0.08;
  } else {
    throw ConfigError("unknown domain preset '" + name + "'");
  }
  return d;
}

DomainSpec domain_from_json(const nlohmann::json& j) {
  try {
    DomainSpec d = j.contains("preset") ? domain_preset(j.at("preset").get<std::string>()) : DomainSpec{};
    read_field(j, "name", d.name);
    read_field(j, "shape", d.shape);
    read_field(j, "spacing", d.spacing);
    read_field(j, "organ_offset", d.organ_offset);
    read_field(j, "center_jitter", d.center_jitter);
    read_field(j, "organ_axes_min", d.organ_axes_min);
    read_field(j, "organ_axes_max", d.organ_axes_max);
    read_field(j, "deformation", d.deformation);
    read_field(j, "body_axes", d.body_axes);
    read_field(j, "distractor", d.distractor);
    read_field(j, "texture", d.texture);
    read_field(j, "gamma", d.gamma);
    read_field(j, "contrast", d.contrast);
    read_field(j, "brightness", d.brightness);
    read_field(j, "noise_sigma", d.noise_sigma);
    read_field(j, "coil", d.coil);
    read_field(j, "coil_delta", d.coil_delta);
    d.validate();
    return d;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("domain: ") + e.what());
  }
}

TaskStream build_stream(const StreamConfig& cfg) {
  TaskStream stream;
  stream.name = cfg.name;
  if (!cfg.task_dirs.empty()) {
    for (std::size_t i = 0; i < cfg.task_dirs.size(); ++i) {
      TaskDataset ds;
      ds.name = cfg.task_dirs[i].filename().string();
      ds.subjects = read_volume_dir(cfg.task_dirs[i]);
      stream.tasks.push_back(split_dataset(std::move(ds), derive_seed(cfg.seed, 1000 + i)));
    }
    if (cfg.ood_dir) {
      stream.has_ood_task = true;
      stream.ood_task.name = cfg.ood_dir->filename().string();
      stream.ood_task.test = read_volume_dir(*cfg.ood_dir);
    }
    return stream;
  }
  for (std::size_t i = 0; i < cfg.tasks.size(); ++i) {
    TaskDataset ds = generate_domain_dataset(cfg.tasks[i], cfg.subjects_per_task, derive_seed(cfg.seed, i));
    ds.name = cfg.tasks[i].name;
    stream.tasks.push_back(split_dataset(std::move(ds), derive_seed(cfg.seed, 1000 + i)));
  }
  if (cfg.ood) {
    TaskDataset ds = generate_domain_dataset(*cfg.ood, cfg.ood_subjects, derive_seed(cfg.seed, 999));
    stream.has_ood_task = true;
    stream.ood_task.name = cfg.ood->name;
    stream.ood_task.test = std::move(ds.subjects);
  }
  return stream;
}

// --- configuration -----------------------------------------------------------------------------

ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
  ExperimentConfig cfg;
  try {
    if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
    cfg.name = j.value("name", cfg.name);
    cfg.output_dir = j.value("output_dir", cfg.output_dir.string());
    if (!j.contains("methods") || !j.at("methods").is_array() || j.at("methods").empty()) {
      throw ConfigError("experiment config: 'methods' must list at least one method");
    }
    for (const auto& m : j.at("methods")) cfg.methods.push_back(method_from_string(m.get<std::string>()));
    cfg.schedule = TrajectoryConfig::from_json(j.value("schedule", nlohmann::json::object()));
    if (!j.contains("streams") || !j.at("streams").is_array() || j.at("streams").empty()) {
      throw ConfigError("experiment config: 'streams' must list at least one stream");
    }
    for (const auto& s : j.at("streams")) {
      StreamConfig sc;
      sc.name = s.at("name").get<std::string>();
      if (!s.contains("seed")) throw ConfigError("stream '" + sc.name + "': explicit seed required");
      sc.seed = s.at("seed").get<std::uint64_t>();
      sc.subjects_per_task = s.value("subjects_per_task", sc.subjects_per_task);
      sc.ood_subjects = s.value("ood_subjects", sc.ood_subjects);
      if (s.contains("task_dirs")) {
        for (const auto& d : s.at("task_dirs")) sc.task_dirs.emplace_back(d.get<std::string>());
        if (s.contains("ood_dir")) sc.ood_dir = s.at("ood_dir").get<std::string>();
      } else {
        if (!s.contains("tasks") || !s.at("tasks").is_array() || s.at("tasks").empty()) {
          throw ConfigError("stream '" + sc.name + "': 'tasks' must list the task order");
        }
        for (const auto& t : s.at("tasks")) sc.tasks.push_back(domain_from_json(t));
        if (s.contains("ood_task")) sc.ood = domain_from_json(s.at("ood_task"));
      }
      if (sc.tasks.empty() && sc.task_dirs.empty()) throw ConfigError("stream '" + sc.name + "' has no tasks");
      cfg.streams.push_back(std::move(sc));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("experiment config: ") + e.what());
  }
  cfg.source = j;
  return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed config " + path.string() + ": " + e.what());
  }
  return parse_experiment_config(j);
}

std::filesystem::path resolve_output_dir(const std::filesystem::path& dir) {
  if (dir.is_absolute()) return dir;
  if (const char* root = std::getenv("FEATREPLAY_OUTPUT_ROOT"); root && *root) return std::filesystem::path(root) / dir;
  return dir;
}

// --- reporting ---------------------------------------------------------------------------------

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v == 0.0 ? 0.0 : v);
  return buf;
}

namespace {

nlohmann::json number(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

nlohmann::json mean_std_json(const MeanStd& ms) { return {{"mean", number(ms.mean)}, {"std", number(ms.std)}}; }

// Mean/std over the final stage's original test volumes of every stream task.
MeanStd final_dice(const Trajectory& t) {
  std::vector<double> d;
  for (const auto& v : t.stages.back().volumes) {
    if (v.kind == "original") d.push_back(v.dice);
  }
  return mean_std(d);
}

const Trajectory* sequential_reference(const std::vector<MethodRun>& runs, const std::string& stream) {
  for (const auto& r : runs) {
    if (r.stream == stream && r.trajectory.method == Method::Sequential) return &r.trajectory;
  }
  return nullptr;
}

double safe_bwt(const Trajectory& t) { return t.dice.size() >= 2 ? bwt(t.dice) : std::numeric_limits<double>::quiet_NaN(); }

double safe_fwt(const Trajectory& t, const Trajectory* ref) {
  if (!ref || t.dice.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  return fwt(t.dice, ref->dice);
}

nlohmann::json verdict_json(const OodVerdict& v) {
  nlohmann::json per_task = nlohmann::json::object();
  for (const auto& [t, s] : v.per_task_scores) per_task[std::to_string(t)] = number(s);
  return {{"subject_id", v.subject_id}, {"score", number(v.score)}, {"tau", number(v.tau)}, {"is_id", v.is_id},
          {"best_task", v.best_task},   {"per_task_scores", per_task}};
}

std::string scorer_label(Method m, Scorer s) {
  std::string out = to_string(m);
  if (s == Scorer::Mahalanobis) out += "_mahalanobis";
  return out;
}

}  // namespace

nlohmann::json verdicts_to_json(const std::vector<OodVerdict>& verdicts) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& v : verdicts) out.push_back(verdict_json(v));
  return out;
}

nlohmann::json build_report(const ExperimentConfig& cfg, const std::vector<MethodRun>& runs) {
  nlohmann::json report;
  report["schema_version"] = 1;
  report["experiment"] = cfg.name;
  nlohmann::json table1 = nlohmann::json::array(), table2 = nlohmann::json::array(), table3 = nlohmann::json::array();
  nlohmann::json streams = nlohmann::json::array();
  std::map<std::string, std::size_t> stream_index;

  for (const MethodRun& run : runs) {
    const Trajectory& t = run.trajectory;
    if (!stream_index.contains(run.stream)) {
      stream_index[run.stream] = streams.size();
      streams.push_back({{"name", run.stream}, {"tasks", t.task_names}, {"methods", nlohmann::json::array()}});
    }
    const Trajectory* ref = sequential_reference(runs, run.stream);
    nlohmann::json m;
    m["method"] = to_string(t.method);
    m["result_matrix"] = {{"dice", t.dice}, {"std", t.dice_std}};
    m["bwt"] = number(safe_bwt(t));
    m["fwt"] = number(safe_fwt(t, ref));
    m["final_dice"] = mean_std_json(final_dice(t));
    if (!t.conditioning.empty()) m["conditioning_recon_error"] = t.conditioning;
    nlohmann::json stages = nlohmann::json::array();
    for (const StageResult& s : t.stages) {
      nlohmann::json sj;
      sj["stage"] = s.stage;
      sj["task"] = s.task_name;
      nlohmann::json td = nlohmann::json::array();
      for (const auto& ms : s.task_dice) td.push_back(mean_std_json(ms));
      sj["task_dice"] = td;
      sj["dice_all"] = mean_std_json(s.dice_all);
      sj["ece_all"] = number(s.ece_all);
      nlohmann::json volumes = nlohmann::json::array();
      for (const auto& v : s.volumes) {
        volumes.push_back({{"subject_id", v.subject_id}, {"task", v.task}, {"kind", v.kind}, {"dice", number(v.dice)}});
      }
      sj["volumes"] = volumes;
      nlohmann::json scorers = nlohmann::json::array();
      for (const ScorerEval& se : s.scorers) {
        scorers.push_back({{"scorer", to_string(se.scorer)},
                           {"tau", number(se.tau)},
                           {"val_id_fraction", number(se.val_id_fraction)},
                           {"n_id", se.n_id},
                           {"dice_id", mean_std_json(se.dice_id)},
                           {"ece_id", number(se.ece_id)},
                           {"artifact_pair_rate", number(se.artifact_pair_rate)},
                           {"ood_auroc", number(se.ood_auroc)},
                           {"verdicts", verdicts_to_json(se.verdicts)}});
        if (uses_vae(t.method)) {
          table3.push_back({{"stream", run.stream},
                            {"row", scorer_label(t.method, se.scorer)},
                            {"stage", s.stage},
                            {"task", s.task_name},
                            {"dice", mean_std_json(se.dice_id)},
                            {"ece_x100", number(100.0 * se.ece_id)}});
        }
      }
      sj["scorers"] = scorers;
      stages.push_back(sj);
      const ScorerEval& primary = s.scorers.front();
      table2.push_back({{"stream", run.stream},
                        {"method", to_string(t.method)},
                        {"stage", s.stage},
                        {"task", s.task_name},
                        {"dice_id", mean_std_json(primary.dice_id)},
                        {"ece_x100", number(100.0 * primary.ece_id)},
                        {"dice_all", mean_std_json(s.dice_all)}});
    }
    m["stages"] = stages;
    streams[stream_index[run.stream]]["methods"].push_back(m);
    table1.push_back({{"stream", run.stream},
                      {"method", to_string(t.method)},
                      {"dice", mean_std_json(final_dice(t))},
                      {"bwt", number(safe_bwt(t))},
                      {"fwt", number(safe_fwt(t, ref))}});
  }
  report["streams"] = streams;
  report["tables"] = {{"table1", table1}, {"table2", table2}, {"table3", table3}};
  return report;
}

std::string metrics_csv(const std::vector<MethodRun>& runs) {
  std::ostringstream out;
  out << "stream,method,stage,task,metric,value,std\n";
  auto row = [&](const std::string& stream, Method m, const std::string& stage, const std::string& task, const std::string& metric,
                 double value, double std) {
    out << stream << ',' << to_string(m) << ',' << stage << ',' << task << ',' << metric << ',' << format_number(value) << ','
        << format_number(std) << '\n';
  };
  for (const MethodRun& run : runs) {
    const Trajectory& t = run.trajectory;
    for (const StageResult& s : t.stages) {
      const std::string stage = std::to_string(s.stage);
      for (std::size_t j = 0; j < s.task_dice.size(); ++j) row(run.stream, t.method, stage, t.task_names[j], "dice", s.task_dice[j].mean, s.task_dice[j].std);
      row(run.stream, t.method, stage, "all", "dice_all", s.dice_all.mean, s.dice_all.std);
      row(run.stream, t.method, stage, "all", "ece_all", s.ece_all, 0.0);
      for (const ScorerEval& se : s.scorers) {
        const std::string p = to_string(se.scorer) + ".";
        row(run.stream, t.method, stage, "all", p + "dice_id", se.dice_id.mean, se.dice_id.std);
        row(run.stream, t.method, stage, "all", p + "ece_id", se.ece_id, 0.0);
        row(run.stream, t.method, stage, "all", p + "n_id", se.n_id, 0.0);
        row(run.stream, t.method, stage, "all", p + "tau", se.tau, 0.0);
        row(run.stream, t.method, stage, "all", p + "val_id_fraction", se.val_id_fraction, 0.0);
        row(run.stream, t.method, stage, "all", p + "artifact_pair_rate", se.artifact_pair_rate, 0.0);
        row(run.stream, t.method, stage, "all", p + "ood_auroc", se.ood_auroc, 0.0);
      }
    }
    const MeanStd fd = final_dice(t);
    row(run.stream, t.method, "final", "all", "dice", fd.mean, fd.std);
    row(run.stream, t.method, "final", "all", "bwt", safe_bwt(t), 0.0);
    row(run.stream, t.method, "final", "all", "fwt", safe_fwt(t, sequential_reference(runs, run.stream)), 0.0);
  }
  return out.str();
}

std::string curves_csv(const std::vector<MethodRun>& runs) {
  std::ostringstream out;
  out << "stream,method,stage,epoch,train_loss,task,dice\n";
  for (const MethodRun& run : runs) {
    const Trajectory& t = run.trajectory;
    for (const CurvePoint& p : t.curve) {
      for (std::size_t j = 0; j < p.task_dice.size(); ++j) {
        out << run.stream << ',' << to_string(t.method) << ',' << p.stage << ',' << p.epoch << ',' << format_number(p.train_loss) << ','
            << t.task_names[j] << ',' << format_number(p.task_dice[j]) << '\n';
      }
    }
  }
  return out.str();
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

}  // namespace

std::vector<MethodRun> run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& run_dir, std::ostream* log) {
  std::filesystem::create_directories(run_dir);
  write_text(run_dir / "config.json", cfg.source.dump(2) + "\n");
  std::vector<MethodRun> runs;
  for (const StreamConfig& sc : cfg.streams) {
    const TaskStream stream = build_stream(sc);
    for (Method m : cfg.methods) {
      TrajectoryConfig tc = cfg.schedule;
      tc.method = m;
      if (log) *log << "[" << sc.name << "] " << to_string(m) << ": " << stream.tasks.size() << " tasks" << std::endl;
      Trajectory t = run_sequence(stream, tc, run_dir / sc.name / to_string(m));
      if (log) {
        for (std::size_t i = 0; i < t.dice.size(); ++i) {
          *log << "  stage " << i << " dice";
          for (double d : t.dice[i]) *log << ' ' << format_number(d);
          *log << std::endl;
        }
      }
      // Models stay on disk; the in-memory copies are not needed for reporting.
      t.unet.reset();
      t.vae.reset();
      runs.push_back({sc.name, std::move(t)});
    }
  }
  write_text(run_dir / "report.json", build_report(cfg, runs).dump(2) + "\n");
  write_text(run_dir / "metrics.csv", metrics_csv(runs));
  write_text(run_dir / "curves.csv", curves_csv(runs));
  return runs;
}

// --- post-hoc commands -----------------------------------------------------------------------

namespace {

std::vector<std::string> sorted_subdirs(const std::filesystem::path& dir) {
  std::vector<std::string> out;
  if (!std::filesystem::is_directory(dir)) return out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_directory()) out.push_back(e.path().filename().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("missing " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw InputError("malformed " + path.string() + ": " + e.what());
  }
}

}  // namespace

std::filesystem::path find_stage_dir(const std::filesystem::path& run_dir, const std::string& stream, const std::string& method, int stage) {
  std::string s = stream;
  if (s.empty()) {
    for (const auto& name : sorted_subdirs(run_dir)) {
      if (!sorted_subdirs(run_dir / name).empty()) {
        s = name;
        break;
      }
    }
    if (s.empty()) throw InputError("no stream directories under " + run_dir.string());
  }
  const auto methods = sorted_subdirs(run_dir / s);
  if (methods.empty()) throw InputError("no runs for stream '" + s + "' under " + run_dir.string());
  std::string m = method;
  if (m.empty()) {
    m = methods.front();
    for (const char* preferred : {"cvae_task_only", "ccvae"}) {
      if (std::find(methods.begin(), methods.end(), preferred) != methods.end()) m = preferred;
    }
  }
  const auto method_dir = run_dir / s / m;
  int best = -1;
  for (const auto& name : sorted_subdirs(method_dir)) {
    if (name.rfind("stage_", 0) != 0) continue;
    const int k = std::atoi(name.c_str() + 6);
    if (stage < 0 ? k > best : k == stage) best = k;
  }
  if (best < 0) throw InputError("no stage checkpoint under " + method_dir.string());
  const auto dir = method_dir / ("stage_" + std::to_string(best));
  if (!std::filesystem::exists(dir / "unet" / "manifest.json")) throw InputError("missing UNet checkpoint in " + dir.string());
  return dir;
}

std::vector<OodVerdict> eval_ood(const std::filesystem::path& stage_dir, const std::filesystem::path& volumes_dir) {
  const nlohmann::json meta = read_json(stage_dir / "ood.json");
  const std::string scorer = meta.at("scorer").get<std::string>();
  const double tau = meta.at("tau").get<double>();
  const int tasks_seen = meta.at("tasks_seen").get<int>();
  const UNet2D unet = UNet2D::load(stage_dir / "unet");
  std::optional<Ccvae> vae;
  if (scorer == "reconstruction") {
    if (!std::filesystem::exists(stage_dir / "vae" / "manifest.json")) throw InputError("missing VAE checkpoint in " + stage_dir.string());
    vae.emplace(Ccvae::load(stage_dir / "vae"));
  }
  if (!std::filesystem::is_directory(volumes_dir)) throw InputError("not a directory: " + volumes_dir.string());
  std::vector<int> seen;
  for (int t = 0; t < tasks_seen; ++t) seen.push_back(t);
  std::vector<OodVerdict> out;
  for (const Volume& v : read_volume_dir(volumes_dir)) {
    TaskScores ts;
    if (vae) {
      ts = reconstruction_score(*vae, unet, v, seen);
    } else {
      ts.score = max_softmax_score(unet, v);
      ts.best_task = -1;
    }
    out.push_back(make_verdict(v.subject_id, ts, tau));
  }
  return out;
}

void write_pgm(const std::filesystem::path& path, const std::vector<std::uint8_t>& labels, int height, int width, int classes) {
  if (labels.size() != static_cast<std::size_t>(height) * width) throw InputError("write_pgm: size mismatch");
  std::ofstream out(path, std::ios::binary);
  out << "P5\n" << width << ' ' << height << "\n255\n";
  const int scale = 255 / std::max(1, classes - 1);
  for (std::uint8_t l : labels) out.put(static_cast<char>(std::min(255, l * scale)));
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

std::vector<GeneratedMask> show_generated(const std::filesystem::path& stage_dir, const std::vector<int>& tasks,
                                          const std::vector<double>& slices, std::uint64_t seed, const std::filesystem::path& out_dir) {
  if (!std::filesystem::exists(stage_dir / "vae" / "manifest.json")) throw InputError("no VAE checkpoint in " + stage_dir.string());
  const Ccvae vae = Ccvae::load(stage_dir / "vae");
  const UNet2D unet = UNet2D::load(stage_dir / "unet");
  for (int t : tasks) {
    if (!vae.seen_tasks().contains(t)) throw InputError("task " + std::to_string(t) + " has not been learned by this model");
  }
  for (double s : slices) {
    if (!(s >= 0.0 && s <= 1.0)) throw InputError("slice positions must lie in [0, 1]");
  }
  std::filesystem::create_directories(out_dir);
  const UNetConfig& cfg = unet.config();
  std::vector<GeneratedMask> out;
  std::uint64_t k = 0;
  for (int t : tasks) {
    for (double s : slices) {
      const Vec u = sample_pseudo_feature(vae, t, s, derive_seed(seed, k++));
      const Mat probs = pseudo_label(unet, u);
      std::vector<std::uint8_t> labels(static_cast<std::size_t>(probs.cols()));
      std::size_t fg = 0;
      for (Eigen::Index c = 0; c < probs.cols(); ++c) {
        Eigen::Index best = 0;
        probs.col(c).maxCoeff(&best);
        labels[static_cast<std::size_t>(c)] = static_cast<std::uint8_t>(best);
        fg += best != 0;
      }
      char name[64];
      std::snprintf(name, sizeof name, "generated_t%d_s%.3f.pgm", t, s);
      const auto path = out_dir / name;
      write_pgm(path, labels, cfg.height, cfg.width, cfg.classes);
      out.push_back({t, s, path, static_cast<double>(fg) / static_cast<double>(labels.size())});
    }
  }
  return out;
}

void export_stream(const TaskStream& stream, const std::filesystem::path& dir) {
  auto dump = [&](const std::vector<Volume>& volumes, const std::filesystem::path& sub) {
    std::filesystem::create_directories(sub);
    for (const Volume& v : volumes) write_volume(v, sub, v.subject_id);
  };
  for (const TaskDataset& t : stream.tasks) {
    dump(t.train, dir / t.name / "train");
    dump(t.val, dir / t.name / "val");
    dump(t.test, dir / t.name / "test");
  }
  if (stream.has_ood_task) dump(stream.ood_task.test, dir / stream.ood_task.name / "test");
}

}  // namespace featreplay
