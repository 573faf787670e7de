#include "featreplay/errors.hpp"
#include "featreplay/experiment.hpp"
#include "featreplay/nn/checkpoint.hpp"

#include "fixtures.hpp"
#include "test_support.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

using namespace featreplay;

namespace {

nlohmann::json tiny_config_json() {
  return nlohmann::json::parse(R"({
    "name": "tiny",
    "methods": ["ccvae", "sequential"],
    "schedule": {"epochs_per_task": 4, "eval_every": 2, "vae_epochs": 6,
                 "vae": {"max_tasks": 2, "hidden": [32, 32, 32]}},
    "streams": [{"name": "tiny", "seed": 3, "subjects_per_task": 21,
                 "tasks": [{"preset": "decath"}, {"preset": "dryad"}],
                 "ood_task": {"preset": "harp"}, "ood_subjects": 5}]
  })");
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int cli(const std::string& args) {
  const std::string cmd = std::string("\"") + FEATREPLAY_CLI + "\" " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::filesystem::path write_json(const std::filesystem::path& p, const nlohmann::json& j) {
  std::ofstream(p) << j.dump(2);
  return p;
}

}  // namespace

TEST_CASE("experiment config parsing") {
  const ExperimentConfig cfg = parse_experiment_config(tiny_config_json());
  CHECK(cfg.name == "tiny");
  REQUIRE(cfg.streams.size() == 1);
  CHECK(cfg.streams[0].tasks.size() == 2);
  CHECK(cfg.streams[0].tasks[1].name == "dryad");
  CHECK(cfg.methods == std::vector<Method>{Method::Ccvae, Method::Sequential});
  CHECK(cfg.schedule.vae_epochs == 6);

  auto broken = tiny_config_json();
  broken["methods"] = nlohmann::json::array();
  CHECK_THROWS_AS(parse_experiment_config(broken), ConfigError);
  broken = tiny_config_json();
  broken["streams"][0].erase("seed");
  CHECK_THROWS_AS(parse_experiment_config(broken), ConfigError);
  broken = tiny_config_json();
  broken["streams"][0]["tasks"][0]["preset"] = "unknown";
  CHECK_THROWS_AS(parse_experiment_config(broken), ConfigError);
  broken = tiny_config_json();
  broken["schedule"]["epochs_per_task"] = 1;
  CHECK_THROWS_AS(parse_experiment_config(broken), ConfigError);
  CHECK_THROWS_AS(load_experiment_config("/nonexistent/config.json"), ConfigError);

  const DomainSpec d = domain_from_json({{"preset", "decath"}, {"noise_sigma", 0.07}, {"name", "x"}});
  CHECK(d.noise_sigma == 0.07);
  CHECK(d.name == "x");
  CHECK_THROWS_AS(domain_from_json({{"shape", {0, 1, 1}}}), ConfigError);
}

TEST_CASE("bundled configs parse") {
  for (const char* name : {"default.json", "prostate_ablation.json"}) {
    INFO(name);
    CHECK_NOTHROW(load_experiment_config(std::filesystem::path(FEATREPLAY_SOURCE_DIR) / "configs" / name));
  }
}

TEST_CASE("number formatting") {
  CHECK(format_number(1.0 / 3.0) == "0.333333");
  CHECK(format_number(-0.0) == "0.000000");
  CHECK(format_number(std::nan("")) == "nan");
}

TEST_CASE("output root") {
  ::setenv("FEATREPLAY_OUTPUT_ROOT", "/tmp/featreplay_root", 1);
  CHECK(resolve_output_dir("runs/x") == std::filesystem::path("/tmp/featreplay_root/runs/x"));
  CHECK(resolve_output_dir("/abs/x") == std::filesystem::path("/abs/x"));
  ::unsetenv("FEATREPLAY_OUTPUT_ROOT");
  CHECK(resolve_output_dir("runs/x") == std::filesystem::path("runs/x"));
}

TEST_CASE("stream construction and ingestion") {
  const ExperimentConfig cfg = parse_experiment_config(tiny_config_json());
  const TaskStream a = build_stream(cfg.streams[0]);
  CHECK(a.tasks.size() == 2);
  CHECK(a.tasks[0].train.size() == 12);
  CHECK(a.tasks[0].val.size() == 5);
  CHECK(a.tasks[0].test.size() == 4);
  REQUIRE(a.has_ood_task);
  CHECK(a.ood_task.test.size() == 5);

  const auto dir = testing::scratch_dir("export");
  export_stream(a, dir);
  StreamConfig sc;
  sc.name = "ingested";
  sc.seed = 3;
  for (const std::string task : {"decath", "dryad"}) {
    const auto pooled = dir / "pooled" / task;
    std::filesystem::create_directories(pooled);
    for (const std::string split : {"train", "val", "test"}) {
      for (const auto& e : std::filesystem::directory_iterator(dir / task / split)) {
        std::filesystem::copy_file(e.path(), pooled / e.path().filename());
      }
    }
    sc.task_dirs.push_back(pooled);
  }
  sc.ood_dir = dir / "harp" / "test";
  const TaskStream b = build_stream(sc);
  REQUIRE(b.tasks.size() == 2);
  CHECK(b.tasks[0].name == "decath");
  CHECK(b.tasks[0].train.size() == 12);
  CHECK(b.tasks[0].val.size() == 5);
  CHECK(b.tasks[0].test.size() == 4);
  CHECK(b.ood_task.test.size() == 5);
}

TEST_CASE("command line") {
  const auto dir = testing::scratch_dir("cli");
  const auto config = write_json(dir / "tiny.json", tiny_config_json());

  CHECK(cli("run " + (dir / "missing.json").string()) == 2);
  CHECK(cli("") == 2);
  CHECK(cli("frobnicate") == 2);
  std::ofstream(dir / "broken.json") << "{ not json";
  CHECK(cli("run " + (dir / "broken.json").string()) == 2);

  REQUIRE(cli("run " + config.string() + " -o " + (dir / "a").string()) == 0);
  REQUIRE(cli("run " + config.string() + " -o " + (dir / "b").string()) == 0);
  for (const char* f : {"report.json", "metrics.csv", "curves.csv", "config.json"}) CHECK(std::filesystem::exists(dir / "a" / f));
  CHECK(slurp(dir / "a" / "metrics.csv") == slurp(dir / "b" / "metrics.csv"));
  CHECK(slurp(dir / "a" / "metrics.csv").rfind("stream,method,stage,task,metric,value,std\n", 0) == 0);
  CHECK(nn::audit_artifacts(dir / "a").clean);

  const nlohmann::json report = nlohmann::json::parse(slurp(dir / "a" / "report.json"));
  CHECK(report.at("schema_version") == 1);
  CHECK(report.at("tables").contains("table1"));

  SUBCASE("eval-ood") {
    const auto empty = dir / "empty";
    std::filesystem::create_directories(empty);
    CHECK(cli("eval-ood " + (dir / "a").string() + " " + empty.string() + " -o " + (dir / "empty.json").string()) == 0);
    const auto verdicts = nlohmann::json::parse(slurp(dir / "empty.json")).at("verdicts");
    CHECK(verdicts.empty());

    CHECK(cli("export-volumes " + config.string() + " " + (dir / "vols").string()) == 0);
    const auto vols = dir / "vols" / "tiny" / "harp" / "test";
    CHECK(cli("eval-ood " + (dir / "a").string() + " " + vols.string() + " -o " + (dir / "ood.json").string()) == 0);
    CHECK(nlohmann::json::parse(slurp(dir / "ood.json")).at("verdicts").size() == 5);
    CHECK(cli("eval-ood " + (dir / "a").string() + " " + (dir / "nowhere").string()) == 2);
    CHECK(cli("eval-ood " + (dir / "a").string() + " " + vols.string() + " --method sequential -o " + (dir / "seq.json").string()) == 0);
  }
  SUBCASE("show-generated") {
    CHECK(cli("show-generated " + (dir / "a").string() + " --task 0,1 --slices 0,0.25,0.5,1 --seed 4 -o " + (dir / "g1").string()) == 0);
    CHECK(cli("show-generated " + (dir / "a").string() + " --task 0,1 --slices 0,0.25,0.5,1 --seed 4 -o " + (dir / "g2").string()) == 0);
    int files = 0;
    for (const auto& e : std::filesystem::directory_iterator(dir / "g1")) {
      ++files;
      CHECK(slurp(e.path()) == slurp(dir / "g2" / e.path().filename()));
    }
    CHECK(files == 8);
    CHECK(cli("show-generated " + (dir / "a").string() + " --task 5 --slices 0.5") == 2);
    CHECK(cli("show-generated " + (dir / "a").string() + " --task 0 --slices 1.5") == 2);
  }
}

TEST_CASE("OoD verdicts of the trained model") {
  testing::trained_ccvae();
  const auto run = testing::trained_run_dir();
  const auto stage = find_stage_dir(run, "", "", -1);
  CHECK(stage.filename() == "stage_1");
  const TaskStream& stream = testing::default_stream();
  const auto id_dir = testing::scratch_dir("id_vols");
  const auto spiked_dir = testing::scratch_dir("spiked_vols");
  int k = 0;
  for (const auto& task : stream.tasks) {
    for (const auto& v : task.val) {
      write_volume(v, id_dir, "v" + std::to_string(k));
      write_volume(apply_artifact(v, ArtifactKind::Spiking, ArtifactStrengths{}, 300 + k), spiked_dir, "v" + std::to_string(k));
      ++k;
    }
  }
  const auto id = eval_ood(stage, id_dir);
  const auto spiked = eval_ood(stage, spiked_dir);
  REQUIRE(id.size() == static_cast<std::size_t>(k));
  int id_ok = 0, spiked_ood = 0;
  for (const auto& v : id) id_ok += v.is_id;
  for (const auto& v : spiked) spiked_ood += !v.is_id;
  CHECK(id_ok >= 0.95 * k);
  CHECK(spiked_ood * 2 > k);

  const auto masks = show_generated(stage, {0, 1}, {0.0, 1.0 / 7, 2.0 / 7, 3.0 / 7, 4.0 / 7, 5.0 / 7, 6.0 / 7, 1.0}, 11,
                                    testing::scratch_dir("generated"));
  REQUIRE(masks.size() == 16);
  int nonempty = 0;
  for (const auto& m : masks) nonempty += m.foreground_fraction >= 0.01;
  CHECK(nonempty * 2 >= 16);
}
