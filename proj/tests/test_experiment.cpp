#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>

#include <doctest.h>

#include "distill_lab/checkpoint.hpp"
#include "distill_lab/experiment.hpp"
#include "support.hpp"

using namespace distill_lab;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json base_doc() {
  return json::parse(R"({
    "data": {"kind": "blobs", "per_class": 20, "test_per_class": 20, "noise": 0.5},
    "student": {"widths": [2, 4]},
    "distill": {"strategy": "ce_only"},
    "train": {"epochs": 4, "milestones": [3]},
    "output_dir": "out",
    "seeds": [0, 1, 2]
  })");
}

std::string error_of(const json& doc) {
  try {
    parse_experiment_config(doc);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("a valid document parses") {
  const auto cfg = parse_experiment_config(base_doc());
  REQUIRE(cfg.data.synth);
  CHECK(cfg.data.synth->kind == TaskKind::blobs);
  CHECK(cfg.student_widths == std::vector<std::size_t>{2, 4});
  CHECK(cfg.train.epochs == 4);
  CHECK(cfg.seeds == std::vector<std::uint64_t>{0, 1, 2});
  CHECK(cfg.distill->strategy == Strategy::ce_only);
  // Round trip through the echo form.
  const auto again = parse_experiment_config(json::parse(to_json(cfg).dump()));
  CHECK(to_json(again).dump() == to_json(cfg).dump());
}

TEST_CASE("schema errors name the field path") {
  auto with = [](const std::string& pointer, json value) {
    auto d = base_doc();
    d[json::json_pointer(pointer)] = std::move(value);
    return d;
  };
  CHECK(error_of(with("/train/lr", -1)).find("train.lr") != std::string::npos);
  CHECK(error_of(with("/train/epochs", "ten")).find("train.epochs") != std::string::npos);
  CHECK(error_of(with("/train/epochs", -3)).find("train.epochs: must be >= 0") != std::string::npos);
  CHECK(error_of(with("/train/extra", 1)).find("train.extra: unknown key") != std::string::npos);
  CHECK(error_of(with("/distill/strategy", "magic")).find("distill.strategy") != std::string::npos);
  CHECK(error_of(with("/distill/alpha", -0.5)).find("distill.alpha") != std::string::npos);
  CHECK(error_of(with("/data/kind", "rings")).find("data.kind") != std::string::npos);
  CHECK(error_of(with("/student/widths", json::array())).find("student.widths") != std::string::npos);
  CHECK(error_of(with("/seeds", json::array())).find("seeds") != std::string::npos);
  CHECK(error_of(with("/distill/strategy", "kd")).find("teacher.checkpoint") != std::string::npos);

  auto no_out = base_doc();
  no_out.erase("output_dir");
  CHECK(error_of(no_out).find("output_dir") != std::string::npos);
  auto teacher_for_ce = base_doc();
  teacher_for_ce["teacher"] = {{"checkpoint", "t.ckpt"}};
  CHECK(error_of(teacher_for_ce).find("teacher") != std::string::npos);
  CHECK(error_of(base_doc()).empty());
}

TEST_CASE("sweep points per axis") {
  const auto base = DistillConfig::defaults(Strategy::ijckd_reuse);
  const auto alpha = sweep_points("alpha_ce", base);
  REQUIRE(alpha.size() == 6);
  CHECK(alpha.front().label == "SR only");
  CHECK(alpha.front().config.alpha_ce == 0.0);
  CHECK(alpha.back().label == "CE only");
  CHECK(alpha.back().config.alpha == 0.0);
  CHECK(alpha.back().config.alpha_ce == 1.0);

  const auto comb = sweep_points("loss_comb", base);
  REQUIRE(comb.size() == 3);
  CHECK(comb[2].config.alpha == 1.0);
  CHECK(comb[2].config.beta == 1.0);
  CHECK(comb[0].config.beta == 0.0);

  const auto depth = sweep_points("connector_depth=1,3", base);
  REQUIRE(depth.size() == 2);
  CHECK(depth[1].config.connector_depth == 3);
  CHECK(sweep_axis_name("connector_depth=1,3") == "connector_depth");

  const auto losses = sweep_points("matching_loss", base);
  CHECK(losses.size() == 3);
  CHECK(losses[1].config.matching_loss == LossKind::neg_cosine);

  CHECK_THROWS_AS(sweep_points("width", base), ConfigError);
  CHECK_THROWS_AS(sweep_points("connector_depth=5", base), ConfigError);
  CHECK_THROWS_AS(sweep_points("alpha_ce=x", base), ConfigError);
  CHECK_THROWS_AS(sweep_points("loss_comb=ce+kd", base), ConfigError);
}

TEST_CASE("aggregate matches a manual recount") {
  std::vector<RunSummary> runs(4);
  const double test[] = {0.5, 0.75, 0.625, 0.9};
  const double train[] = {0.6, 0.8, 0.7, 1.0};
  for (int i = 0; i < 4; ++i) {
    runs[i].final_test_acc = test[i];
    runs[i].final_train_acc = train[i];
  }
  const auto a = aggregate(runs);
  const double m = (0.5 + 0.75 + 0.625 + 0.9) / 4;
  double ss = 0;
  for (double v : test) ss += (v - m) * (v - m);
  CHECK(a.runs == 4);
  CHECK(a.mean_test_acc == doctest::Approx(m).epsilon(1e-15));
  CHECK(a.std_test_acc == doctest::Approx(std::sqrt(ss / 3)).epsilon(1e-15));
  CHECK(a.mean_train_acc == doctest::Approx(0.775).epsilon(1e-15));
  CHECK(aggregate({runs[0]}).std_test_acc == 0.0);
  CHECK(aggregate({}).runs == 0);
}

TEST_CASE("parallel_for runs every task and rethrows") {
  std::vector<int> hit(50, 0);
  parallel_for(hit.size(), 4, [&](std::size_t i) { hit[i] += 1; });
  CHECK(std::all_of(hit.begin(), hit.end(), [](int h) { return h == 1; }));
  CHECK_THROWS_AS(parallel_for(10, 3,
                               [](std::size_t i) {
                                 if (i == 5) throw IoError("boom");
                               }),
                  IoError);
}

TEST_CASE("worker count honours the environment") {
  ::setenv("DISTILL_LAB_WORKERS", "3", 1);
  CHECK(worker_count() == 3);
  ::setenv("DISTILL_LAB_WORKERS", "zero", 1);
  CHECK_THROWS_AS(worker_count(), ConfigError);
  ::unsetenv("DISTILL_LAB_WORKERS");
  CHECK(worker_count() >= 1);
}

TEST_CASE("distill runs write reproducible artefacts") {
  TempDir tmp("distill_lab_test_experiment");
  auto doc = base_doc();
  doc["teacher"] = {{"widths", {2, 6}}};
  doc.erase("distill");
  doc["output_dir"] = (tmp.path / "teacher").string();
  doc["seeds"] = {0};
  const auto tcfg = parse_experiment_config(doc);
  run_train_teacher(tcfg, 1);
  const auto teacher_ckpt = tmp.path / "teacher" / "seed_0" / "teacher.ckpt";
  REQUIRE(fs::exists(teacher_ckpt));

  auto sdoc = base_doc();
  sdoc["teacher"] = {{"checkpoint", teacher_ckpt.string()}};
  sdoc["distill"] = {{"strategy", "ijckd_reuse"}};
  sdoc["output_dir"] = (tmp.path / "a").string();
  const auto runs = run_distill(parse_experiment_config(sdoc), 2);
  REQUIRE(runs.size() == 3);
  sdoc["output_dir"] = (tmp.path / "b").string();
  run_distill(parse_experiment_config(sdoc), 1);

  for (const char* name : {"student.ckpt", "metrics.csv"}) {
    for (int s = 0; s < 3; ++s) {
      const auto sub = fs::path("seed_" + std::to_string(s)) / name;
      CHECK(test_support::read_file_bytes(tmp.path / "a" / sub) == test_support::read_file_bytes(tmp.path / "b" / sub));
    }
  }
  const auto agg = json::parse(read_text(tmp.path / "a" / "aggregate.json"));
  double mean = 0;
  for (const auto& r : runs) mean += r.final_test_acc;
  CHECK(agg["aggregate"]["mean_test_acc"].get<double>() == doctest::Approx(mean / 3).epsilon(1e-15));

  const auto student = load_network(tmp.path / "a" / "seed_1" / "student.ckpt");
  CHECK(student.adapter);
  CHECK(student.g.frozen());

  const auto merged = write_report(tmp.path / "a", tmp.path / "report.csv");
  CHECK(merged == 3);
  CHECK(read_text(tmp.path / "report.csv").find("train_acc") != std::string::npos);
  CHECK_THROWS_AS(write_report(tmp.path / "teacher" / "missing", tmp.path / "r.csv"), ConfigError);
}
