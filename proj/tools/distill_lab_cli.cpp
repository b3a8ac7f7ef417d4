#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "distill_lab/bound_probe.hpp"
#include "distill_lab/checkpoint.hpp"
#include "distill_lab/data.hpp"
#include "distill_lab/errors.hpp"
#include "distill_lab/experiment.hpp"

namespace dl = distill_lab;

namespace {

constexpr int kExitIo = 1;
constexpr int kExitUsage = 2;
constexpr int kExitDivergence = 3;

int gen_data(const std::string& kind, std::size_t classes, std::size_t n, std::size_t test_n, double noise,
             double turns, std::uint64_t seed, bool raw, const std::string& out) {
  dl::TaskSpec spec;
  if (kind == "blobs") spec.kind = dl::TaskKind::blobs;
  spec.classes = classes;
  spec.per_class = n;
  spec.test_per_class = test_n ? test_n : n;
  spec.noise = noise;
  spec.turns = turns;
  spec.seed = seed;
  spec.standardize = !raw;
  const auto pair = dl::make_task(spec);
  const std::filesystem::path dir(out);
  dl::write_text(dir / "train.csv", dl::format_dataset(pair.train));
  dl::write_text(dir / "test.csv", dl::format_dataset(pair.test));
  std::cout << "train: N=" << pair.train.size() << " C=" << pair.train.class_count << " d=" << pair.train.dim << "\n"
            << "test:  N=" << pair.test.size() << " C=" << pair.test.class_count << " d=" << pair.test.dim << "\n";
  return 0;
}

void print_runs(const std::vector<dl::RunSummary>& runs) {
  for (const auto& r : runs) {
    std::cout << r.label << " seed=" << r.seed << " train_acc=" << dl::format_double(r.final_train_acc)
              << " test_acc=" << dl::format_double(r.final_test_acc) << "\n";
  }
  if (runs.size() > 1) {
    const auto a = dl::aggregate(runs);
    std::cout << "mean test_acc=" << dl::format_double(a.mean_test_acc)
              << " std=" << dl::format_double(a.std_test_acc) << " over " << a.runs << " runs\n";
  }
}

int probe(const std::string& teacher_path, const std::string& student_path, const std::string& data_path,
          const std::string& norm, const std::string& connector_path, const std::string& out) {
  const auto kind = dl::parse_norm_kind(norm);
  const auto teacher = dl::load_network(teacher_path);
  const auto student = dl::load_network(student_path);
  const auto data = dl::load_dataset(data_path, teacher.classes());
  std::optional<dl::Connector> connector;
  if (!connector_path.empty()) {
    auto ckpt = dl::load_checkpoint(connector_path);
    if (!ckpt.connector) throw dl::ConfigError("--connector: " + connector_path + " holds no connector");
    connector = std::move(ckpt.connector);
  }
  const auto report = dl::verify_bound(teacher, student, data, kind, connector ? &*connector : nullptr);
  const auto text = dl::bound_report_json(report);
  std::cout << text;
  const std::filesystem::path dest =
      out.empty() ? std::filesystem::path(student_path).parent_path() / ("bound_report_" + norm + ".json") : std::filesystem::path(out);
  dl::write_text(dest, text);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"distill-lab: knowledge distillation experiments on small MLPs"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "Write train.csv and test.csv for a synthetic task");
  std::string kind = "spirals", out;
  std::size_t classes = 3, n = 500, test_n = 0;
  double noise = 0.35, turns = 1.75;
  std::uint64_t seed = 0;
  bool raw = false;
  gen->add_option("--kind", kind, "blobs or spirals")->check(CLI::IsMember({"blobs", "spirals"}));
  gen->add_option("--classes", classes, "Number of classes")->check(CLI::Range(2, 1000));
  gen->add_option("--n", n, "Samples per class in the train split")->check(CLI::PositiveNumber);
  gen->add_option("--test-n", test_n, "Samples per class in the test split (default: --n)");
  gen->add_option("--noise", noise, "Angular jitter (spirals) or spread (blobs)")->check(CLI::NonNegativeNumber);
  gen->add_option("--turns", turns, "Spiral turns")->check(CLI::PositiveNumber);
  gen->add_option("--seed", seed, "Random seed");
  gen->add_flag("--raw", raw, "Skip standardisation");
  gen->add_option("--out", out, "Output directory")->required();

  std::string config;
  auto* teacher_cmd = app.add_subcommand("train-teacher", "Train teacher networks");
  teacher_cmd->add_option("--config", config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  auto* distill_cmd = app.add_subcommand("distill", "Run one distillation strategy per seed");
  distill_cmd->add_option("--config", config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);

  auto* probe_cmd = app.add_subcommand("probe", "Check the student-error bound on a dataset");
  std::string teacher_path, student_path, data_path, norm = "l1_prob", connector_path, probe_out;
  probe_cmd->add_option("--teacher", teacher_path, "Teacher checkpoint")->required();
  probe_cmd->add_option("--student", student_path, "Student checkpoint")->required();
  probe_cmd->add_option("--data", data_path, "Dataset CSV")->required();
  probe_cmd->add_option("--norm", norm, "l1_prob, l2_prob or l1_logit")
      ->check(CLI::IsMember({"l1_prob", "l2_prob", "l1_logit"}));
  probe_cmd->add_option("--connector", connector_path, "Checkpoint holding a connector");
  probe_cmd->add_option("--out", probe_out, "Report path (default: next to the student)");

  auto* sweep_cmd = app.add_subcommand("sweep", "Run one ablation axis");
  std::string axis;
  sweep_cmd->add_option("--config", config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  sweep_cmd->add_option("--axis", axis, "alpha_ce[=v,...] | loss_comb | matching_loss | connector_depth[=v,...]")
      ->required();

  auto* report_cmd = app.add_subcommand("report", "Merge per-epoch metrics of many runs");
  std::string runs_dir, report_out;
  report_cmd->add_option("--runs", runs_dir, "Directory of run outputs")->required();
  report_cmd->add_option("--out", report_out, "Merged CSV path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*gen) return gen_data(kind, classes, n, test_n, noise, turns, seed, raw, out);
    if (*teacher_cmd) {
      print_runs(dl::run_train_teacher(dl::load_experiment_config(config), dl::worker_count()));
      return 0;
    }
    if (*distill_cmd) {
      print_runs(dl::run_distill(dl::load_experiment_config(config), dl::worker_count()));
      return 0;
    }
    if (*probe_cmd) return probe(teacher_path, student_path, data_path, norm, connector_path, probe_out);
    if (*sweep_cmd) {
      const auto cfg = dl::load_experiment_config(config);
      dl::sweep_points(axis, cfg.distill ? *cfg.distill : dl::DistillConfig{});
      const auto rows = dl::run_sweep(cfg, axis, dl::worker_count());
      std::cout << dl::sweep_csv(dl::sweep_axis_name(axis), rows);
      return 0;
    }
    if (*report_cmd) {
      const auto count = dl::write_report(runs_dir, report_out);
      std::cout << "merged " << count << " runs into " << report_out << "\n";
      return 0;
    }
  } catch (const dl::DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const dl::CheckpointError& e) {
    std::cerr << "error: " << e.what() << "\n";
    using K = dl::CheckpointError::Kind;
    return e.kind() == K::version_mismatch || e.kind() == K::topology_mismatch ? kExitUsage : kExitIo;
  } catch (const dl::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const dl::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const dl::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitUsage;
}
