#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "distill_lab/data.hpp"
#include "distill_lab/distillers.hpp"
#include "distill_lab/trainer.hpp"

namespace distill_lab {

/// Either a synthetic task or a pair of CSV files.
struct DataSpec {
  std::optional<TaskSpec> synth;
  std::filesystem::path train_path;
  std::filesystem::path test_path;
  std::optional<std::size_t> classes;
};

struct ExperimentConfig {
  DataSpec data;
  std::vector<std::size_t> teacher_widths;  // empty when absent
  std::filesystem::path teacher_checkpoint;  // empty when absent
  std::vector<std::size_t> student_widths;
  std::optional<DistillConfig> distill;
  TrainConfig train;
  std::filesystem::path output_dir;
  std::vector<std::uint64_t> seeds{0};
};

/// Validates the whole document before anything runs. Unknown keys, wrong
/// types and out-of-range values raise ConfigError naming the field path.
ExperimentConfig parse_experiment_config(const nlohmann::json& doc);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
nlohmann::ordered_json to_json(const ExperimentConfig& cfg);
nlohmann::ordered_json to_json(const DistillConfig& cfg);
nlohmann::ordered_json to_json(const TrainConfig& cfg);

DatasetPair load_data(const DataSpec& spec);

struct RunSummary {
  std::string label;
  std::string strategy;
  std::uint64_t seed = 0;
  double final_train_acc = 0.0;
  double final_test_acc = 0.0;
  double best_test_acc = 0.0;
  std::optional<double> initial_frob_dist;
  std::optional<double> final_frob_dist;
  std::size_t steps = 0;
};

RunSummary summarize(const DistillOutcome& outcome, const std::string& label, std::uint64_t seed);

/// Writes <ckpt_name> (the inference network, plus SRRL's connector),
/// metrics.csv and summary.json into dir.
void write_run(const std::filesystem::path& dir, const std::string& ckpt_name, const DistillOutcome& outcome,
               const RunSummary& summary, const nlohmann::ordered_json& config_echo);

struct Aggregate {
  std::size_t runs = 0;
  double mean_test_acc = 0.0;
  double std_test_acc = 0.0;  // sample standard deviation; 0 for one run
  double mean_train_acc = 0.0;
  double std_train_acc = 0.0;
};
Aggregate aggregate(const std::vector<RunSummary>& runs);
nlohmann::ordered_json to_json(const RunSummary& s);
nlohmann::ordered_json to_json(const Aggregate& a);

/// DISTILL_LAB_WORKERS if set (must be a positive integer), else the
/// available hardware parallelism.
std::size_t worker_count();

/// Runs fn(0..n-1) on up to `workers` threads. The first exception thrown by
/// any task is rethrown after all workers finish.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

/// Trains one teacher per seed under <output_dir>/seed_<s>/.
std::vector<RunSummary> run_train_teacher(const ExperimentConfig& cfg, std::size_t workers);
/// One distillation run per seed under <output_dir>/seed_<s>/, plus
/// <output_dir>/aggregate.json.
std::vector<RunSummary> run_distill(const ExperimentConfig& cfg, std::size_t workers);

struct SweepPoint {
  std::string value;  // axis value as written in the table
  std::string label;  // row label ("SR only", "CE only", ...)
  DistillConfig config;
};

/// axis_spec is "<axis>" or "<axis>=v1,v2,...". Axes: alpha_ce, loss_comb,
/// matching_loss, connector_depth. ConfigError on unknown axes or values.
std::string sweep_axis_name(const std::string& axis_spec);
std::vector<SweepPoint> sweep_points(const std::string& axis_spec, const DistillConfig& base);

struct SweepRow {
  SweepPoint point;
  std::vector<RunSummary> runs;
  Aggregate agg;
};

/// Runs every point x seed and writes <output_dir>/sweep_<axis>.csv.
std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg, const std::string& axis_spec, std::size_t workers);
std::string sweep_csv(const std::string& axis, const std::vector<SweepRow>& rows);

/// Merges every run directory (a summary.json next to a metrics.csv) found
/// under `runs` into one per-epoch CSV. Returns the number of runs merged;
/// throws ConfigError when there are none.
std::size_t write_report(const std::filesystem::path& runs, const std::filesystem::path& out);

/// Writes text to path, creating parent directories. Throws IoError.
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace distill_lab
