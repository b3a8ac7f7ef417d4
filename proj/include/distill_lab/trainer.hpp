#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "distill_lab/data.hpp"
#include "distill_lab/nn.hpp"
#include "distill_lab/tensor.hpp"

namespace distill_lab {

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t batch_size = 64;
  double lr = 0.05;
  double momentum = 0.9;
  bool nesterov = true;
  double weight_decay = 5e-4;
  std::vector<std::size_t> milestones{120, 160, 180};
  double gamma = 0.1;
  std::uint64_t seed = 0;
  bool shuffle = true;

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

/// Momentum buffers, one per parameter position; empty until first touched.
struct SgdState {
  std::vector<std::vector<double>> buffers;
};

/// One SGD step over `params` using their accumulated gradients.
/// g <- g + wd*w; v <- mu*v + g; w <- w - lr*(g + mu*v) (or lr*v without
/// Nesterov). Frozen parameters and parameters with no gradient are skipped.
/// `lr_scale`, when not empty, multiplies the rate per parameter position.
void sgd_step(std::span<Tensor> params, SgdState& state, double lr, const TrainConfig& cfg,
              std::span<const double> lr_scale = {});

/// lr * gamma^k with k the number of milestones <= epoch.
double lr_at(std::size_t epoch, const TrainConfig& cfg);

struct LossTerm {
  std::string name;
  double value = 0.0;
};

struct MetricsRecord {
  std::size_t epoch = 0;
  std::vector<LossTerm> losses;  // epoch means, sample weighted
  double train_acc = 0.0;
  double test_acc = 0.0;
  std::optional<double> frob_dist;
  double lr_current = 0.0;

  std::optional<double> loss(const std::string& name) const;
};

struct StepOutput {
  Tensor total;
  std::vector<LossTerm> terms;
};

struct EpochEval {
  double train_acc = 0.0;
  double test_acc = 0.0;
  std::optional<double> frob_dist;
};

/// What run_epochs drives: the trainable parameters, a per-batch loss over
/// the given dataset rows, and an end-of-epoch evaluation.
struct TrainingProblem {
  ParamRefs params;
  /// Optional per-parameter learning-rate multipliers, parallel to params.
  std::vector<double> lr_scale;
  std::function<StepOutput(const Tensor& x, std::span<const int> y, std::span<const std::size_t> rows)> step;
  std::function<EpochEval()> evaluate;
};

/// Runs cfg.epochs epochs of minibatch SGD. Batch order comes from a shuffle
/// stream derived from cfg.seed (dataset order when shuffle is off). A
/// non-finite loss or gradient throws DivergenceError with epoch and step.
std::vector<MetricsRecord> run_epochs(TrainingProblem& problem, const Dataset& train, const TrainConfig& cfg);

/// Number of optimizer steps run_epochs takes on n samples. A trailing batch
/// of a single row joins the batch before it, since batchnorm needs two rows.
std::size_t steps_per_epoch(std::size_t n, const TrainConfig& cfg);

/// Index of the largest entry per row; ties go to the lowest index.
std::vector<int> argmax_rows(const Tensor& logits);
double accuracy(const Tensor& logits, std::span<const int> labels);

/// CSV with header epoch,<loss names...>,train_acc,test_acc,frob_dist,lr.
/// Absent frob_dist is written as an empty field.
std::string metrics_csv(const std::vector<MetricsRecord>& records);

/// Shortest round-trip decimal form of a double.
std::string format_double(double v);

}  // namespace distill_lab
