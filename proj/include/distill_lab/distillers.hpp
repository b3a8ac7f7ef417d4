#pragma once

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "distill_lab/data.hpp"
#include "distill_lab/losses.hpp"
#include "distill_lab/nn.hpp"
#include "distill_lab/trainer.hpp"

namespace distill_lab {

enum class Strategy { ce_only, kd, srrl, simkd, ijckd_reuse, ijckd_joint, ijckd_penalty };

std::string_view to_string(Strategy s);
/// Throws ConfigError on unknown names.
Strategy parse_strategy(std::string_view name);
/// Strategies whose inference path runs through the teacher's (or a joint)
/// classifier behind a connector instead of a student-owned classifier.
bool uses_teacher_head(Strategy s);

struct DistillConfig {
  Strategy strategy = Strategy::ce_only;
  LossKind matching_loss = LossKind::mse;
  double lambda = 1.0;    // kd weight
  double tau = 4.0;       // kd temperature
  double alpha = 1.0;     // logits matching weight (CE-s weight in the joint variant)
  double beta = 0.0;      // feature match (srrl, reuse), logits match (joint), penalty
  double alpha_ce = 1.0;  // CE weight in the reuse variant
  std::size_t connector_depth = 1;

  /// Desk defaults per strategy: reuse alpha=1, beta=0; joint alpha=0.2,
  /// beta=1; penalty and srrl alpha=beta=1.
  static DistillConfig defaults(Strategy s);
  void validate() const;
};

struct DistillOutcome {
  Network student;  // inference network
  /// SRRL's training-only connector (the student classifies with its own head).
  std::optional<Connector> connector;
  std::vector<MetricsRecord> trace;
  std::optional<double> initial_frob_dist;
  DistillConfig config;
  TrainConfig train;
  std::size_t steps = 0;

  double final_test_acc() const { return trace.empty() ? 0.0 : trace.back().test_acc; }
  double final_train_acc() const { return trace.empty() ? 0.0 : trace.back().train_acc; }
};

/// Top-1 accuracy in eval mode; argmax ties go to the lowest class index.
double evaluate(const Network& net, const Dataset& data);
/// Eval-mode logits for every row of `data`.
Tensor predict_logits(const Network& net, const Dataset& data);

DistillOutcome train_ce_only(Network student, const DatasetPair& data, const TrainConfig& cfg);
DistillOutcome train_kd(Network student, const Network& teacher, const DatasetPair& data, const DistillConfig& dcfg,
                        const TrainConfig& cfg);
DistillOutcome train_srrl(Network student, const Network& teacher, Connector connector, const DatasetPair& data,
                          const DistillConfig& dcfg, const TrainConfig& cfg);
DistillOutcome train_simkd(FeatureExtractor student_phi, const Network& teacher, Connector connector,
                           const DatasetPair& data, const DistillConfig& dcfg, const TrainConfig& cfg);
DistillOutcome train_ijckd_reuse(FeatureExtractor student_phi, const Network& teacher, Connector connector,
                                 const DatasetPair& data, const DistillConfig& dcfg, const TrainConfig& cfg);
/// Learning-rate multiplier for the joint classifier. It starts from the
/// converged teacher head, whose wide features make the base rate unstable.
inline constexpr double kJointHeadLrScale = 0.1;

/// The joint classifier starts as a copy of the teacher's and is trained
/// together with the connector and the student backbone.
DistillOutcome train_ijckd_joint(FeatureExtractor student_phi, const Network& teacher, Connector connector,
                                 const DatasetPair& data, const DistillConfig& dcfg, const TrainConfig& cfg);
DistillOutcome train_ijckd_penalty(Network student, const Network& teacher, const DatasetPair& data,
                                   const DistillConfig& dcfg, const TrainConfig& cfg);

/// Builds the student (and connector where the strategy needs one) from
/// `student_widths` and cfg.seed, then dispatches on dcfg.strategy. srrl and
/// ijckd_penalty students get an adapter block up to the teacher's feature
/// width when their own is narrower, so the two classifiers share a shape.
/// `teacher` may be null only for ce_only.
DistillOutcome distill(const std::vector<std::size_t>& student_widths, const Network* teacher,
                       const DatasetPair& data, const DistillConfig& dcfg, const TrainConfig& cfg);

/// Teacher training is plain CE training of a fresh network.
DistillOutcome train_teacher(const std::vector<std::size_t>& widths, const DatasetPair& data, const TrainConfig& cfg);

}  // namespace distill_lab
