#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "distill_lab/data.hpp"
#include "distill_lab/nn.hpp"
#include "distill_lab/trainer.hpp"

namespace distill_lab {

/// Space in which outputs and one-hot labels are compared.
/// l1_prob / l2_prob: softmax outputs vs one-hot; l1_logit: raw logits vs a
/// scaled one-hot.
enum class NormKind { l1_prob, l2_prob, l1_logit };

std::string_view to_string(NormKind k);
NormKind parse_norm_kind(std::string_view name);

/// Scale of the one-hot target under l1_logit.
inline constexpr double kLogitTargetScale = 1.0;

/// Row-wise embedding of logits into the comparison space of `kind`.
std::vector<double> embed(const Tensor& logits, NormKind kind);
/// Distance between two embedded rows.
double row_distance(std::span<const double> a, std::span<const double> b, NormKind kind);
/// Embedded one-hot labels, [n x C] row-major.
std::vector<double> embed_labels(std::span<const int> labels, std::size_t classes, NormKind kind);

/// Mean over rows of the distance between the embeddings of two logit matrices.
double mean_distance(const Tensor& a, const Tensor& b, NormKind kind);

/// Mean over D of |embed(f(x)) - onehot(y)|.
double empirical_risk(const Network& f, const Dataset& data, NormKind kind);

/// Features the teacher classifier sees for the student: the student's own
/// adapter output if it has one, else connector(phi_s(x)) when a connector is
/// given, else phi_s(x) when widths already agree. Throws ConfigError naming
/// the width constraint otherwise.
struct RoutedFeatures {
  Tensor features;
  bool used_connector = false;
};
RoutedFeatures route_student_features(const Network& student, std::size_t teacher_width, const Dataset& data,
                                      const Connector* connector = nullptr);

/// Mean |g_s(phi_s(x)) - g_t(phi_s(x))| over D.
double delta1(const Network& student, const Classifier& g_t, const Dataset& data, NormKind kind,
              const Connector* connector = nullptr);
/// Mean |g_t(phi_s(x)) - g_t(phi_t(x))| over D.
double delta2(const Classifier& g_t, const Network& student, const Network& teacher, const Dataset& data,
              NormKind kind, const Connector* connector = nullptr);

/// Losses other than a norm in place of |.|; reported without any claim that
/// the bound holds for them.
struct GenericLossTerms {
  double mse_delta1 = 0.0;
  double mse_delta2 = 0.0;
  double ce_delta1 = 0.0;
  double ce_delta2 = 0.0;
};

struct BoundReport {
  double eps_teacher = 0.0;
  double eps_student = 0.0;
  double delta1 = 0.0;
  double delta2 = 0.0;
  double rhs = 0.0;
  bool holds_aggregate = false;
  std::size_t per_sample_violations = 0;
  NormKind norm_kind = NormKind::l1_prob;
  bool used_connector_for_delta2 = false;
  /// Largest per-sample lhs - rhs (negative when every sample has slack).
  double max_sample_gap = 0.0;
  GenericLossTerms generic;
};

inline constexpr double kBoundTolerance = 1e-9;

/// One pass over D computing a = g_s(phi_s), b = g_t(phi_s), d = g_t(phi_t)
/// and checking |a-y| <= |a-b| + |b-d| + |d-y| per sample.
BoundReport verify_bound(const Network& teacher, const Network& student, const Dataset& data, NormKind kind,
                         const Connector* connector = nullptr);

std::string bound_report_json(const BoundReport& r);

/// sqrt(sum (a - b)^2) over equal-shape matrices; ConfigError on mismatch.
double frobenius_distance(const Tensor& a, const Tensor& b);

struct JointFitResult {
  Classifier classifier;
  double joint_risk = 0.0;
  double teacher_stream_risk = 0.0;
  double student_stream_risk = 0.0;
};

struct JointRisk {
  double teacher_stream = 0.0;
  double student_stream = 0.0;
  double joint = 0.0;  // teacher_stream + student_stream
};

/// Mean CE of g on both feature streams and their sum.
JointRisk joint_objective(const Classifier& g, const Tensor& teacher_features, const Tensor& student_features,
                          std::span<const int> labels);

/// Trains a fresh linear classifier on the summed CE over both frozen
/// feature streams of data (train split semantics). The classifier starts
/// from a seed derived from cfg.seed.
JointFitResult fit_joint_classifier(const Network& teacher, const Network& student, const Dataset& data,
                                    const TrainConfig& cfg, const Connector* connector = nullptr);

}  // namespace distill_lab
