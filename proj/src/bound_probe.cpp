#include "distill_lab/bound_probe.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <json.hpp>

#include "distill_lab/errors.hpp"
#include "distill_lab/losses.hpp"
#include "distill_lab/ops.hpp"
#include "distill_lab/seed.hpp"

namespace distill_lab {

std::string_view to_string(NormKind k) {
  switch (k) {
    case NormKind::l1_prob: return "l1_prob";
    case NormKind::l2_prob: return "l2_prob";
    case NormKind::l1_logit: return "l1_logit";
  }
  return "?";
}

NormKind parse_norm_kind(std::string_view name) {
  for (auto k : {NormKind::l1_prob, NormKind::l2_prob, NormKind::l1_logit})
    if (to_string(k) == name) return k;
  throw ConfigError("unknown norm kind '" + std::string(name) + "' (use l1_prob, l2_prob or l1_logit)");
}

namespace {

void softmax_in_place(std::span<double> row) {
  const double mx = *std::max_element(row.begin(), row.end());
  double z = 0.0;
  for (auto& v : row) z += (v = std::exp(v - mx));
  for (auto& v : row) v /= z;
}

// Mean over rows of -sum softmax(target) * log softmax(pred).
double mean_soft_ce(const Tensor& pred, const Tensor& target) {
  NoGradGuard guard;
  return soft_cross_entropy(pred, target).item();
}

double mean_sq(const Tensor& a, const Tensor& b) {
  NoGradGuard guard;
  return mse(a, b).item();
}

}  // namespace

std::vector<double> embed(const Tensor& logits, NormKind kind) {
  std::vector<double> out(logits.data().begin(), logits.data().end());
  if (kind == NormKind::l1_logit) return out;
  const std::size_t c = logits.dim(1);
  for (std::size_t i = 0; i < logits.dim(0); ++i) softmax_in_place(std::span<double>(out.data() + i * c, c));
  return out;
}

std::vector<double> embed_labels(std::span<const int> labels, std::size_t classes, NormKind kind) {
  std::vector<double> out(labels.size() * classes, 0.0);
  const double hot = kind == NormKind::l1_logit ? kLogitTargetScale : 1.0;
  for (std::size_t i = 0; i < labels.size(); ++i) out[i * classes + static_cast<std::size_t>(labels[i])] = hot;
  return out;
}

double row_distance(std::span<const double> a, std::span<const double> b, NormKind kind) {
  double total = 0.0;
  if (kind == NormKind::l2_prob) {
    for (std::size_t k = 0; k < a.size(); ++k) total += (a[k] - b[k]) * (a[k] - b[k]);
    return std::sqrt(total);
  }
  for (std::size_t k = 0; k < a.size(); ++k) total += std::abs(a[k] - b[k]);
  return total;
}

double mean_distance(const Tensor& a, const Tensor& b, NormKind kind) {
  if (a.shape() != b.shape()) throw DimensionError("mean_distance: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  const auto ea = embed(a, kind), eb = embed(b, kind);
  const std::size_t n = a.dim(0), c = a.dim(1);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    total += row_distance(std::span(ea).subspan(i * c, c), std::span(eb).subspan(i * c, c), kind);
  }
  return total / static_cast<double>(n);
}

double empirical_risk(const Network& f, const Dataset& data, NormKind kind) {
  NoGradGuard guard;
  const auto logits = f.forward(data.inputs()).logits;
  const std::size_t n = data.size(), c = logits.dim(1);
  const auto e = embed(logits, kind);
  const auto y = embed_labels(data.labels, c, kind);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    total += row_distance(std::span(e).subspan(i * c, c), std::span(y).subspan(i * c, c), kind);
  }
  return total / static_cast<double>(n);
}

RoutedFeatures route_student_features(const Network& student, std::size_t teacher_width, const Dataset& data,
                                      const Connector* connector) {
  NoGradGuard guard;
  const auto r = student.forward(data.inputs());
  RoutedFeatures out;
  if (student.adapter) {
    out.features = r.head_input;
    out.used_connector = true;
  } else if (connector) {
    if (connector->input_dim() != student.phi.feature_dim() || connector->output_dim() != teacher_width) {
      throw ConfigError("connector maps " + std::to_string(connector->input_dim()) + " -> " +
                        std::to_string(connector->output_dim()) + ", need " +
                        std::to_string(student.phi.feature_dim()) + " -> " + std::to_string(teacher_width));
    }
    out.features = connector->forward(r.features);
    out.used_connector = true;
  } else {
    out.features = r.features;
  }
  if (out.features.dim(1) != teacher_width) {
    throw ConfigError("student feature width " + std::to_string(out.features.dim(1)) +
                      " does not match teacher classifier input width " + std::to_string(teacher_width) +
                      "; supply a connector");
  }
  return out;
}

double delta1(const Network& student, const Classifier& g_t, const Dataset& data, NormKind kind,
              const Connector* connector) {
  const auto routed = route_student_features(student, g_t.input_dim(), data, connector);
  NoGradGuard guard;
  return mean_distance(student.forward(data.inputs()).logits, g_t.forward(routed.features), kind);
}

double delta2(const Classifier& g_t, const Network& student, const Network& teacher, const Dataset& data,
              NormKind kind, const Connector* connector) {
  const auto routed = route_student_features(student, g_t.input_dim(), data, connector);
  NoGradGuard guard;
  const auto z_t = teacher.forward(data.inputs()).head_input;
  return mean_distance(g_t.forward(routed.features), g_t.forward(z_t), kind);
}

BoundReport verify_bound(const Network& teacher, const Network& student, const Dataset& data, NormKind kind,
                         const Connector* connector) {
  if (teacher.classes() != student.classes()) throw ConfigError("teacher and student class counts differ");
  const auto routed = route_student_features(student, teacher.g.input_dim(), data, connector);
  NoGradGuard guard;
  const auto x = data.inputs();
  const auto a_logits = student.forward(x).logits;
  const auto b_logits = teacher.g.forward(routed.features);
  const auto d_logits = teacher.forward(x).logits;
  const std::size_t n = data.size(), c = teacher.classes();
  const auto a = embed(a_logits, kind), b = embed(b_logits, kind), d = embed(d_logits, kind);
  const auto y = embed_labels(data.labels, c, kind);

  BoundReport r;
  r.norm_kind = kind;
  r.used_connector_for_delta2 = routed.used_connector;
  r.max_sample_gap = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    auto row = [&](const std::vector<double>& m) { return std::span(m).subspan(i * c, c); };
    const double ay = row_distance(row(a), row(y), kind);
    const double ab = row_distance(row(a), row(b), kind);
    const double bd = row_distance(row(b), row(d), kind);
    const double dy = row_distance(row(d), row(y), kind);
    r.eps_student += ay;
    r.delta1 += ab;
    r.delta2 += bd;
    r.eps_teacher += dy;
    const double gap = ay - (ab + bd + dy);
    r.max_sample_gap = std::max(r.max_sample_gap, gap);
    if (gap > kBoundTolerance) ++r.per_sample_violations;
  }
  const auto nn = static_cast<double>(n);
  r.eps_student /= nn;
  r.delta1 /= nn;
  r.delta2 /= nn;
  r.eps_teacher /= nn;
  r.rhs = r.eps_teacher + r.delta1 + r.delta2;
  r.holds_aggregate = r.eps_student <= r.rhs + kBoundTolerance;

  r.generic.mse_delta1 = mean_sq(a_logits, b_logits);
  r.generic.mse_delta2 = mean_sq(b_logits, d_logits);
  r.generic.ce_delta1 = mean_soft_ce(a_logits, b_logits);
  r.generic.ce_delta2 = mean_soft_ce(b_logits, d_logits);
  return r;
}

std::string bound_report_json(const BoundReport& r) {
  nlohmann::ordered_json j;
  j["eps_teacher"] = r.eps_teacher;
  j["eps_student"] = r.eps_student;
  j["delta1"] = r.delta1;
  j["delta2"] = r.delta2;
  j["rhs"] = r.rhs;
  j["holds_aggregate"] = r.holds_aggregate;
  j["per_sample_violations"] = r.per_sample_violations;
  j["norm_kind"] = std::string(to_string(r.norm_kind));
  j["used_connector_for_delta2"] = r.used_connector_for_delta2;
  j["max_sample_gap"] = r.max_sample_gap;
  j["generic_loss_terms"] = {{"mse_delta1", r.generic.mse_delta1},
                             {"mse_delta2", r.generic.mse_delta2},
                             {"ce_delta1", r.generic.ce_delta1},
                             {"ce_delta2", r.generic.ce_delta2}};
  return j.dump(2) + "\n";
}

double frobenius_distance(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ConfigError("frobenius_distance needs equal shapes: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  return frobenius_sum(a.data(), b.data());
}

JointRisk joint_objective(const Classifier& g, const Tensor& teacher_features, const Tensor& student_features,
                          std::span<const int> labels) {
  NoGradGuard guard;
  JointRisk r;
  r.teacher_stream = cross_entropy(g.forward(teacher_features), labels).item();
  r.student_stream = cross_entropy(g.forward(student_features), labels).item();
  r.joint = r.teacher_stream + r.student_stream;
  return r;
}

JointFitResult fit_joint_classifier(const Network& teacher, const Network& student, const Dataset& data,
                                    const TrainConfig& cfg, const Connector* connector) {
  const std::size_t width = teacher.head_dim();
  const auto z_s = route_student_features(student, width, data, connector).features;
  Tensor z_t;
  {
    NoGradGuard guard;
    z_t = teacher.forward(data.inputs()).head_input;
  }
  auto layer = make_affine(width, data.class_count, Activation::none, derive_seed(cfg.seed, salt::joint_classifier));
  Classifier g{std::move(layer.weight), std::move(layer.bias)};

  TrainingProblem p;
  append_params(p.params, g);
  p.step = [&](const Tensor&, std::span<const int> y, std::span<const std::size_t> rows) {
    auto ce_t = cross_entropy(g.forward(gather_rows(z_t, rows)), y);
    auto ce_s = cross_entropy(g.forward(gather_rows(z_s, rows)), y);
    const double vt = ce_t.item(), vs = ce_s.item();
    return StepOutput{add(ce_t, ce_s), {{"ce_teacher_stream", vt}, {"ce_student_stream", vs}}};
  };
  // train_acc / test_acc carry the teacher-stream / student-stream accuracy.
  p.evaluate = [&] {
    NoGradGuard guard;
    return EpochEval{accuracy(g.forward(z_t), data.labels), accuracy(g.forward(z_s), data.labels), std::nullopt};
  };
  run_epochs(p, data, cfg);

  const auto risk = joint_objective(g, z_t, z_s, data.labels);
  return {std::move(g), risk.joint, risk.teacher_stream, risk.student_stream};
}

}  // namespace distill_lab
