#include "distill_lab/distillers.hpp"

#include <cmath>

#include "distill_lab/errors.hpp"
#include "distill_lab/ops.hpp"
#include "distill_lab/seed.hpp"

namespace distill_lab {

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::ce_only: return "ce_only";
    case Strategy::kd: return "kd";
    case Strategy::srrl: return "srrl";
    case Strategy::simkd: return "simkd";
    case Strategy::ijckd_reuse: return "ijckd_reuse";
    case Strategy::ijckd_joint: return "ijckd_joint";
    case Strategy::ijckd_penalty: return "ijckd_penalty";
  }
  return "?";
}

Strategy parse_strategy(std::string_view name) {
  for (auto s : {Strategy::ce_only, Strategy::kd, Strategy::srrl, Strategy::simkd, Strategy::ijckd_reuse,
                 Strategy::ijckd_joint, Strategy::ijckd_penalty}) {
    if (to_string(s) == name) return s;
  }
  throw ConfigError("unknown strategy '" + std::string(name) + "'");
}

bool uses_teacher_head(Strategy s) {
  return s == Strategy::simkd || s == Strategy::ijckd_reuse || s == Strategy::ijckd_joint;
}

DistillConfig DistillConfig::defaults(Strategy s) {
  DistillConfig c;
  c.strategy = s;
  switch (s) {
    case Strategy::ijckd_joint:
      c.alpha = 0.2;
      c.beta = 1.0;
      break;
    case Strategy::ijckd_penalty:
    case Strategy::srrl:
      c.alpha = 1.0;
      c.beta = 1.0;
      break;
    default: break;
  }
  return c;
}

void DistillConfig::validate() const {
  auto non_negative = [](double v, const char* name) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError(std::string("distill.") + name + " must be >= 0");
  };
  non_negative(lambda, "lambda");
  non_negative(alpha, "alpha");
  non_negative(beta, "beta");
  non_negative(alpha_ce, "alpha_ce");
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("distill.tau must be > 0");
  if (strategy == Strategy::ijckd_joint && alpha > 1.0) throw ConfigError("distill.alpha must be <= 1 for ijckd_joint");
  if (connector_depth < 1 || connector_depth > 3) throw ConfigError("distill.connector_depth must be 1, 2 or 3");
  if (!is_logit_matching(matching_loss)) {
    throw ConfigError("distill.matching_loss must be mse, neg_cosine or cross_entropy");
  }
}

Tensor predict_logits(const Network& net, const Dataset& data) {
  NoGradGuard guard;
  return net.forward(data.inputs()).logits;
}

double evaluate(const Network& net, const Dataset& data) { return accuracy(predict_logits(net, data), data.labels); }

namespace {

struct TeacherCache {
  Tensor features;
  Tensor logits;
};

TeacherCache cache_teacher(const Network& teacher, const Dataset& data) {
  NoGradGuard guard;
  auto r = teacher.forward(data.inputs());
  return {r.head_input, r.logits};
}

std::optional<double> frob(const Classifier& a, const Classifier& b) {
  if (a.weight.shape() != b.weight.shape()) return std::nullopt;
  return frobenius_sum(a.weight.tensor().data(), b.weight.tensor().data());
}

Classifier frozen_copy(const Classifier& g) {
  Classifier c = g;
  c.set_frozen(true);
  return c;
}

void check_classes(const Network& teacher, std::size_t student_classes, const DatasetPair& data) {
  if (teacher.classes() != student_classes) {
    throw ConfigError("teacher has " + std::to_string(teacher.classes()) + " classes, student " +
                      std::to_string(student_classes));
  }
  if (teacher.classes() != data.train.class_count) {
    throw ConfigError("teacher has " + std::to_string(teacher.classes()) + " classes, data " +
                      std::to_string(data.train.class_count));
  }
}

void check_connector(const Connector& c, std::size_t student_width, const Network& teacher) {
  if (c.input_dim() != student_width) {
    throw DimensionError("connector input width " + std::to_string(c.input_dim()) + " != student feature width " +
                         std::to_string(student_width));
  }
  if (c.output_dim() != teacher.head_dim()) {
    throw DimensionError("connector output width " + std::to_string(c.output_dim()) + " != teacher feature width " +
                         std::to_string(teacher.head_dim()));
  }
}

Tensor weighted(const Tensor& t, double w) { return scale(t, w); }

DistillOutcome run(TrainingProblem& problem, Network& student, Connector* connector,
                   std::optional<double> initial_frob, const DatasetPair& data, const DistillConfig& dcfg,
                   const TrainConfig& cfg) {
  data.train.validate();
  data.test.validate();
  auto trace = run_epochs(problem, data.train, cfg);
  DistillOutcome out;
  out.student = std::move(student);
  if (connector) out.connector = std::move(*connector);
  out.trace = std::move(trace);
  out.initial_frob_dist = initial_frob;
  out.config = dcfg;
  out.train = cfg;
  out.steps = cfg.epochs * steps_per_epoch(data.train.size(), cfg);
  return out;
}

EpochEval eval_network(const Network& net, const DatasetPair& data, std::optional<double> frob_dist) {
  return {evaluate(net, data.train), evaluate(net, data.test), frob_dist};
}

}  // namespace

DistillOutcome train_ce_only(Network student, const DatasetPair& data, const TrainConfig& cfg) {
  student.validate();
  TrainingProblem p;
  append_params(p.params, student);
  p.step = [&](const Tensor& x, std::span<const int> y, std::span<const std::size_t>) {
    auto r = student.forward(x, Mode::train);
    auto ce = cross_entropy(r.logits, y);
    const double v = ce.item();
    return StepOutput{std::move(ce), {{"ce", v}}};
  };
  p.evaluate = [&] { return eval_network(student, data, std::nullopt); };
  return run(p, student, nullptr, std::nullopt, data, DistillConfig::defaults(Strategy::ce_only), cfg);
}

DistillOutcome train_teacher(const std::vector<std::size_t>& widths, const DatasetPair& data, const TrainConfig& cfg) {
  return train_ce_only(init_network(widths, data.train.class_count, cfg.seed), data, cfg);
}

DistillOutcome train_kd(Network student, const Network& teacher, const DatasetPair& data, const DistillConfig& dcfg,
                        const TrainConfig& cfg) {
  dcfg.validate();
  student.validate();
  check_classes(teacher, student.classes(), data);
  const auto cache = cache_teacher(teacher, data.train);
  TrainingProblem p;
  append_params(p.params, student);
  p.step = [&](const Tensor& x, std::span<const int> y, std::span<const std::size_t> rows) {
    auto r = student.forward(x, Mode::train);
    auto ce = cross_entropy(r.logits, y);
    auto kd = kd_kl(r.logits, gather_rows(cache.logits, rows), dcfg.tau);
    const double vce = ce.item(), vkd = kd.item();
    return StepOutput{add(ce, weighted(kd, dcfg.lambda)), {{"ce", vce}, {"kd", vkd}}};
  };
  p.evaluate = [&] { return eval_network(student, data, frob(student.g, teacher.g)); };
  return run(p, student, nullptr, frob(student.g, teacher.g), data, dcfg, cfg);
}

DistillOutcome train_srrl(Network student, const Network& teacher, Connector connector, const DatasetPair& data,
                          const DistillConfig& dcfg, const TrainConfig& cfg) {
  dcfg.validate();
  student.validate();
  check_classes(teacher, student.classes(), data);
  check_connector(connector, student.head_dim(), teacher);
  const auto cache = cache_teacher(teacher, data.train);
  const Classifier g_t = frozen_copy(teacher.g);
  TrainingProblem p;
  append_params(p.params, student);
  append_params(p.params, connector);
  p.step = [&](const Tensor& x, std::span<const int> y, std::span<const std::size_t> rows) {
    auto r = student.forward(x, Mode::train);
    auto ce = cross_entropy(r.logits, y);
    auto aligned = connector.forward(r.head_input, Mode::train);
    auto fm = feature_match(aligned, gather_rows(cache.features, rows));
    auto lm = softmax_regression_loss(dcfg.matching_loss, g_t.forward(aligned), gather_rows(cache.logits, rows));
    const double vce = ce.item(), vlm = lm.item(), vfm = fm.item();
    auto total = add(add(ce, weighted(lm, dcfg.alpha)), weighted(fm, dcfg.beta));
    return StepOutput{std::move(total), {{"ce", vce}, {"lm", vlm}, {"fm", vfm}}};
  };
  p.evaluate = [&] { return eval_network(student, data, frob(student.g, teacher.g)); };
  return run(p, student, &connector, frob(student.g, teacher.g), data, dcfg, cfg);
}

DistillOutcome train_simkd(FeatureExtractor student_phi, const Network& teacher, Connector connector,
                           const DatasetPair& data, const DistillConfig& dcfg, const TrainConfig& cfg) {
  dcfg.validate();
  check_classes(teacher, teacher.classes(), data);
  check_connector(connector, student_phi.feature_dim(), teacher);
  const auto cache = cache_teacher(teacher, data.train);
  Network student{std::move(student_phi), std::move(connector), frozen_copy(teacher.g)};
  TrainingProblem p;
  append_params(p.params, student);
  // Labels are never read: the objective is feature matching alone.
  p.step = [&](const Tensor& x, std::span<const int>, std::span<const std::size_t> rows) {
    auto r = student.forward(x, Mode::train);
    auto fm = feature_match(r.head_input, gather_rows(cache.features, rows));
    const double v = fm.item();
    return StepOutput{std::move(fm), {{"fm", v}}};
  };
  p.evaluate = [&] { return eval_network(student, data, frob(student.g, teacher.g)); };
  return run(p, student, nullptr, frob(student.g, teacher.g), data, dcfg, cfg);
}

DistillOutcome train_ijckd_reuse(FeatureExtractor student_phi, const Network& teacher, Connector connector,
                                 const DatasetPair& data, const DistillConfig& dcfg, const TrainConfig& cfg) {
  dcfg.validate();
  check_classes(teacher, teacher.classes(), data);
  check_connector(connector, student_phi.feature_dim(), teacher);
  const auto cache = cache_teacher(teacher, data.train);
  Network student{std::move(student_phi), std::move(connector), frozen_copy(teacher.g)};
  TrainingProblem p;
  append_params(p.params, student);
  p.step = [&](const Tensor& x, std::span<const int> y, std::span<const std::size_t> rows) {
    auto r = student.forward(x, Mode::train);
    auto ce = cross_entropy(r.logits, y);
    auto lm = softmax_regression_loss(dcfg.matching_loss, r.logits, gather_rows(cache.logits, rows));
    auto fm = feature_match(r.head_input, gather_rows(cache.features, rows));
    const double vce = ce.item(), vlm = lm.item(), vfm = fm.item();
    auto total = add(add(weighted(ce, dcfg.alpha_ce), weighted(lm, dcfg.alpha)), weighted(fm, dcfg.beta));
    return StepOutput{std::move(total), {{"ce", vce}, {"lm", vlm}, {"fm", vfm}}};
  };
  p.evaluate = [&] { return eval_network(student, data, frob(student.g, teacher.g)); };
  return run(p, student, nullptr, frob(student.g, teacher.g), data, dcfg, cfg);
}

DistillOutcome train_ijckd_joint(FeatureExtractor student_phi, const Network& teacher, Connector connector,
                                 const DatasetPair& data, const DistillConfig& dcfg, const TrainConfig& cfg) {
  dcfg.validate();
  check_classes(teacher, teacher.classes(), data);
  check_connector(connector, student_phi.feature_dim(), teacher);
  const auto cache = cache_teacher(teacher, data.train);
  Classifier joint = teacher.g;
  joint.set_frozen(false);
  Network student{std::move(student_phi), std::move(connector), std::move(joint)};
  TrainingProblem p;
  append_params(p.params, student);
  p.lr_scale.assign(p.params.size(), 1.0);
  p.lr_scale[p.params.size() - 2] = p.lr_scale[p.params.size() - 1] = kJointHeadLrScale;
  p.step = [&](const Tensor& x, std::span<const int> y, std::span<const std::size_t> rows) {
    auto r = student.forward(x, Mode::train);
    auto o_t = student.g.forward(gather_rows(cache.features, rows));
    auto ce_s = cross_entropy(r.logits, y);
    auto ce_t = cross_entropy(o_t, y);
    auto lm = mse(r.logits, o_t);
    const double vs = ce_s.item(), vt = ce_t.item(), vlm = lm.item();
    auto total = add(add(weighted(ce_s, dcfg.alpha), weighted(ce_t, 1.0 - dcfg.alpha)), weighted(lm, dcfg.beta));
    return StepOutput{std::move(total), {{"ce", vs}, {"ce_t", vt}, {"lm", vlm}}};
  };
  p.evaluate = [&] { return eval_network(student, data, frob(student.g, teacher.g)); };
  return run(p, student, nullptr, frob(student.g, teacher.g), data, dcfg, cfg);
}

DistillOutcome train_ijckd_penalty(Network student, const Network& teacher, const DatasetPair& data,
                                   const DistillConfig& dcfg, const TrainConfig& cfg) {
  dcfg.validate();
  student.validate();
  check_classes(teacher, student.classes(), data);
  if (student.head_dim() != teacher.head_dim()) {
    throw ConfigError("ijckd_penalty requires equal feature widths: teacher " + std::to_string(teacher.head_dim()) +
                      ", student " + std::to_string(student.head_dim()));
  }
  const auto cache = cache_teacher(teacher, data.train);
  const Tensor w_t = teacher.g.weight.tensor().detach();
  TrainingProblem p;
  append_params(p.params, student);
  p.step = [&](const Tensor& x, std::span<const int> y, std::span<const std::size_t> rows) {
    auto r = student.forward(x, Mode::train);
    auto ce = cross_entropy(r.logits, y);
    auto lm = softmax_regression_loss(dcfg.matching_loss, r.logits, gather_rows(cache.logits, rows));
    auto pen = distance_penalty(w_t, student.g.weight.tensor());
    const double vce = ce.item(), vlm = lm.item(), vpen = pen.item();
    auto total = add(add(ce, weighted(lm, dcfg.alpha)), weighted(pen, dcfg.beta));
    return StepOutput{std::move(total), {{"ce", vce}, {"lm", vlm}, {"penalty", vpen}}};
  };
  p.evaluate = [&] { return eval_network(student, data, frob(student.g, teacher.g)); };
  return run(p, student, nullptr, frob(student.g, teacher.g), data, dcfg, cfg);
}

DistillOutcome distill(const std::vector<std::size_t>& student_widths, const Network* teacher,
                       const DatasetPair& data, const DistillConfig& dcfg, const TrainConfig& cfg) {
  dcfg.validate();
  cfg.validate();
  const std::size_t classes = data.train.class_count;
  if (dcfg.strategy == Strategy::ce_only) return train_ce_only(init_network(student_widths, classes, cfg.seed), data, cfg);
  if (!teacher) throw ConfigError("strategy " + std::string(to_string(dcfg.strategy)) + " needs a teacher");
  auto connector = [&](std::size_t from) {
    return init_connector(from, teacher->head_dim(), dcfg.connector_depth, derive_seed(cfg.seed, salt::connector));
  };
  // Own-head students whose classifier must match the teacher's in shape.
  auto matched_student = [&] {
    auto net = init_network(student_widths, classes, cfg.seed);
    if (net.head_dim() == teacher->head_dim()) return net;
    return init_adapter_network(student_widths, teacher->head_dim(), classes, cfg.seed);
  };
  switch (dcfg.strategy) {
    case Strategy::kd: return train_kd(init_network(student_widths, classes, cfg.seed), *teacher, data, dcfg, cfg);
    case Strategy::srrl: {
      auto student = matched_student();
      auto c = connector(student.head_dim());
      return train_srrl(std::move(student), *teacher, std::move(c), data, dcfg, cfg);
    }
    case Strategy::ijckd_penalty: return train_ijckd_penalty(matched_student(), *teacher, data, dcfg, cfg);
    case Strategy::simkd:
    case Strategy::ijckd_reuse:
    case Strategy::ijckd_joint: {
      auto phi = init_network(student_widths, classes, cfg.seed).phi;
      auto c = connector(phi.feature_dim());
      if (dcfg.strategy == Strategy::simkd) return train_simkd(std::move(phi), *teacher, std::move(c), data, dcfg, cfg);
      if (dcfg.strategy == Strategy::ijckd_reuse)
        return train_ijckd_reuse(std::move(phi), *teacher, std::move(c), data, dcfg, cfg);
      return train_ijckd_joint(std::move(phi), *teacher, std::move(c), data, dcfg, cfg);
    }
    case Strategy::ce_only: break;
  }
  return train_ce_only(init_network(student_widths, classes, cfg.seed), data, cfg);
}

}  // namespace distill_lab
