#include <cmath>
#include <random>

#include <doctest.h>

#include "distill_lab/bound_probe.hpp"
#include "distill_lab/distillers.hpp"
#include "support.hpp"

using namespace distill_lab;

namespace {

constexpr NormKind kAllNorms[] = {NormKind::l1_prob, NormKind::l2_prob, NormKind::l1_logit};

TrainConfig short_schedule(std::size_t epochs = 10) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.milestones = {epochs * 3 / 4};
  return cfg;
}

// Long-double reference for the mean of |embed(logits_i) - onehot(y_i)|.
long double risk_oracle(const Tensor& logits, const std::vector<int>& labels, NormKind kind) {
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  long double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<long double> e(c);
    long double mx = logits.at(i, 0), z = 0;
    for (std::size_t j = 1; j < c; ++j) mx = std::max<long double>(mx, logits.at(i, j));
    for (std::size_t j = 0; j < c; ++j) {
      e[j] = kind == NormKind::l1_logit ? (long double)logits.at(i, j) : std::exp((long double)logits.at(i, j) - mx);
      z += e[j];
    }
    long double row = 0;
    for (std::size_t j = 0; j < c; ++j) {
      const long double p = kind == NormKind::l1_logit ? e[j] : e[j] / z;
      const long double y = j == std::size_t(labels[i]) ? (kind == NormKind::l1_logit ? kLogitTargetScale : 1.0L) : 0.0L;
      row += kind == NormKind::l2_prob ? (p - y) * (p - y) : std::abs(p - y);
    }
    total += kind == NormKind::l2_prob ? std::sqrt(row) : row;
  }
  return total / (long double)n;
}

}  // namespace

TEST_CASE("empirical risk matches a brute-force recount") {
  const auto data = test_support::small_blobs(1, 20);
  const auto net = init_network({2, 7}, 3, 5);
  const auto logits = predict_logits(net, data.test);
  for (auto kind : kAllNorms) {
    CAPTURE(to_string(kind));
    const double got = empirical_risk(net, data.test, kind);
    CHECK(std::abs(got - (double)risk_oracle(logits, data.test.labels, kind)) < 1e-12);
  }
}

TEST_CASE("a uniform predictor has l1 probability risk of exactly one") {
  // |(1/C,...,1/C) - e_y|_1 = (1 - 1/C) + (C - 1)/C = 2(C - 1)/C, which is 1 at C = 2.
  TaskSpec spec;
  spec.kind = TaskKind::blobs;
  spec.classes = 2;
  spec.per_class = 10;
  spec.test_per_class = 10;
  const auto data = make_task(spec);
  auto net = init_network({2, 3}, 2, 0);
  for (auto& v : net.g.weight.tensor().mutable_data()) v = 0;
  CHECK(empirical_risk(net, data.test, NormKind::l1_prob) == doctest::Approx(1.0).epsilon(1e-15));

  const auto data3 = test_support::small_blobs(0, 10);
  auto net3 = init_network({2, 3}, 3, 0);
  for (auto& v : net3.g.weight.tensor().mutable_data()) v = 0;
  CHECK(empirical_risk(net3, data3.test, NormKind::l1_prob) == doctest::Approx(4.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("distances are symmetric and vanish on equal inputs") {
  std::mt19937_64 rng(3);
  const auto a = test_support::random_tensor({6, 4}, rng, -3, 3);
  const auto b = test_support::random_tensor({6, 4}, rng, -3, 3);
  for (auto kind : kAllNorms) {
    CAPTURE(to_string(kind));
    CHECK(mean_distance(a, b, kind) == mean_distance(b, a, kind));
    CHECK(mean_distance(a, a, kind) == 0.0);
    CHECK(mean_distance(a, b, kind) > 0.0);
  }
  CHECK_THROWS_AS(mean_distance(a, Tensor::zeros({6, 3}), NormKind::l1_prob), DimensionError);
}

TEST_CASE("self distillation gives exact zeros") {
  const auto data = test_support::small_blobs(2, 30);
  const auto teacher = train_teacher({2, 6}, data, short_schedule()).student;
  const auto student = teacher;
  for (auto kind : kAllNorms) {
    CAPTURE(to_string(kind));
    const auto r = verify_bound(teacher, student, data.test, kind);
    CHECK(r.delta1 == 0.0);
    CHECK(r.delta2 == 0.0);
    CHECK(r.eps_student == r.eps_teacher);
    CHECK(r.holds_aggregate);
    CHECK(r.per_sample_violations == 0);
  }
}

TEST_CASE("the bound holds on random triples") {
  std::mt19937_64 rng(11);
  std::size_t triples = 0;
  for (int trial = 0; trial < 40; ++trial) {
    const auto data = test_support::small_blobs(rng(), 8);
    const std::size_t tw = 3 + rng() % 6;
    const std::size_t sw = 2 + rng() % 6;
    const auto teacher = init_network({2, tw}, 3, rng());
    auto student = init_network({2, sw}, 3, rng());
    std::optional<Connector> conn;
    if (sw != tw) conn = init_connector(sw, tw, 1 + rng() % 3, rng());
    for (auto kind : kAllNorms) {
      const auto r = verify_bound(teacher, student, data.test, kind, conn ? &*conn : nullptr);
      CHECK(r.per_sample_violations == 0);
      CHECK(r.holds_aggregate);
      CHECK(r.max_sample_gap <= kBoundTolerance);
      CHECK(r.rhs == doctest::Approx(r.eps_teacher + r.delta1 + r.delta2).epsilon(1e-12));
      CHECK(r.used_connector_for_delta2 == conn.has_value());
      ++triples;
    }
  }
  CHECK(triples == 120);
}

TEST_CASE("delta terms agree with direct recomputation") {
  const auto data = test_support::small_blobs(4, 12);
  const auto teacher = init_network({2, 5}, 3, 1);
  const auto student = init_network({2, 5}, 3, 2);
  const auto x = data.test.inputs();
  const auto zs = student.forward(x).features;
  const auto a = student.g.forward(zs);
  const auto b = teacher.g.forward(zs);
  const auto d = teacher.forward(x).logits;
  for (auto kind : kAllNorms) {
    CAPTURE(to_string(kind));
    CHECK(delta1(student, teacher.g, data.test, kind) == mean_distance(a, b, kind));
    CHECK(delta2(teacher.g, student, teacher, data.test, kind) == mean_distance(b, d, kind));
  }
}

TEST_CASE("routing needs a width match or a connector") {
  const auto data = test_support::small_blobs(5, 5);
  const auto student = init_network({2, 4}, 3, 0);
  CHECK_THROWS_AS(route_student_features(student, 6, data.test), ConfigError);
  const auto conn = init_connector(4, 6, 1, 0);
  const auto routed = route_student_features(student, 6, data.test, &conn);
  CHECK(routed.used_connector);
  CHECK(routed.features.dim(1) == 6);
  CHECK_FALSE(route_student_features(student, 4, data.test).used_connector);
}

TEST_CASE("frobenius distance") {
  const auto eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  CHECK(frobenius_distance(eye, Tensor::zeros({3, 3})) == std::sqrt(3.0));
  CHECK(frobenius_distance(eye, eye) == 0.0);
  CHECK_THROWS_AS(frobenius_distance(eye, Tensor::zeros({3, 2})), ConfigError);
}

TEST_CASE("fitted joint classifier beats the teacher head and a random head") {
  const auto data = test_support::small_blobs(6, 40);
  const auto teacher = train_teacher({2, 8}, data, short_schedule(20)).student;
  const auto student = train_ce_only(init_network({2, 8}, 3, 3), data, short_schedule(3)).student;
  const auto fit = fit_joint_classifier(teacher, student, data.train, short_schedule(30));
  const auto z_t = teacher.forward(data.train.inputs()).head_input;
  const auto z_s = student.forward(data.train.inputs()).head_input;
  const auto teacher_risk = joint_objective(teacher.g, z_t, z_s, data.train.labels);
  const auto random_risk = joint_objective(init_network({2, 8}, 3, 99).g, z_t, z_s, data.train.labels);
  MESSAGE("joint " << fit.joint_risk << ", teacher head " << teacher_risk.joint << ", random " << random_risk.joint);
  CHECK(fit.joint_risk <= teacher_risk.joint);
  CHECK(fit.joint_risk <= random_risk.joint);
  CHECK(fit.joint_risk == doctest::Approx(fit.teacher_stream_risk + fit.student_stream_risk).epsilon(1e-14));
}

TEST_CASE("bound report json") {
  BoundReport r;
  r.delta1 = 0.25;
  r.holds_aggregate = true;
  r.norm_kind = NormKind::l2_prob;
  const auto text = bound_report_json(r);
  CHECK(text.find("\"delta1\": 0.25") != std::string::npos);
  CHECK(text.find("\"holds_aggregate\": true") != std::string::npos);
  CHECK(text.find("\"norm_kind\": \"l2_prob\"") != std::string::npos);
  CHECK(parse_norm_kind("l1_logit") == NormKind::l1_logit);
  CHECK_THROWS_AS(parse_norm_kind("l3"), ConfigError);
}
