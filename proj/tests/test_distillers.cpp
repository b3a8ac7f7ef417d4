#include <algorithm>
#include <random>

#include <doctest.h>

#include "distill_lab/distillers.hpp"
#include "distill_lab/seed.hpp"
#include "support.hpp"

using namespace distill_lab;

namespace {

TrainConfig short_schedule(std::size_t epochs = 12) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.milestones = {epochs * 3 / 4};
  return cfg;
}

Network trained_teacher(const DatasetPair& data, std::size_t width = 6) {
  auto t = train_teacher({2, width}, data, short_schedule()).student;
  freeze(t);
  return t;
}

std::vector<std::pair<double, double>> accuracies(const DistillOutcome& o) {
  std::vector<std::pair<double, double>> out;
  for (const auto& r : o.trace) out.emplace_back(r.train_acc, r.test_acc);
  return out;
}

DistillConfig config(Strategy s, double alpha, double beta) {
  auto c = DistillConfig::defaults(s);
  c.alpha = alpha;
  c.beta = beta;
  return c;
}

}  // namespace

TEST_CASE("zero-weight distillation terms reduce to plain cross-entropy") {
  const auto data = test_support::small_blobs(2);
  const auto teacher = trained_teacher(data);
  const auto cfg = short_schedule();
  const auto init = init_network({2, 6}, 3, 11);
  const auto ce = train_ce_only(init, data, cfg);

  SUBCASE("kd") {
    auto c = DistillConfig::defaults(Strategy::kd);
    c.lambda = 0.0;
    const auto kd = train_kd(init, teacher, data, c, cfg);
    CHECK(same_parameters(kd.student, ce.student));
    CHECK(accuracies(kd) == accuracies(ce));
  }
  SUBCASE("srrl") {
    const auto conn = init_connector(6, 6, 1, 3);
    const auto srrl = train_srrl(init, teacher, conn, data, config(Strategy::srrl, 0, 0), cfg);
    CHECK(same_parameters(srrl.student, ce.student));
    CHECK(accuracies(srrl) == accuracies(ce));
  }
  SUBCASE("penalty") {
    const auto pen = train_ijckd_penalty(init, teacher, data, config(Strategy::ijckd_penalty, 0, 0), cfg);
    CHECK(same_parameters(pen.student, ce.student));
    CHECK(accuracies(pen) == accuracies(ce));
  }
}

TEST_CASE("the teacher is never modified") {
  const auto data = test_support::small_blobs(3);
  const auto teacher = trained_teacher(data);
  const auto before = teacher;
  const auto cfg = short_schedule(3);
  for (auto s : {Strategy::kd, Strategy::srrl, Strategy::simkd, Strategy::ijckd_reuse, Strategy::ijckd_joint,
                 Strategy::ijckd_penalty}) {
    CAPTURE(to_string(s));
    const auto out = distill({2, 4}, &teacher, data, DistillConfig::defaults(s), cfg);
    CHECK(same_parameters(teacher, before));
    CHECK(out.trace.size() == 3);
  }
}

TEST_CASE("simkd ignores labels") {
  const auto data = test_support::small_blobs(4);
  const auto teacher = trained_teacher(data);
  auto shuffled = data;
  std::mt19937_64 rng(9);
  std::shuffle(shuffled.train.labels.begin(), shuffled.train.labels.end(), rng);
  REQUIRE(shuffled.train.labels != data.train.labels);
  const auto cfg = short_schedule(5);
  const auto c = DistillConfig::defaults(Strategy::simkd);
  const auto a = distill({2, 4}, &teacher, data, c, cfg);
  const auto b = distill({2, 4}, &teacher, shuffled, c, cfg);
  CHECK(same_parameters(a.student, b.student));
}

TEST_CASE("every strategy separates well spaced blobs") {
  TaskSpec spec;
  spec.kind = TaskKind::blobs;
  spec.noise = 0.2;
  spec.per_class = 40;
  spec.test_per_class = 40;
  const auto data = make_task(spec);
  const auto teacher = trained_teacher(data, 8);
  REQUIRE(evaluate(teacher, data.train) == 1.0);
  for (auto s : {Strategy::ce_only, Strategy::kd, Strategy::srrl, Strategy::simkd, Strategy::ijckd_reuse,
                 Strategy::ijckd_joint, Strategy::ijckd_penalty}) {
    CAPTURE(to_string(s));
    const auto out = distill({2, 4}, &teacher, data, DistillConfig::defaults(s), short_schedule(20));
    CHECK(out.final_train_acc() == 1.0);
  }
}

TEST_CASE("zero epochs leave the student at its initialisation") {
  const auto data = test_support::small_blobs(5);
  TrainConfig cfg;
  cfg.epochs = 0;
  cfg.milestones = {};
  const auto init = init_network({2, 4}, 3, 0);
  const auto out = train_ce_only(init, data, cfg);
  CHECK(out.trace.empty());
  CHECK(out.steps == 0);
  CHECK(same_parameters(out.student, init));
}

TEST_CASE("kd term vanishes for a student equal to its teacher") {
  const auto data = test_support::small_blobs(6);
  const auto teacher = trained_teacher(data);
  TrainConfig cfg = short_schedule(1);
  cfg.milestones = {};
  cfg.batch_size = data.train.size();
  cfg.lr = 1e-300;
  auto student = teacher;
  student.set_frozen(false);
  const auto out = train_kd(student, teacher, data, DistillConfig::defaults(Strategy::kd), cfg);
  REQUIRE(out.trace.size() == 1);
  CHECK(*out.trace[0].loss("kd") == 0.0);
  CHECK(*out.trace[0].frob_dist == 0.0);
}

TEST_CASE("evaluate matches a brute-force recount") {
  const auto data = test_support::small_blobs(7);
  const auto net = init_network({2, 5}, 3, 3);
  const auto logits = predict_logits(net, data.test);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < data.test.size(); ++i) {
    int best = 0;
    for (int j = 1; j < 3; ++j)
      if (logits.at(i, j) > logits.at(i, best)) best = j;
    if (best == data.test.labels[i]) ++hits;
  }
  CHECK(evaluate(net, data.test) == double(hits) / double(data.test.size()));
}

TEST_CASE("the penalty pulls the student head toward the teacher's") {
  const auto data = test_support::small_blobs(8);
  const auto teacher = trained_teacher(data);
  const auto out =
      train_ijckd_penalty(init_network({2, 6}, 3, 1), teacher, data, config(Strategy::ijckd_penalty, 0, 1), short_schedule());
  REQUIRE(out.initial_frob_dist);
  const auto& trace = out.trace;
  CHECK(*trace.back().frob_dist < *out.initial_frob_dist);
  CHECK(*trace.back().frob_dist < *trace.front().frob_dist);
}

TEST_CASE("mismatched classes and widths are rejected") {
  const auto data = test_support::small_blobs(9);
  const auto teacher = trained_teacher(data);
  const auto cfg = short_schedule(2);

  TaskSpec four;
  four.kind = TaskKind::blobs;
  four.classes = 4;
  four.per_class = 10;
  four.test_per_class = 10;
  const auto data4 = make_task(four);
  CHECK_THROWS_AS(train_kd(init_network({2, 4}, 4, 0), teacher, data4, DistillConfig::defaults(Strategy::kd), cfg),
                  ConfigError);
  CHECK_THROWS_AS(train_kd(init_network({2, 4}, 4, 0), teacher, data, DistillConfig::defaults(Strategy::kd), cfg),
                  ConfigError);

  const auto reuse = DistillConfig::defaults(Strategy::ijckd_reuse);
  CHECK_THROWS_AS(train_ijckd_reuse(init_network({2, 4}, 3, 0).phi, teacher, init_connector(5, 6, 1, 0), data, reuse, cfg),
                  DimensionError);
  CHECK_THROWS_AS(train_ijckd_reuse(init_network({2, 4}, 3, 0).phi, teacher, init_connector(4, 7, 1, 0), data, reuse, cfg),
                  DimensionError);
  CHECK_THROWS_AS(train_ijckd_penalty(init_network({2, 4}, 3, 0), teacher, data,
                                      DistillConfig::defaults(Strategy::ijckd_penalty), cfg),
                  ConfigError);
  CHECK_THROWS_AS(distill({2, 4}, nullptr, data, DistillConfig::defaults(Strategy::kd), cfg), ConfigError);
}

TEST_CASE("distill builds the architecture each strategy needs") {
  const auto data = test_support::small_blobs(10);
  const auto teacher = trained_teacher(data);
  const auto cfg = short_schedule(1);

  const auto reuse = distill({2, 4}, &teacher, data, DistillConfig::defaults(Strategy::ijckd_reuse), cfg);
  REQUIRE(reuse.student.adapter);
  CHECK(reuse.student.adapter->input_dim() == 4);
  CHECK(reuse.student.adapter->output_dim() == 6);
  CHECK(reuse.student.g.frozen());
  CHECK(reuse.student.g.weight.tensor().values() == teacher.g.weight.tensor().values());

  for (auto s : {Strategy::srrl, Strategy::ijckd_penalty}) {
    CAPTURE(to_string(s));
    const auto out = distill({2, 4}, &teacher, data, DistillConfig::defaults(s), cfg);
    REQUIRE(out.student.adapter);
    CHECK(out.student.head_dim() == teacher.head_dim());
    CHECK_FALSE(out.student.g.frozen());
    CHECK(out.initial_frob_dist);
  }
  const auto srrl = distill({2, 4}, &teacher, data, DistillConfig::defaults(Strategy::srrl), cfg);
  REQUIRE(srrl.connector);
  CHECK(srrl.connector->input_dim() == 6);

  // Already matched widths need no adapter.
  const auto pen = distill({2, 6}, &teacher, data, DistillConfig::defaults(Strategy::ijckd_penalty), cfg);
  CHECK_FALSE(pen.student.adapter);

  const auto kd = distill({2, 4}, &teacher, data, DistillConfig::defaults(Strategy::kd), cfg);
  CHECK_FALSE(kd.student.adapter);
  CHECK_FALSE(kd.initial_frob_dist);
}

TEST_CASE("the joint head starts from the teacher's and moves slowly") {
  const auto data = test_support::small_blobs(11);
  const auto teacher = trained_teacher(data);
  auto cfg = short_schedule(1);
  cfg.milestones = {};
  const auto out = distill({2, 4}, &teacher, data, DistillConfig::defaults(Strategy::ijckd_joint), cfg);
  CHECK_FALSE(out.student.g.frozen());
  REQUIRE(out.trace.front().frob_dist);
  CHECK(*out.initial_frob_dist == 0.0);
  CHECK(*out.trace.front().frob_dist > 0.0);
  CHECK(kJointHeadLrScale < 1.0);
}

TEST_CASE("distill config validation") {
  auto c = DistillConfig::defaults(Strategy::ijckd_joint);
  c.alpha = 1.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = DistillConfig::defaults(Strategy::kd);
  c.tau = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = DistillConfig::defaults(Strategy::srrl);
  c.connector_depth = 4;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = DistillConfig::defaults(Strategy::srrl);
  c.beta = -1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK(parse_strategy("ijckd_reuse") == Strategy::ijckd_reuse);
  CHECK_THROWS_AS(parse_strategy("bogus"), ConfigError);
}
