#include "distill_lab/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <random>

#include "distill_lab/errors.hpp"
#include "distill_lab/seed.hpp"

namespace distill_lab {

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("train.batch_size must be >= 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("train.lr must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train.momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) throw ConfigError("train.weight_decay must be >= 0");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("train.gamma must lie in (0, 1]");
  for (std::size_t i = 0; i < milestones.size(); ++i) {
    if (i > 0 && milestones[i] <= milestones[i - 1]) throw ConfigError("train.milestones must be strictly increasing");
    if (milestones[i] >= epochs) throw ConfigError("train.milestones must be < train.epochs");
  }
}

void sgd_step(std::span<Tensor> params, SgdState& state, double lr, const TrainConfig& cfg,
              std::span<const double> lr_scale) {
  if (!lr_scale.empty() && lr_scale.size() != params.size()) {
    throw ConfigError("lr_scale has " + std::to_string(lr_scale.size()) + " entries for " +
                      std::to_string(params.size()) + " parameters");
  }
  if (state.buffers.size() < params.size()) state.buffers.resize(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    if (!p.requires_grad() || !p.has_grad()) continue;
    auto w = p.mutable_data();
    auto g = p.grad();
    for (double v : g) {
      if (!std::isfinite(v)) {
        throw DivergenceError("non-finite gradient in parameter #" + std::to_string(i) + " " + to_string(p.shape()));
      }
    }
    const double rate = lr_scale.empty() ? lr : lr * lr_scale[i];
    auto& buf = state.buffers[i];
    const bool fresh = buf.empty();
    if (fresh && cfg.momentum != 0.0) buf.assign(w.size(), 0.0);
    for (std::size_t k = 0; k < w.size(); ++k) {
      double d = g[k] + cfg.weight_decay * w[k];
      if (cfg.momentum != 0.0) {
        buf[k] = cfg.momentum * buf[k] + d;
        d = cfg.nesterov ? d + cfg.momentum * buf[k] : buf[k];
      }
      w[k] -= rate * d;
    }
  }
}

double lr_at(std::size_t epoch, const TrainConfig& cfg) {
  double lr = cfg.lr;
  for (auto m : cfg.milestones)
    if (m <= epoch) lr *= cfg.gamma;
  return lr;
}

std::optional<double> MetricsRecord::loss(const std::string& name) const {
  for (const auto& t : losses)
    if (t.name == name) return t.value;
  return std::nullopt;
}

std::size_t steps_per_epoch(std::size_t n, const TrainConfig& cfg) {
  const std::size_t steps = (n + cfg.batch_size - 1) / cfg.batch_size;
  return steps > 1 && n % cfg.batch_size == 1 ? steps - 1 : steps;
}

std::vector<MetricsRecord> run_epochs(TrainingProblem& problem, const Dataset& train, const TrainConfig& cfg) {
  cfg.validate();
  const std::size_t n = train.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 shuffler(derive_seed(cfg.seed, salt::shuffle));
  SgdState state;
  std::vector<MetricsRecord> records;
  records.reserve(cfg.epochs);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.shuffle) std::shuffle(order.begin(), order.end(), shuffler);
    const double lr = lr_at(epoch, cfg);
    std::vector<LossTerm> sums;
    std::size_t step = 0;
    const std::size_t steps = steps_per_epoch(n, cfg);
    for (std::size_t start = 0; step < steps; start += cfg.batch_size, ++step) {
      const std::size_t len = step + 1 == steps ? n - start : cfg.batch_size;
      const std::span<const std::size_t> rows(order.data() + start, len);
      const auto x = train.inputs(rows);
      const auto y = train.labels_of(rows);
      for (auto& p : problem.params) p.zero_grad();

      auto out = problem.step(x, y, rows);
      const double total = out.total.item();
      auto context = [&] { return " at epoch " + std::to_string(epoch) + ", step " + std::to_string(step); };
      if (!std::isfinite(total)) throw DivergenceError("non-finite loss" + context());
      for (const auto& t : out.terms)
        if (!std::isfinite(t.value)) throw DivergenceError("non-finite loss term '" + t.name + "'" + context());
      out.total.backward();
      try {
        sgd_step(problem.params, state, lr, cfg, problem.lr_scale);
      } catch (const DivergenceError& e) {
        throw DivergenceError(e.what() + context());
      }

      if (sums.empty()) {
        for (const auto& t : out.terms) sums.push_back({t.name, 0.0});
      }
      const auto weight = static_cast<double>(rows.size());
      for (std::size_t k = 0; k < out.terms.size(); ++k) sums[k].value += weight * out.terms[k].value;
    }
    for (auto& s : sums) s.value /= static_cast<double>(n);

    const auto eval = problem.evaluate();
    records.push_back({epoch, std::move(sums), eval.train_acc, eval.test_acc, eval.frob_dist, lr});
  }
  return records;
}

std::vector<int> argmax_rows(const Tensor& logits) {
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (logits.at(i, j) > logits.at(i, best)) best = j;
    out[i] = static_cast<int>(best);
  }
  return out;
}

double accuracy(const Tensor& logits, std::span<const int> labels) {
  const auto pred = argmax_rows(logits);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

std::string format_double(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

std::string metrics_csv(const std::vector<MetricsRecord>& records) {
  std::string out = "epoch";
  if (!records.empty())
    for (const auto& t : records.front().losses) out += "," + t.name;
  out += ",train_acc,test_acc,frob_dist,lr\n";
  for (const auto& r : records) {
    out += std::to_string(r.epoch);
    for (const auto& t : r.losses) out += "," + format_double(t.value);
    out += "," + format_double(r.train_acc) + "," + format_double(r.test_acc) + ",";
    if (r.frob_dist) out += format_double(*r.frob_dist);
    out += "," + format_double(r.lr_current) + "\n";
  }
  return out;
}

}  // namespace distill_lab
