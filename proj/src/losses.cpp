#include "distill_lab/losses.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <vector>

#include "distill_lab/errors.hpp"
#include "distill_lab/ops.hpp"

namespace distill_lab {

namespace {

constexpr double kCosineEps = 1e-12;

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

void require_matrix(const char* op, const Tensor& a) {
  if (a.rank() != 2) throw DimensionError(std::string(op) + " expects [n x C], got " + to_string(a.shape()));
}

// Row-wise softmax of (values / tau) written into out; returns per-row logsumexp.
std::vector<double> softmax_rows(std::span<const double> values, std::size_t rows, std::size_t cols, double tau,
                                 std::vector<double>& out) {
  out.resize(values.size());
  std::vector<double> lse(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = values.data() + r * cols;
    double mx = in[0] / tau;
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, in[j] / tau);
    double z = 0.0;
    for (std::size_t j = 0; j < cols; ++j) z += (out[r * cols + j] = std::exp(in[j] / tau - mx));
    for (std::size_t j = 0; j < cols; ++j) out[r * cols + j] /= z;
    lse[r] = mx + std::log(z);
  }
  return lse;
}

}  // namespace

std::string_view to_string(LossKind kind) {
  switch (kind) {
    case LossKind::cross_entropy: return "cross_entropy";
    case LossKind::mse: return "mse";
    case LossKind::kd_kl: return "kd_kl";
    case LossKind::neg_cosine: return "neg_cosine";
    case LossKind::feature_match: return "feature_match";
    case LossKind::distance_penalty: return "distance_penalty";
  }
  return "?";
}

LossKind parse_loss_kind(std::string_view name) {
  for (auto k : {LossKind::cross_entropy, LossKind::mse, LossKind::kd_kl, LossKind::neg_cosine,
                 LossKind::feature_match, LossKind::distance_penalty}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown loss kind '" + std::string(name) + "'");
}

bool is_logit_matching(LossKind kind) {
  return kind == LossKind::mse || kind == LossKind::neg_cosine || kind == LossKind::cross_entropy;
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_matrix("cross_entropy", logits);
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  if (labels.size() != n) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) +
                         " rows");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= c) {
      throw LabelError("label " + std::to_string(y) + " outside [0, " + std::to_string(c) + ")");
    }
  }
  auto probs = std::make_shared<std::vector<double>>();
  const auto lse = softmax_rows(logits.data(), n, c, 1.0, *probs);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += lse[i] - logits.data()[i * c + labels[i]];
  std::vector<int> ys(labels.begin(), labels.end());
  return Tensor::make_result("cross_entropy", {}, {total / static_cast<double>(n)}, {logits},
                             [probs, ys = std::move(ys), n, c](std::span<const double> g, auto sinks) {
                               auto& s = *sinks[0];
                               const double k = g[0] / static_cast<double>(n);
                               for (std::size_t i = 0; i < n; ++i) {
                                 for (std::size_t j = 0; j < c; ++j) s[i * c + j] += k * (*probs)[i * c + j];
                                 s[i * c + ys[i]] -= k;
                               }
                             });
}

Tensor mse(const Tensor& a, const Tensor& b) {
  require_same_shape("mse", a, b);
  const std::size_t count = a.numel();
  if (count == 0) throw DimensionError("mse of empty tensors");
  auto diff = std::make_shared<std::vector<double>>(count);
  double total = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const double d = a.data()[i] - b.data()[i];
    (*diff)[i] = d;
    total += d * d;
  }
  return Tensor::make_result("mse", {}, {total / static_cast<double>(count)}, {a, b},
                             [diff, count](std::span<const double> g, auto sinks) {
                               const double k = 2.0 * g[0] / static_cast<double>(count);
                               if (sinks[0])
                                 for (std::size_t i = 0; i < count; ++i) (*sinks[0])[i] += k * (*diff)[i];
                               if (sinks[1])
                                 for (std::size_t i = 0; i < count; ++i) (*sinks[1])[i] -= k * (*diff)[i];
                             });
}

Tensor kd_kl(const Tensor& student, const Tensor& teacher, double tau) {
  if (!(tau > 0.0)) throw ParameterError("kd temperature must be > 0, got " + std::to_string(tau));
  require_matrix("kd_kl", student);
  require_same_shape("kd_kl", student, teacher);
  const std::size_t n = student.dim(0), c = student.dim(1);
  std::vector<double> p_t;
  auto q = std::make_shared<std::vector<double>>();
  const auto lse_t = softmax_rows(teacher.data(), n, c, tau, p_t);
  const auto lse_s = softmax_rows(student.data(), n, c, tau, *q);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      const double p = p_t[i * c + j];
      if (p == 0.0) continue;
      const double log_p = teacher.data()[i * c + j] / tau - lse_t[i];
      const double log_q = student.data()[i * c + j] / tau - lse_s[i];
      total += p * (log_p - log_q);
    }
  }
  const double value = tau * tau * total / static_cast<double>(n);
  return Tensor::make_result("kd_kl", {}, {value}, {student},
                             [q, p_t = std::move(p_t), n, tau](std::span<const double> g, auto sinks) {
                               auto& s = *sinks[0];
                               const double k = g[0] * tau / static_cast<double>(n);
                               for (std::size_t i = 0; i < s.size(); ++i) s[i] += k * ((*q)[i] - p_t[i]);
                             });
}

Tensor neg_cosine(const Tensor& student, const Tensor& teacher) {
  require_matrix("neg_cosine", student);
  require_same_shape("neg_cosine", student, teacher);
  const std::size_t n = student.dim(0), c = student.dim(1);
  auto ps = student.data();
  auto pt = teacher.data();
  // Per row: norm of s, norm of t, cosine, clamped denominator.
  auto rows = std::make_shared<std::vector<std::array<double, 4>>>(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double ss = 0.0, tt = 0.0, st = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      ss += ps[i * c + j] * ps[i * c + j];
      tt += pt[i * c + j] * pt[i * c + j];
      st += ps[i * c + j] * pt[i * c + j];
    }
    const double a = std::sqrt(ss), b = std::sqrt(tt);
    const double denom = std::max(a * b, kCosineEps);
    const double cosine = st / denom;
    (*rows)[i] = {a, b, cosine, denom};
    total -= cosine;
  }
  std::vector<double> t_copy(pt.begin(), pt.end());
  std::vector<double> s_copy(ps.begin(), ps.end());
  return Tensor::make_result(
      "neg_cosine", {}, {total / static_cast<double>(n)}, {student},
      [rows, t_copy = std::move(t_copy), s_copy = std::move(s_copy), n, c](std::span<const double> g, auto sinks) {
        auto& s = *sinks[0];
        const double k = -g[0] / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
          const auto [a, b, cosine, denom] = (*rows)[i];
          const bool clamped = a * b < kCosineEps;
          for (std::size_t j = 0; j < c; ++j) {
            // d cos / d s = t / (|s||t|) - cos * s / |s|^2
            double d = t_copy[i * c + j] / denom;
            if (!clamped) d -= cosine * s_copy[i * c + j] / (a * a);
            s[i * c + j] += k * d;
          }
        }
      });
}

Tensor soft_cross_entropy(const Tensor& student, const Tensor& teacher) {
  require_matrix("soft_cross_entropy", student);
  require_same_shape("soft_cross_entropy", student, teacher);
  const std::size_t n = student.dim(0), c = student.dim(1);
  std::vector<double> p_t;
  auto q = std::make_shared<std::vector<double>>();
  softmax_rows(teacher.data(), n, c, 1.0, p_t);
  const auto lse_s = softmax_rows(student.data(), n, c, 1.0, *q);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) total -= p_t[i * c + j] * (student.data()[i * c + j] - lse_s[i]);
  return Tensor::make_result("soft_cross_entropy", {}, {total / static_cast<double>(n)}, {student},
                             [q, p_t = std::move(p_t), n](std::span<const double> g, auto sinks) {
                               auto& s = *sinks[0];
                               const double k = g[0] / static_cast<double>(n);
                               for (std::size_t i = 0; i < s.size(); ++i) s[i] += k * ((*q)[i] - p_t[i]);
                             });
}

Tensor softmax_regression_loss(LossKind kind, const Tensor& student_logits, const Tensor& teacher_logits) {
  switch (kind) {
    case LossKind::mse: return mse(student_logits, teacher_logits.detach());
    case LossKind::neg_cosine: return neg_cosine(student_logits, teacher_logits);
    case LossKind::cross_entropy: return soft_cross_entropy(student_logits, teacher_logits);
    default:
      throw ConfigError("'" + std::string(to_string(kind)) +
                        "' is not a logits matching loss (use mse, neg_cosine or cross_entropy)");
  }
}

Tensor feature_match(const Tensor& student_features, const Tensor& teacher_features) {
  return mse(student_features, teacher_features.detach());
}

double frobenius_sum(std::span<const double> a, std::span<const double> b) {
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    total += d * d;
  }
  return std::sqrt(total);
}

Tensor distance_penalty(const Tensor& teacher_weight, const Tensor& student_weight) {
  if (teacher_weight.shape() != student_weight.shape()) {
    throw ConfigError("penalty variant requires equal classifier shapes: teacher " +
                      to_string(teacher_weight.shape()) + ", student " + to_string(student_weight.shape()));
  }
  const double value = frobenius_sum(teacher_weight.data(), student_weight.data());
  std::vector<double> wt(teacher_weight.data().begin(), teacher_weight.data().end());
  std::vector<double> ws(student_weight.data().begin(), student_weight.data().end());
  return Tensor::make_result("distance_penalty", {}, {value}, {student_weight},
                             [wt = std::move(wt), ws = std::move(ws), value](std::span<const double> g, auto sinks) {
                               if (value == 0.0) return;  // subgradient 0 at the minimum
                               auto& s = *sinks[0];
                               for (std::size_t i = 0; i < s.size(); ++i) s[i] += g[0] * (ws[i] - wt[i]) / value;
                             });
}

}  // namespace distill_lab
