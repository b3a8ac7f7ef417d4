#pragma once

#include <span>
#include <string>
#include <string_view>

#include "distill_lab/tensor.hpp"

namespace distill_lab {

enum class LossKind { cross_entropy, mse, kd_kl, neg_cosine, feature_match, distance_penalty };

std::string_view to_string(LossKind kind);
/// Throws ConfigError on unknown names.
LossKind parse_loss_kind(std::string_view name);

/// The kinds allowed as a logits matching loss: mse, neg_cosine, cross_entropy.
bool is_logit_matching(LossKind kind);

/// Mean over the batch of -log softmax(o)[i, y_i].
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

/// Mean over all elements of (a - b)^2. Gradient reaches both arguments.
Tensor mse(const Tensor& a, const Tensor& b);

/// tau^2 * mean over rows of KL(softmax(teacher/tau) || softmax(student/tau)).
Tensor kd_kl(const Tensor& student, const Tensor& teacher, double tau);

/// Mean over rows of -<s, t> / (|s| |t|), denominator clamped at 1e-12.
Tensor neg_cosine(const Tensor& student, const Tensor& teacher);

/// Mean over rows of -sum_k softmax(teacher)_k * log_softmax(student)_k.
Tensor soft_cross_entropy(const Tensor& student, const Tensor& teacher);

/// Logits matching between o_s_aux (student features through a teacher-side
/// classifier) and the teacher logits, in the selected family.
Tensor softmax_regression_loss(LossKind kind, const Tensor& student_logits, const Tensor& teacher_logits);

/// mse between connector-aligned student features and teacher features.
Tensor feature_match(const Tensor& student_features, const Tensor& teacher_features);

/// ||W_t - W_s||_F with gradient to W_s only. Bias vectors are not included.
Tensor distance_penalty(const Tensor& teacher_weight, const Tensor& student_weight);

/// sqrt(sum (a - b)^2), accumulated in index order. distance_penalty and the
/// bound probe both evaluate through this, so they agree bit for bit.
double frobenius_sum(std::span<const double> a, std::span<const double> b);

}  // namespace distill_lab
