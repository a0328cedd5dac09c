#pragma once

#include <memory>
#include <span>
#include <vector>

#include "lastshot/learners.hpp"
#include "lastshot/lossfn.hpp"
#include "lastshot/matrix.hpp"
#include "lastshot/tape.hpp"
#include "lastshot/teachers.hpp"

namespace lastshot {

struct DistillConfig {
  double tau = 4.0;      // temperature on the teacher side only
  double lambda = 0.01;  // weight of the plain query-label term
  QueryMode mode = QueryMode::Vanilla;
  double weaken_sigma = 0.1;

  void validate() const {
    if (!(tau > 0.0)) throw ConfigError("distill: tau must be > 0");
    if (!std::isfinite(lambda) || lambda < 0.0)
      throw ConfigError("distill: lambda must be finite and >= 0");
  }
};

/// KL( softmax(teacher/tau) || softmax(student) ). The temperature smooths
/// the teacher only; the student's distribution is untempered.
inline double kl_distill_loss(std::span<const double> student_logits,
                              std::span<const double> teacher_logits,
                              double tau) {
  if (!(tau > 0.0)) throw ConfigError("kl_distill_loss: tau must be > 0");
  if (student_logits.size() != teacher_logits.size())
    throw ShapeError("kl_distill_loss: logit length mismatch");
  std::vector<double> smoothed(teacher_logits.begin(), teacher_logits.end());
  for (double& v : smoothed) v /= tau;
  auto p = softmax(smoothed);
  auto q = softmax(student_logits);
  return kl_divergence(p, q);
}

/// Per-row taped version; teacher logits enter as constants, so no gradient
/// can reach the teacher.
inline Var kl_distill_rows(Tape& t, Var student_logits,
                           const Matrix& teacher_logits, double tau) {
  if (!(tau > 0.0)) throw ConfigError("kl_distill_rows: tau must be > 0");
  const Matrix& s = t.value(student_logits);
  if (s.rows != teacher_logits.rows || s.cols != teacher_logits.cols)
    throw ShapeError("kl_distill_rows: student " + s.shape_str() +
                     " vs teacher " + teacher_logits.shape_str());
  Matrix scaled = teacher_logits;
  for (double& v : scaled.data) v /= tau;
  auto probs = std::make_shared<Matrix>(Tape::softmax_rows_value(scaled));
  return t.kl_vs_const_rows(student_logits, std::move(probs));
}

/// Combined per-episode objective for classification: mean over query
/// examples of KL(teacher || student) + lambda * cross-entropy. Query-mode
/// handling follows the teacher-querying contract; the plain-label term
/// always sees the unmodified query inputs.
inline Var lastshot_episode_loss(Tape& t, const GeneratedModel& model,
                                 const Teacher& teacher,
                                 const ClassificationEpisode& ep,
                                 const DistillConfig& cfg,
                                 RngStream* rng = nullptr) {
  cfg.validate();
  QueryInputs q =
      prepare_query_inputs(ep, cfg.mode, cfg.weaken_sigma, rng, false);
  Matrix teacher_logits = teacher.logits(q.teacher_x);
  if (teacher_logits.cols != static_cast<std::size_t>(ep.way))
    throw EpisodeError("lastshot loss: teacher emits " +
                       std::to_string(teacher_logits.cols) +
                       " classes for a " + std::to_string(ep.way) +
                       "-way episode");
  Var distill_logits = model.outputs(t, t.constant(q.student_x));
  Var kl = kl_distill_rows(t, distill_logits, teacher_logits, cfg.tau);
  Var ce_logits = cfg.mode == QueryMode::WeakenStudent
                      ? model.outputs(t, t.constant(ep.query_x))
                      : distill_logits;
  Var ce = t.ce_rows(ce_logits, ep.query_y);
  return t.mean_all(t.add(kl, t.scale(ce, cfg.lambda)));
}

/// Weighted square distillation for regression. Weights are a softmax over
/// the query set of the teacher's own error, so queries the teacher predicts
/// well dominate; weights sum to 1 and carry no gradient.
inline Var weighted_square_distill(Tape& t, Var student_pred,
                                   const Matrix& teacher_pred,
                                   const Matrix& query_y) {
  const Matrix& sp = t.value(student_pred);
  if (sp.rows == 0) throw EpisodeError("weighted_square_distill: empty query");
  if (sp.cols != 1 || teacher_pred.cols != 1 || query_y.cols != 1 ||
      teacher_pred.rows != sp.rows || query_y.rows != sp.rows)
    throw ShapeError("weighted_square_distill: column-vector shapes expected");
  std::vector<double> neg_err(sp.rows);
  for (std::size_t i = 0; i < sp.rows; ++i) {
    double e = teacher_pred.at(i, 0) - query_y.at(i, 0);
    neg_err[i] = -e * e;
  }
  auto w = softmax(neg_err);
  Matrix weights(sp.rows, 1);
  for (std::size_t i = 0; i < sp.rows; ++i) weights.at(i, 0) = w[i];
  Var diff = t.sub(t.constant(teacher_pred), student_pred);
  return t.sum_all(t.mul(t.constant(std::move(weights)), t.square(diff)));
}

/// Combined per-episode objective for regression: weighted square
/// distillation + lambda * mean squared error on the true query labels.
inline Var lastshot_regression_loss(Tape& t, const GeneratedModel& model,
                                    const Teacher& teacher,
                                    const RegressionEpisode& ep,
                                    const DistillConfig& cfg,
                                    RngStream* rng = nullptr) {
  cfg.validate();
  Matrix qx = xs_matrix(ep.query);
  Matrix qy = ys_matrix(ep.query);
  QueryInputs q = prepare_query_inputs_regression(qx, cfg.mode,
                                                  cfg.weaken_sigma, rng, false);
  Matrix teacher_pred = teacher.regress_batch(q.teacher_x);
  Var distill_pred = model.outputs(t, t.constant(q.student_x));
  Var distill = weighted_square_distill(t, distill_pred, teacher_pred, qy);
  Var plain_pred = cfg.mode == QueryMode::WeakenStudent
                       ? model.outputs(t, t.constant(qx))
                       : distill_pred;
  Var mse = t.mean_all(t.square(t.sub(plain_pred, t.constant(qy))));
  return t.add(distill, t.scale(mse, cfg.lambda));
}

/// Parameter-space baseline: squared Euclidean distance between the
/// generated head's parameters and the target's (last linear layer only).
inline double model_regression_loss(const std::vector<double>& generated,
                                    const std::vector<double>& target) {
  if (generated.size() != target.size())
    throw ShapeError("model_regression_loss: layouts differ (" +
                     std::to_string(generated.size()) + " vs " +
                     std::to_string(target.size()) + ")");
  double s = 0.0;
  for (std::size_t i = 0; i < generated.size(); ++i) {
    double d = generated[i] - target[i];
    s += d * d;
  }
  return s;
}

inline Var model_regression_loss(Tape& t, Var generated, const Matrix& target) {
  const Matrix& g = t.value(generated);
  if (!g.same_shape(target))
    throw ShapeError("model_regression_loss: " + g.shape_str() + " vs " +
                     target.shape_str());
  return t.sum_all(t.square(t.sub(generated, t.constant(target))));
}

}  // namespace lastshot
