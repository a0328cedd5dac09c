#pragma once

#include <string>
#include <vector>

#include "lastshot/classworld.hpp"
#include "lastshot/matrix.hpp"
#include "lastshot/mlp.hpp"
#include "lastshot/sine.hpp"
#include "lastshot/tape.hpp"

namespace lastshot {

enum class LearnerKind : std::uint8_t {
  ProtoNet,
  Maml,
  ProtoMaml,
  RidgeHead,
  KernelRegressor,
};

inline const char* learner_name(LearnerKind k) {
  switch (k) {
    case LearnerKind::ProtoNet: return "protonet";
    case LearnerKind::Maml: return "maml";
    case LearnerKind::ProtoMaml: return "protomaml";
    case LearnerKind::RidgeHead: return "ridge";
    case LearnerKind::KernelRegressor: return "kernel";
  }
  return "?";
}

enum class MetaGradMode : std::uint8_t { FirstOrder, Exact };

struct LearnerConfig {
  LearnerKind kind = LearnerKind::ProtoNet;
  double inner_lr = 0.01;
  int inner_steps = 1;
  double ridge_rho = 1.0;
  MetaGradMode meta_grad = MetaGradMode::FirstOrder;

  /// Generation-time rules; an inner_lr of 0 is a valid degenerate update.
  void validate_generation() const {
    bool inner_loop = kind == LearnerKind::Maml || kind == LearnerKind::ProtoMaml;
    if (inner_loop && inner_lr < 0.0)
      throw ConfigError("learner: inner_lr must be >= 0");
    if (kind == LearnerKind::RidgeHead && ridge_rho <= 0.0)
      throw ConfigError("learner: ridge_rho must be > 0");
    if (inner_loop && meta_grad == MetaGradMode::Exact && inner_steps > 1)
      throw ConfigError(
          "learner: exact meta-gradients support a single inner step only");
    if (inner_steps < 0) throw ConfigError("learner: inner_steps < 0");
  }

  /// Full training-config rules.
  void validate() const {
    validate_generation();
    bool inner_loop = kind == LearnerKind::Maml || kind == LearnerKind::ProtoMaml;
    if (inner_loop && inner_lr <= 0.0)
      throw ConfigError("learner: inner_lr must be > 0");
  }
};

/// One episode's adaptation data, for either task family.
struct SupportSet {
  Matrix x;                 // n x in_dim
  std::vector<int> labels;  // classification: local labels
  Matrix targets;           // regression: n x 1
  int way = 0;
  bool classification = true;

  static SupportSet from(const ClassificationEpisode& ep) {
    SupportSet s;
    s.x = ep.support_x;
    s.labels = ep.support_y;
    s.way = ep.way;
    s.classification = true;
    return s;
  }
  static SupportSet from(const RegressionEpisode& ep) {
    SupportSet s;
    s.x = xs_matrix(ep.support);
    s.targets = ys_matrix(ep.support);
    s.classification = false;
    return s;
  }
};

enum class GeneratedKind : std::uint8_t {
  ProtoHead,
  AdaptedNet,
  RidgeHead,
  KernelRegressor,
};

/// Negative squared Euclidean distances between rows of `qf` (N x d) and rows
/// of `centers` (C x d): logits[i][c] = -(|q_i|^2 - 2 q_i.c + |c|^2).
inline Var neg_squared_dist(Tape& t, Var qf, Var centers) {
  Var cross = t.scale(t.matmul(qf, centers, false, true), 2.0);
  Var qn = t.row_sum(t.square(qf));                    // N x 1
  Var cn = t.transpose(t.row_sum(t.square(centers)));  // 1 x C
  return t.add_colvec(t.add_rowvec(cross, t.scale(cn, -1.0)),
                      t.scale(qn, -1.0));
}

/// Per-class mean matrix: (way x n) constant with 1/count_c weights.
inline Var class_mean_operator(Tape& t, const std::vector<int>& labels,
                               int way) {
  std::vector<double> counts(static_cast<std::size_t>(way), 0.0);
  for (int y : labels) {
    if (y < 0 || y >= way) throw EpisodeError("class_mean: label out of range");
    counts[static_cast<std::size_t>(y)] += 1.0;
  }
  for (int c = 0; c < way; ++c)
    if (counts[static_cast<std::size_t>(c)] == 0.0)
      throw EpisodeError("class_mean: class " + std::to_string(c) +
                         " has no support instance");
  Matrix a(static_cast<std::size_t>(way), labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i)
    a.at(static_cast<std::size_t>(labels[i]), i) =
        1.0 / counts[static_cast<std::size_t>(labels[i])];
  return t.constant(std::move(a));
}

/// The classifier/regressor h = A(D_support), built on a tape so its query
/// outputs stay differentiable with respect to the learner's meta-parameters.
struct GeneratedModel {
  GeneratedKind kind = GeneratedKind::ProtoHead;
  MlpNodes encoder;     // feature net (ProtoHead / RidgeHead / Kernel / ProtoMaml)
  MlpNodes adapted;     // full adapted net (Maml) or adapted encoder (ProtoMaml)
  bool has_linear_head = false;
  Var head_w, head_b;   // ProtoMaml adapted head
  Var prototypes;       // ProtoHead: way x feat
  Var ridge_w;          // RidgeHead: (feat+1) x out
  Var support_feats;    // Kernel: K x feat
  Var support_targets;  // Kernel: K x 1 (constant)

  /// Query outputs: classification logits (N x C) or regression values (N x 1).
  Var outputs(Tape& t, Var x) const {
    switch (kind) {
      case GeneratedKind::ProtoHead:
        return neg_squared_dist(t, mlp_forward(t, encoder, x), prototypes);
      case GeneratedKind::AdaptedNet: {
        Var h = mlp_forward(t, adapted, x);
        if (has_linear_head)
          h = t.add_rowvec(t.matmul(h, head_w), head_b);
        return h;
      }
      case GeneratedKind::RidgeHead:
        return t.matmul(t.append_ones_col(mlp_forward(t, encoder, x)), ridge_w);
      case GeneratedKind::KernelRegressor: {
        Var qf = mlp_forward(t, encoder, x);
        Var weights = t.softmax_rows(neg_squared_dist(t, qf, support_feats));
        return t.matmul(weights, support_targets);
      }
    }
    throw EpisodeError("outputs: unknown generated kind");
  }
};

inline GeneratedModel protonet_generate(Tape& t, const MlpNodes& enc,
                                        const SupportSet& s) {
  if (!s.classification)
    throw ConfigError("protonet: classification only (kernel handles regression)");
  GeneratedModel m;
  m.kind = GeneratedKind::ProtoHead;
  m.encoder = enc;
  Var sf = mlp_forward(t, enc, t.constant(s.x));
  m.prototypes = t.matmul(class_mean_operator(t, s.labels, s.way), sf);
  return m;
}

inline GeneratedModel kernel_regressor_generate(Tape& t, const MlpNodes& enc,
                                                const SupportSet& s) {
  if (s.classification)
    throw ConfigError("kernel regressor: regression only");
  if (s.x.rows == 0) throw EpisodeError("kernel regressor: empty support");
  GeneratedModel m;
  m.kind = GeneratedKind::KernelRegressor;
  m.encoder = enc;
  m.support_feats = mlp_forward(t, enc, t.constant(s.x));
  m.support_targets = t.constant(s.targets);
  return m;
}

namespace detail {

inline Var support_loss(Tape& t, const MlpNodes& net, const SupportSet& s,
                        bool with_head, Var w, Var b) {
  Var pred = mlp_forward(t, net, t.constant(s.x));
  if (with_head) pred = t.add_rowvec(t.matmul(pred, w), b);
  if (s.classification) return t.mean_all(t.ce_rows(pred, s.labels));
  return t.mean_all(t.square(t.sub(pred, t.constant(s.targets))));
}

inline MlpNodes update_net(Tape& t, const MlpNodes& net,
                           const std::vector<Var>& grads, double alpha,
                           bool detach) {
  MlpNodes out;
  out.hidden_acts = net.hidden_acts;
  std::size_t k = 0;
  for (const auto& [w, b] : net.layers) {
    Var gw = detach ? t.detach(grads[k]) : grads[k];
    Var gb = detach ? t.detach(grads[k + 1]) : grads[k + 1];
    out.layers.emplace_back(t.sub(w, t.scale(gw, alpha)),
                            t.sub(b, t.scale(gb, alpha)));
    k += 2;
  }
  return out;
}

}  // namespace detail

/// MAML: the full network (features + final linear layer inside `net`) takes
/// `inner_steps` gradient steps on the support loss. FirstOrder detaches the
/// inner gradients; Exact differentiates through the single update.
inline GeneratedModel maml_generate(Tape& t, const MlpNodes& net,
                                    const SupportSet& s,
                                    const LearnerConfig& cfg) {
  cfg.validate_generation();
  MlpNodes current = net;
  for (int step = 0; step < cfg.inner_steps; ++step) {
    Var loss = detail::support_loss(t, current, s, false, Var{}, Var{});
    std::vector<Var> grads = t.grad(loss, current.all());
    bool detach = cfg.meta_grad == MetaGradMode::FirstOrder;
    current = detail::update_net(t, current, grads, cfg.inner_lr, detach);
  }
  GeneratedModel m;
  m.kind = GeneratedKind::AdaptedNet;
  m.adapted = current;
  return m;
}

/// ProtoMAML: linear head initialized from prototypes (w_c = 2 mu_c,
/// b_c = -|mu_c|^2, the expansion of the squared distance), then MAML-style
/// inner updates on head and encoder together.
inline GeneratedModel protomaml_generate(Tape& t, const MlpNodes& enc,
                                         const SupportSet& s,
                                         const LearnerConfig& cfg) {
  cfg.validate_generation();
  if (!s.classification)
    throw ConfigError("protomaml: classification only");
  Var sf = mlp_forward(t, enc, t.constant(s.x));
  Var protos = t.matmul(class_mean_operator(t, s.labels, s.way), sf);
  Var w = t.transpose(t.scale(protos, 2.0));                     // feat x C
  Var b = t.scale(t.transpose(t.row_sum(t.square(protos))), -1.0);  // 1 x C

  MlpNodes cur_enc = enc;
  for (int step = 0; step < cfg.inner_steps; ++step) {
    Var loss = detail::support_loss(t, cur_enc, s, true, w, b);
    std::vector<Var> wrt = cur_enc.all();
    wrt.push_back(w);
    wrt.push_back(b);
    // Head init depends on the encoder; the inner step uses partials that
    // treat (encoder, head) as independent parameters.
    std::vector<Var> grads = t.grad(loss, wrt, /*stop=*/{w, b});
    bool detach = cfg.meta_grad == MetaGradMode::FirstOrder;
    std::vector<Var> enc_grads(grads.begin(), grads.end() - 2);
    cur_enc = detail::update_net(t, cur_enc, enc_grads, cfg.inner_lr, detach);
    Var gw = detach ? t.detach(grads[grads.size() - 2]) : grads[grads.size() - 2];
    Var gb = detach ? t.detach(grads[grads.size() - 1]) : grads[grads.size() - 1];
    w = t.sub(w, t.scale(gw, cfg.inner_lr));
    b = t.sub(b, t.scale(gb, cfg.inner_lr));
  }
  GeneratedModel m;
  m.kind = GeneratedKind::AdaptedNet;
  m.adapted = cur_enc;
  m.has_linear_head = true;
  m.head_w = w;
  m.head_b = b;
  return m;
}

/// Ridge head on features with an appended constant-1 column:
/// W = (Phi^T Phi + rho I)^-1 Phi^T Y.
inline GeneratedModel ridge_generate(Tape& t, const MlpNodes& enc,
                                     const SupportSet& s,
                                     const LearnerConfig& cfg) {
  cfg.validate_generation();
  GeneratedModel m;
  m.kind = GeneratedKind::RidgeHead;
  m.encoder = enc;
  Var phi = t.append_ones_col(mlp_forward(t, enc, t.constant(s.x)));
  Matrix y;
  if (s.classification) {
    y = Matrix(s.x.rows, static_cast<std::size_t>(s.way));
    for (std::size_t i = 0; i < s.labels.size(); ++i)
      y.at(i, static_cast<std::size_t>(s.labels[i])) = 1.0;
  } else {
    y = s.targets;
  }
  m.ridge_w = t.ridge_solve(phi, t.constant(y), cfg.ridge_rho);
  return m;
}

inline GeneratedModel generate(Tape& t, const LearnerConfig& cfg,
                               const MlpNodes& params, const SupportSet& s) {
  switch (cfg.kind) {
    case LearnerKind::ProtoNet:
      if (!s.classification) return kernel_regressor_generate(t, params, s);
      return protonet_generate(t, params, s);
    case LearnerKind::KernelRegressor:
      return kernel_regressor_generate(t, params, s);
    case LearnerKind::Maml:
      return maml_generate(t, params, s, cfg);
    case LearnerKind::ProtoMaml:
      return protomaml_generate(t, params, s, cfg);
    case LearnerKind::RidgeHead:
      return ridge_generate(t, params, s, cfg);
  }
  throw ConfigError("generate: unknown learner kind");
}

/// Non-parametric regression readout used by the embedding learners:
/// y_hat = sum_k softmax_k(-|f(x) - f(x_k)|^2) y_k.
inline double kernel_regress(const MlpParams& params,
                             const std::vector<std::pair<double, double>>& support,
                             double x) {
  if (support.empty()) throw EpisodeError("kernel_regress: empty support");
  Tape t;
  MlpNodes enc = lift(t, params, false);
  SupportSet s;
  s.classification = false;
  s.x = Matrix(support.size(), 1);
  s.targets = Matrix(support.size(), 1);
  for (std::size_t i = 0; i < support.size(); ++i) {
    s.x.at(i, 0) = support[i].first;
    s.targets.at(i, 0) = support[i].second;
  }
  GeneratedModel m = kernel_regressor_generate(t, enc, s);
  Var out = m.outputs(t, t.constant(Matrix::full(1, 1, x)));
  return t.value(out).at(0, 0);
}

}  // namespace lastshot
