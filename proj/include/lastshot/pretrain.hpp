#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "lastshot/classworld.hpp"
#include "lastshot/lossfn.hpp"
#include "lastshot/matrix.hpp"
#include "lastshot/mlp.hpp"
#include "lastshot/optim.hpp"
#include "lastshot/rng.hpp"
#include "lastshot/tape.hpp"

namespace lastshot {

enum class PreprocessMode : std::uint8_t { None, Center, CenterL2 };

inline const char* preprocess_name(PreprocessMode m) {
  switch (m) {
    case PreprocessMode::None: return "none";
    case PreprocessMode::Center: return "center";
    case PreprocessMode::CenterL2: return "center_l2";
  }
  return "?";
}

struct PretrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 128;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;      // L2 penalty added to the loss
  double lr_decay_factor = 0.1;    // one decay at 2/3 of the epochs
  std::size_t val_tasks = 200;     // 1-shot C-way tasks, C = val split size
  int val_queries = 15;
  std::vector<std::size_t> encoder_hidden = {64, 64};
  Activation encoder_act = Activation::ReLU;
  bool track_pool_ce = false;      // record full-pool CE at epoch boundaries
};

/// The B-way base classifier: encoder f (shared with the few-shot learner)
/// plus a linear head W. Also owns the pre-extracted base-pool features.
struct PretrainedModel {
  MlpParams encoder;
  Matrix head;  // feat_dim x B

  Matrix feature_cache;        // pool_size x feat_dim, row-aligned with pool
  bool cache_ready = false;
  Matrix class_feature_means;  // B x feat_dim, from the full cached pool
  Matrix base_feature_mean;    // 1 x feat_dim
  std::size_t num_base = 0;
  mutable std::uint64_t forward_ops = 0;  // instrumentation for tests

  std::size_t feat_dim() const { return encoder.out_dim(); }

  Matrix encode(const Matrix& x) const {
    ++forward_ops;
    return mlp_forward(encoder, x);
  }
};

struct PretrainResult {
  PretrainedModel model;
  std::vector<double> epoch_losses;   // running mean batch CE per epoch
  std::vector<double> pool_ce;        // full-pool CE: [0] initial, [k] after epoch k
  std::vector<double> val_accuracies; // per-epoch 1-shot validation accuracy
  std::size_t best_epoch = 0;
};

/// Full-pool cross entropy of W^T f(x), no gradients.
inline double base_pool_cross_entropy(const MlpParams& encoder,
                                      const Matrix& head,
                                      const BasePool& pool) {
  Matrix logits = matmul(mlp_forward(encoder, pool.x), head);
  double s = 0.0;
  for (std::size_t i = 0; i < logits.rows; ++i) {
    std::span<const double> row(logits.row_ptr(i), logits.cols);
    s += cross_entropy(row, static_cast<std::size_t>(pool.labels[i]));
  }
  return s / static_cast<double>(logits.rows);
}

namespace detail {

/// Nearest-centroid episode accuracy from raw features (ProtoNet rule).
inline double nearest_centroid_accuracy(const Matrix& support_f,
                                        const std::vector<int>& support_y,
                                        const Matrix& query_f,
                                        const std::vector<int>& query_y,
                                        int way) {
  Matrix proto(static_cast<std::size_t>(way), support_f.cols);
  std::vector<double> count(way, 0.0);
  for (std::size_t i = 0; i < support_f.rows; ++i) {
    int c = support_y[i];
    count[c] += 1.0;
    for (std::size_t d = 0; d < support_f.cols; ++d)
      proto.at(c, d) += support_f.at(i, d);
  }
  for (int c = 0; c < way; ++c)
    for (std::size_t d = 0; d < proto.cols; ++d) proto.at(c, d) /= count[c];

  std::size_t hits = 0;
  for (std::size_t i = 0; i < query_f.rows; ++i) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int c = 0; c < way; ++c) {
      double d2 = 0.0;
      for (std::size_t d = 0; d < query_f.cols; ++d) {
        double t = query_f.at(i, d) - proto.at(c, d);
        d2 += t * t;
      }
      if (d2 < best_d) {
        best_d = d2;
        best = c;
      }
    }
    if (best == query_y[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(query_f.rows);
}

}  // namespace detail

/// Minimizes cross-entropy of W^T f(x) over the base pool; validates after
/// each epoch with 1-shot C-way nearest-centroid tasks on the val split and
/// keeps the best encoder/head pair.
inline PretrainResult pretrain_base_classifier(const ClassWorld& world,
                                               const BasePool& pool,
                                               const PretrainConfig& cfg,
                                               std::uint64_t seed) {
  const std::size_t B = world.cfg.base_classes;
  if (B < 2)
    throw TrainingError(
        "pretrain: needs >= 2 base classes, cross-entropy over one class is "
        "vacuous");
  if (pool.size() == 0) throw TrainingError("pretrain: empty base pool");

  PretrainResult res;
  RngStream init_rng = domain_stream(seed, RngDomain::ParamInit);
  std::vector<std::size_t> dims;
  dims.push_back(world.cfg.obs_dim);
  for (std::size_t h : cfg.encoder_hidden) dims.push_back(h);
  res.model.encoder =
      MlpParams::init_uniform_act(dims, cfg.encoder_act, init_rng);
  const std::size_t feat = res.model.encoder.out_dim();
  res.model.head = Matrix(feat, B);
  {
    double bound = std::sqrt(6.0 / static_cast<double>(feat + B));
    for (double& v : res.model.head.data) v = init_rng.uniform(-bound, bound);
  }
  res.model.num_base = B;

  MlpParams encoder = res.model.encoder;
  Matrix head = res.model.head;
  const std::size_t n_params = encoder.param_count() + head.size();
  SgdMomentumState opt(n_params, cfg.lr, cfg.momentum);

  auto flatten_all = [&](const MlpParams& e, const Matrix& h) {
    std::vector<double> flat = e.flatten();
    flat.insert(flat.end(), h.data.begin(), h.data.end());
    return flat;
  };
  auto unflatten_all = [&](const std::vector<double>& flat, MlpParams& e,
                           Matrix& h) {
    std::vector<double> enc_part(flat.begin(),
                                 flat.begin() + static_cast<std::ptrdiff_t>(
                                                    e.param_count()));
    e.unflatten(enc_part);
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(e.param_count()),
              flat.end(), h.data.begin());
  };

  std::vector<double> params = flatten_all(encoder, head);
  const std::size_t decay_epoch = cfg.epochs * 2 / 3;
  double best_val = -1.0;

  std::vector<std::size_t> order(pool.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  if (cfg.track_pool_ce)
    res.pool_ce.push_back(base_pool_cross_entropy(encoder, head, pool));

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (epoch == decay_epoch && epoch > 0)
      opt.learning_rate = cfg.lr * cfg.lr_decay_factor;

    RngStream shuffle_rng =
        domain_stream(seed, RngDomain::PretrainShuffle, epoch);
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.below(i)]);

    double epoch_ce = 0.0;
    std::size_t epoch_rows = 0;
    for (std::size_t start = 0; start < order.size();
         start += cfg.batch_size) {
      std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      Matrix x(stop - start, world.cfg.obs_dim);
      std::vector<int> y(stop - start);
      for (std::size_t i = start; i < stop; ++i) {
        std::size_t r = order[i];
        std::copy(pool.x.row_ptr(r), pool.x.row_ptr(r) + pool.x.cols,
                  x.row_ptr(i - start));
        y[i - start] = pool.labels[r];  // base ids are 0..B-1
      }

      unflatten_all(params, encoder, head);
      Tape tape;
      MlpNodes enc_nodes = lift(tape, encoder, true);
      Var head_node = tape.leaf(head, true);
      Var feats = mlp_forward(tape, enc_nodes, tape.constant(x));
      Var logits = tape.matmul(feats, head_node);
      Var ce = tape.mean_all(tape.ce_rows(logits, y));
      Var penalty = tape.constant_scalar(0.0);
      for (Var p : enc_nodes.all())
        penalty = tape.add(penalty, tape.sum_all(tape.square(p)));
      penalty = tape.add(penalty, tape.sum_all(tape.square(head_node)));
      Var loss =
          tape.add(ce, tape.scale(penalty, 0.5 * cfg.weight_decay));

      double loss_v;
      try {
        loss_v = tape.scalar(loss);
      } catch (const NumericError& e) {
        throw TrainingError("pretrain diverged at epoch " +
                            std::to_string(epoch) + ": " + e.what());
      }
      epoch_ce += tape.scalar(ce) * static_cast<double>(stop - start);
      epoch_rows += stop - start;
      (void)loss_v;

      std::vector<Var> wrt = enc_nodes.all();
      wrt.push_back(head_node);
      std::vector<Var> gs = tape.grad(loss, wrt);
      std::vector<double> grad;
      grad.reserve(n_params);
      for (Var g : gs) {
        const Matrix& gm = tape.value(g);
        grad.insert(grad.end(), gm.data.begin(), gm.data.end());
      }
      opt.step(params, grad);
      if (!std::all_of(params.begin(), params.end(),
                       [](double v) { return std::isfinite(v); }))
        throw TrainingError("pretrain diverged at epoch " +
                            std::to_string(epoch));
    }
    res.epoch_losses.push_back(epoch_ce / static_cast<double>(epoch_rows));
    unflatten_all(params, encoder, head);
    if (cfg.track_pool_ce)
      res.pool_ce.push_back(base_pool_cross_entropy(encoder, head, pool));

    // Validation: 1-shot C-way nearest centroid, C = size of the val split.
    const int val_c = static_cast<int>(world.split_size(Split::Val));
    double acc_sum = 0.0;
    for (std::size_t t = 0; t < cfg.val_tasks; ++t) {
      RngStream ep_rng =
          domain_stream(seed, RngDomain::PretrainValTask, epoch, t);
      ClassificationEpisode ep = sample_classification_episode(
          world, Split::Val, val_c, 1, cfg.val_queries, ep_rng);
      Matrix sf = mlp_forward(encoder, ep.support_x);
      Matrix qf = mlp_forward(encoder, ep.query_x);
      acc_sum += detail::nearest_centroid_accuracy(sf, ep.support_y, qf,
                                                   ep.query_y, val_c);
    }
    double val_acc = acc_sum / static_cast<double>(cfg.val_tasks);
    res.val_accuracies.push_back(val_acc);
    if (val_acc > best_val) {
      best_val = val_acc;
      res.best_epoch = epoch;
      res.model.encoder = encoder;
      res.model.head = head;
    }
  }
  return res;
}

/// Populates the feature cache over the base pool; idempotent.
inline void extract_features(PretrainedModel& model, const BasePool& pool) {
  if (model.cache_ready) return;
  model.feature_cache = model.encode(pool.x);
  const std::size_t feat = model.feat_dim();
  model.class_feature_means = Matrix(model.num_base, feat);
  model.base_feature_mean = Matrix(1, feat);
  std::vector<double> counts(model.num_base, 0.0);
  for (std::size_t i = 0; i < pool.size(); ++i) {
    int c = pool.labels[i];
    counts[static_cast<std::size_t>(c)] += 1.0;
    for (std::size_t d = 0; d < feat; ++d) {
      model.class_feature_means.at(c, d) += model.feature_cache.at(i, d);
      model.base_feature_mean.at(0, d) += model.feature_cache.at(i, d);
    }
  }
  for (std::size_t c = 0; c < model.num_base; ++c)
    for (std::size_t d = 0; d < feat; ++d)
      model.class_feature_means.at(c, d) /= counts[c];
  for (std::size_t d = 0; d < feat; ++d)
    model.base_feature_mean.at(0, d) /= static_cast<double>(pool.size());
  model.cache_ready = true;
}

/// Applies the configured preprocessing to a feature matrix (rows).
inline Matrix preprocess_features(const PretrainedModel& model,
                                  const Matrix& f, PreprocessMode mode) {
  if (mode == PreprocessMode::None) return f;
  if (!model.cache_ready)
    throw ProtocolError(
        "preprocess: centering needs extract_features() to run first");
  Matrix out = f;
  for (std::size_t i = 0; i < out.rows; ++i)
    for (std::size_t d = 0; d < out.cols; ++d)
      out.at(i, d) -= model.base_feature_mean.at(0, d);
  if (mode == PreprocessMode::CenterL2) {
    for (std::size_t i = 0; i < out.rows; ++i) {
      double n2 = 0.0;
      for (std::size_t d = 0; d < out.cols; ++d)
        n2 += out.at(i, d) * out.at(i, d);
      double n = std::sqrt(n2);
      if (n > 0.0)
        for (std::size_t d = 0; d < out.cols; ++d) out.at(i, d) /= n;
    }
  }
  return out;
}

struct PtEmbResult {
  std::vector<int> predictions;
  Matrix logits;  // n_query x way, negative squared distances
};

/// PT-EMB: nearest centroid on pre-trained features, no meta-training.
/// Ties break toward the lower class index.
inline PtEmbResult pt_emb_classify(const PretrainedModel& model,
                                   const ClassificationEpisode& ep,
                                   PreprocessMode mode = PreprocessMode::None) {
  Matrix sf = preprocess_features(model, model.encode(ep.support_x), mode);
  Matrix qf = preprocess_features(model, model.encode(ep.query_x), mode);

  Matrix proto(static_cast<std::size_t>(ep.way), sf.cols);
  std::vector<double> count(ep.way, 0.0);
  for (std::size_t i = 0; i < sf.rows; ++i) {
    int c = ep.support_y[i];
    count[c] += 1.0;
    for (std::size_t d = 0; d < sf.cols; ++d) proto.at(c, d) += sf.at(i, d);
  }
  for (int c = 0; c < ep.way; ++c)
    for (std::size_t d = 0; d < proto.cols; ++d) proto.at(c, d) /= count[c];

  PtEmbResult res;
  res.logits = Matrix(qf.rows, static_cast<std::size_t>(ep.way));
  res.predictions.resize(qf.rows);
  for (std::size_t i = 0; i < qf.rows; ++i) {
    for (int c = 0; c < ep.way; ++c) {
      double d2 = 0.0;
      for (std::size_t d = 0; d < qf.cols; ++d) {
        double t = qf.at(i, d) - proto.at(c, d);
        d2 += t * t;
      }
      res.logits.at(i, static_cast<std::size_t>(c)) = -d2;
    }
    std::span<const double> row(res.logits.row_ptr(i), res.logits.cols);
    res.predictions[i] = static_cast<int>(argmax(row));
  }
  return res;
}

}  // namespace lastshot
