#pragma once

#include <chrono>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "lastshot/config.hpp"
#include "lastshot/distill.hpp"
#include "lastshot/learners.hpp"
#include "lastshot/optim.hpp"
#include "lastshot/pretrain.hpp"
#include "lastshot/report.hpp"
#include "lastshot/teachers.hpp"
#include "lastshot/threadpool.hpp"

namespace lastshot {

/// A learner ready for evaluation: meta-trained parameters for the trainable
/// kinds, or a pre-trained-embedding baseline.
struct TrainedLearner {
  HarnessLearner kind = HarnessLearner::ProtoNet;
  LearnerConfig lc;
  MlpParams params;
  PreprocessMode preprocess = PreprocessMode::None;
  const PretrainedModel* pretrained = nullptr;  // PT-EMB / SimpleShot
};

inline bool is_eval_only(HarnessLearner k) {
  return k == HarnessLearner::PtEmb || k == HarnessLearner::SimpleShot;
}

/// Query logits for one classification episode (meta-testing path: no
/// gradients, vanilla querying only).
inline Matrix classification_query_logits(const TrainedLearner& L,
                                          const ClassificationEpisode& ep) {
  if (L.kind == HarnessLearner::PtEmb)
    return pt_emb_classify(*L.pretrained, ep, L.preprocess).logits;
  if (L.kind == HarnessLearner::SimpleShot)
    return pt_emb_classify(*L.pretrained, ep, PreprocessMode::CenterL2).logits;
  Tape t;
  MlpNodes nodes = lift(t, L.params, /*requires_grad=*/false);
  GeneratedModel m = generate(t, L.lc, nodes, SupportSet::from(ep));
  return t.value(m.outputs(t, t.constant(ep.query_x)));
}

inline double task_accuracy(const Matrix& logits, const std::vector<int>& y) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < logits.rows; ++i) {
    std::span<const double> row(logits.row_ptr(i), logits.cols);
    if (static_cast<int>(argmax(row)) == y[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(logits.rows);
}

/// Mean accuracy over n sampled meta-testing tasks (vanilla querying).
inline EvalReport evaluate_classification(const TrainedLearner& L,
                                          const ClassWorld& world, Split split,
                                          int way, int shot, int queries,
                                          std::size_t n_tasks,
                                          std::uint64_t seed,
                                          std::size_t workers = 1,
                                          bool retain = true) {
  std::vector<double> acc(n_tasks);
  parallel_for(n_tasks, workers, [&](std::size_t i) {
    RngStream rng = domain_stream(seed, RngDomain::EvalEpisode, i,
                                  static_cast<std::uint64_t>(split));
    ClassificationEpisode ep =
        sample_classification_episode(world, split, way, shot, queries, rng);
    acc[i] = task_accuracy(classification_query_logits(L, ep), ep.query_y);
  });
  return EvalReport::from_values("accuracy", acc, retain);
}

inline double regression_task_mse(const TrainedLearner& L,
                                  const RegressionEpisode& ep) {
  Tape t;
  MlpNodes nodes = lift(t, L.params, false);
  GeneratedModel m = generate(t, L.lc, nodes, SupportSet::from(ep));
  const Matrix& pred = t.value(m.outputs(t, t.constant(xs_matrix(ep.query))));
  Matrix y = ys_matrix(ep.query);
  double mse = 0.0;
  for (std::size_t i = 0; i < y.rows; ++i) {
    double d = pred.at(i, 0) - y.at(i, 0);
    mse += d * d;
  }
  return mse / static_cast<double>(y.rows);
}

/// Per-task MSE over sine meta-testing tasks.
inline EvalReport evaluate_regression(const TrainedLearner& L, int shots,
                                      int queries, std::size_t n_tasks,
                                      std::uint64_t seed,
                                      std::size_t workers = 1,
                                      bool retain = true) {
  std::vector<double> mse(n_tasks);
  parallel_for(n_tasks, workers, [&](std::size_t i) {
    RngStream rng = domain_stream(seed, RngDomain::EvalEpisode, i, 7);
    SineTaskParams p = sample_sine_task(rng);
    RegressionEpisode ep = sample_regression_episode(
        p, static_cast<std::size_t>(shots), static_cast<std::size_t>(queries),
        rng);
    mse[i] = regression_task_mse(L, ep);
  });
  return EvalReport::from_values("mse", mse, retain);
}

/// Averaged per-example softmax probabilities of two classifiers.
inline double ensemble_task_accuracy(const Matrix& logits_a,
                                     const Matrix& logits_b,
                                     const std::vector<int>& y) {
  check_same_shape(logits_a, logits_b, "ensemble_task_accuracy");
  Matrix pa = Tape::softmax_rows_value(logits_a);
  Matrix pb = Tape::softmax_rows_value(logits_b);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pa.rows; ++i) {
    std::vector<double> avg(pa.cols);
    for (std::size_t c = 0; c < pa.cols; ++c)
      avg[c] = 0.5 * (pa.at(i, c) + pb.at(i, c));
    if (static_cast<int>(argmax(avg)) == y[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(pa.rows);
}

inline EvalReport evaluate_classification_ensemble(
    const TrainedLearner& a, const TrainedLearner& b, const ClassWorld& world,
    Split split, int way, int shot, int queries, std::size_t n_tasks,
    std::uint64_t seed, std::size_t workers = 1) {
  std::vector<double> acc(n_tasks);
  parallel_for(n_tasks, workers, [&](std::size_t i) {
    RngStream rng = domain_stream(seed, RngDomain::EvalEpisode, i,
                                  static_cast<std::uint64_t>(split));
    ClassificationEpisode ep =
        sample_classification_episode(world, split, way, shot, queries, rng);
    acc[i] = ensemble_task_accuracy(classification_query_logits(a, ep),
                                    classification_query_logits(b, ep),
                                    ep.query_y);
  });
  return EvalReport::from_values("accuracy", acc);
}

struct MetaTrainResult {
  TrainedLearner learner;
  Manifest manifest;
  std::size_t iterations_done = 0;
  std::size_t lr_teacher_warnings = 0;
  std::vector<std::pair<std::size_t, double>> val_curve;  // (iteration, metric)
  double best_val = 0.0;
  std::size_t best_iteration = 0;
};

namespace detail {

inline MlpParams initial_learner_params(const RunConfig& cfg,
                                        const PretrainedModel* pretrained) {
  RngStream init_rng = domain_stream(cfg.seed, RngDomain::ParamInit, 17);
  if (cfg.classification()) {
    if (pretrained == nullptr)
      throw ConfigError(
          "classification meta-training needs a pre-trained model for encoder "
          "initialization and teacher construction");
    MlpParams p = pretrained->encoder;
    if (cfg.learner == HarnessLearner::Maml) {
      // Full net: encoder plus a way-sized linear head.
      MlpParams::Layer head;
      std::size_t feat = p.out_dim();
      head.weight = Matrix(feat, static_cast<std::size_t>(cfg.train_way));
      double bound =
          std::sqrt(6.0 / static_cast<double>(feat + cfg.train_way));
      for (double& v : head.weight.data) v = init_rng.uniform(-bound, bound);
      head.bias = Matrix(1, static_cast<std::size_t>(cfg.train_way));
      p.hidden_acts.push_back(cfg.pretrain.encoder_act);
      p.layers.push_back(std::move(head));
    }
    return p;
  }
  std::vector<std::size_t> dims = {1};
  for (std::size_t d : cfg.net_dims) dims.push_back(d);
  if (cfg.learner == HarnessLearner::Maml) dims.push_back(1);
  return MlpParams::init_uniform_act(dims, Activation::ReLU, init_rng);
}

struct EpisodeResult {
  double loss = 0.0;
  std::vector<double> grad;
  bool lr_warning = false;
};

}  // namespace detail

/// The meta-training loop: per batch, sample episodes, build/look up
/// teachers, accumulate per-episode gradients (deterministically, in episode
/// order), and take one SGD-momentum step on the meta-parameters.
inline MetaTrainResult meta_train(const RunConfig& cfg, const ClassWorld* world,
                                  const PretrainedModel* pretrained,
                                  AnchorGrid* anchors) {
  cfg.validate();
  if (is_eval_only(cfg.learner))
    throw ConfigError("meta_train: learner is evaluation-only");
  if (cfg.classification() && world == nullptr)
    throw ConfigError("meta_train: classification needs a world");
  if (!cfg.classification() && cfg.teacher == TeacherChoice::Anchor &&
      anchors == nullptr)
    throw ConfigError("meta_train: anchor teacher requested without a grid");

  MetaTrainResult res;
  res.manifest = Manifest::from(cfg);
  res.learner.kind = cfg.learner;
  res.learner.lc = cfg.learner_config();
  res.learner.params = detail::initial_learner_params(cfg, pretrained);
  res.learner.pretrained = pretrained;

  const int q_train = cfg.effective_train_queries();
  if (cfg.classification() && q_train != cfg.train_queries)
    res.manifest.notes.push_back(
        "note.query_budget = train queries reduced to " +
        std::to_string(q_train) + " by the C*(K+Q) <= 300 episode budget");
  if (!cfg.classification() && cfg.distill.mode == QueryMode::StrengthenTeacher)
    res.manifest.notes.push_back(
        "note.strengthen_teacher = no-op for regression (anchor teachers are "
        "fit on dense samples and take x only)");

  const std::size_t B = cfg.episodes_per_batch;
  std::vector<double> params = res.learner.params.flatten();
  SgdMomentumState opt(params.size(), cfg.meta_lr, cfg.meta_momentum);

  MlpParams best_params = res.learner.params;
  const bool keep_best = cfg.earlystop_val_tasks > 0;
  const bool val_is_accuracy = cfg.classification();
  res.best_val = val_is_accuracy ? -1.0 : std::numeric_limits<double>::infinity();

  auto validate_now = [&](const MlpParams& current,
                          std::size_t iteration) {
    TrainedLearner probe;
    probe.kind = cfg.learner;
    probe.lc = res.learner.lc;
    probe.params = current;
    probe.pretrained = pretrained;
    double metric;
    if (cfg.classification()) {
      std::vector<double> acc(cfg.earlystop_val_tasks);
      parallel_for(cfg.earlystop_val_tasks, cfg.workers, [&](std::size_t i) {
        RngStream rng = domain_stream(cfg.seed, RngDomain::ValEpisode, i);
        ClassificationEpisode ep = sample_classification_episode(
            *world, Split::Val, cfg.train_way, cfg.train_shot,
            cfg.eval_queries, rng);
        acc[i] = task_accuracy(classification_query_logits(probe, ep),
                               ep.query_y);
      });
      metric = EvalReport::from_values("accuracy", acc, false).mean;
    } else {
      std::vector<double> mse(cfg.earlystop_val_tasks);
      parallel_for(cfg.earlystop_val_tasks, cfg.workers, [&](std::size_t i) {
        RngStream rng = domain_stream(cfg.seed, RngDomain::ValEpisode, i);
        SineTaskParams p = sample_sine_task(rng);
        RegressionEpisode ep = sample_regression_episode(
            p, static_cast<std::size_t>(cfg.train_shot),
            static_cast<std::size_t>(cfg.eval_queries), rng);
        mse[i] = regression_task_mse(probe, ep);
      });
      metric = EvalReport::from_values("mse", mse, false).mean;
    }
    res.val_curve.emplace_back(iteration, metric);
    bool better = val_is_accuracy ? metric > res.best_val
                                  : metric < res.best_val;
    if (better) {
      res.best_val = metric;
      res.best_iteration = iteration;
      best_params = current;
    }
  };

  std::vector<detail::EpisodeResult> slots(B);
  MlpParams current = res.learner.params;

  for (std::size_t iter = 0; iter < cfg.train_iterations; ++iter) {
    std::size_t tasks_done = iter * B;
    std::size_t decays = tasks_done / cfg.lr_decay_every_tasks;
    opt.learning_rate =
        cfg.meta_lr * std::pow(cfg.lr_decay_factor, static_cast<double>(decays));

    current.unflatten(params);

    parallel_for(B, cfg.workers, [&](std::size_t j) {
      std::size_t e = iter * B + j;
      RngStream ep_rng = domain_stream(cfg.seed, RngDomain::TrainEpisode, e);
      detail::EpisodeResult& slot = slots[j];
      slot.lr_warning = false;

      Tape t;
      MlpNodes nodes = lift(t, current, true);
      Var loss;
      if (cfg.classification()) {
        ClassificationEpisode ep = sample_classification_episode(
            *world, Split::Base, cfg.train_way, cfg.train_shot, q_train,
            ep_rng);
        GeneratedModel m = generate(t, res.learner.lc, nodes,
                                    SupportSet::from(ep));
        if (cfg.teacher == TeacherChoice::None) {
          Var logits = m.outputs(t, t.constant(ep.query_x));
          loss = t.mean_all(t.ce_rows(logits, ep.query_y));
        } else {
          Teacher teacher;
          if (cfg.teacher == TeacherChoice::NC) {
            teacher = build_nc_teacher(*pretrained, ep.class_ids);
          } else if (cfg.teacher == TeacherChoice::LR) {
            RngStream fit_rng =
                domain_stream(cfg.seed, RngDomain::TeacherFit, e);
            LrFitInfo info;
            teacher = build_lr_teacher(*pretrained, ep.class_ids,
                                       *world->pool_cache, fit_rng, &info);
            slot.lr_warning = !info.converged;
          } else {
            teacher = build_masked_base_teacher(*pretrained, ep.class_ids);
          }
          RngStream perturb_rng =
              domain_stream(cfg.seed, RngDomain::QueryPerturb, e);
          loss = lastshot_episode_loss(t, m, teacher, ep, cfg.distill,
                                       &perturb_rng);
        }
      } else {
        SineTaskParams p = sample_sine_task(ep_rng);
        RegressionEpisode ep = sample_regression_episode(
            p, static_cast<std::size_t>(cfg.train_shot),
            static_cast<std::size_t>(q_train), ep_rng);
        GeneratedModel m = generate(t, res.learner.lc, nodes,
                                    SupportSet::from(ep));
        if (cfg.teacher == TeacherChoice::None) {
          Var pred = m.outputs(t, t.constant(xs_matrix(ep.query)));
          loss = t.mean_all(
              t.square(t.sub(pred, t.constant(ys_matrix(ep.query)))));
        } else {
          Teacher teacher = anchors->lookup(ep.params);
          RngStream perturb_rng =
              domain_stream(cfg.seed, RngDomain::QueryPerturb, e);
          loss = lastshot_regression_loss(t, m, teacher, ep, cfg.distill,
                                          &perturb_rng);
        }
      }

      slot.loss = t.value(loss).data[0];
      std::vector<Var> gs = t.grad(loss, nodes.all());
      slot.grad.clear();
      slot.grad.reserve(params.size());
      for (Var g : gs) {
        const Matrix& gm = t.value(g);
        slot.grad.insert(slot.grad.end(), gm.data.begin(), gm.data.end());
      }
    });

    // Deterministic reduction in episode order.
    std::vector<double> grad(params.size(), 0.0);
    double mean_loss = 0.0;
    for (std::size_t j = 0; j < B; ++j) {
      mean_loss += slots[j].loss;
      for (std::size_t k = 0; k < grad.size(); ++k)
        grad[k] += slots[j].grad[k];
      if (slots[j].lr_warning) ++res.lr_teacher_warnings;
    }
    mean_loss /= static_cast<double>(B);
    for (double& g : grad) g /= static_cast<double>(B);

    if (!std::isfinite(mean_loss))
      throw TrainingError("meta_train: non-finite loss at iteration " +
                          std::to_string(iter) + " (config " +
                          res.manifest.hash + ")");

    opt.step(params, grad);
    res.iterations_done = iter + 1;

    if (keep_best && ((iter + 1) % cfg.earlystop_every_iters == 0 ||
                      iter + 1 == cfg.train_iterations)) {
      current.unflatten(params);
      validate_now(current, iter + 1);
    }
  }

  current.unflatten(params);
  res.learner.params = keep_best ? best_params : current;
  if (res.lr_teacher_warnings > 0)
    res.manifest.warnings.push_back(
        "warn.lr_teacher_nonconverged = " +
        std::to_string(res.lr_teacher_warnings));
  if (cfg.classification() && cfg.eval_tasks < 10000)
    res.manifest.notes.push_back(
        "note.eval_scale = evaluation uses " + std::to_string(cfg.eval_tasks) +
        " tasks; the full protocol uses 10000");
  return res;
}

}  // namespace lastshot
