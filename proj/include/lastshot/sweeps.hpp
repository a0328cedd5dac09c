#pragma once

#include <chrono>
#include <string>
#include <vector>

#include "lastshot/harness.hpp"

namespace lastshot {

inline const std::vector<int>& shot_sweep_grid() {
  static const std::vector<int> grid = {1, 5, 10, 20, 30, 50};
  return grid;
}

inline const std::vector<int>& query_size_sweep_grid() {
  static const std::vector<int> grid = {1, 5, 50};
  return grid;
}

inline const std::vector<double>& lambda_sweep_grid() {
  static const std::vector<double> grid = {0.0, 0.001, 0.01, 0.1, 1.0, 10.0};
  return grid;
}

struct SweepOutput {
  std::vector<ResultRow> rows;
  std::vector<PlotPoint> plot;
};

namespace detail {

inline ResultRow row_from_report(const RunConfig& cfg, const EvalReport& rep,
                                 Split split, int shot,
                                 std::int64_t wall_ms) {
  ResultRow r;
  r.run_id = cfg.run_id;
  r.config_hash = config_hash(cfg);
  r.learner = harness_learner_name(cfg.learner);
  r.teacher = teacher_choice_name(cfg.teacher);
  r.way = cfg.eval_way;
  r.shot = shot;
  r.queries_train = cfg.effective_train_queries();
  r.lambda = cfg.distill.lambda;
  r.tau = cfg.distill.tau;
  r.mode = query_mode_name(cfg.distill.mode);
  r.split = split_name(split);
  r.metric = rep.metric;
  r.mean = rep.mean;
  r.ci95 = rep.ci95;
  r.n_tasks = rep.n_tasks;
  r.seed = cfg.seed;
  r.wall_ms = wall_ms;
  return r;
}

inline std::string series_tag(const RunConfig& cfg) {
  std::string s = harness_learner_name(cfg.learner);
  if (cfg.teacher != TeacherChoice::None) {
    s += "+lastshot(";
    s += teacher_choice_name(cfg.teacher);
    s += ")";
  }
  return s;
}

}  // namespace detail

/// Shot sweep: meta-train at every K in the grid (query size shrinking under
/// the episode budget), pick the best training K for each testing K by
/// validation accuracy, then report novel-split accuracy.
inline SweepOutput run_shot_sweep(const RunConfig& base, const ClassWorld& world,
                                  const PretrainedModel& pretrained,
                                  std::size_t selection_tasks = 500) {
  SweepOutput out;
  const auto& grid = shot_sweep_grid();

  std::vector<TrainedLearner> trained;
  if (is_eval_only(base.learner)) {
    TrainedLearner L;
    L.kind = base.learner;
    L.preprocess = base.pt_preprocess;
    L.pretrained = &pretrained;
    trained.assign(grid.size(), L);
  } else {
    for (int train_k : grid) {
      RunConfig cfg = base;
      cfg.train_shot = train_k;
      trained.push_back(meta_train(cfg, &world, &pretrained, nullptr).learner);
    }
  }

  for (int test_k : grid) {
    auto t0 = std::chrono::steady_clock::now();
    // Select the training K by validation accuracy at this testing K.
    std::size_t best_idx = 0;
    double best_val = -1.0;
    if (!is_eval_only(base.learner)) {
      for (std::size_t i = 0; i < trained.size(); ++i) {
        EvalReport val = evaluate_classification(
            trained[i], world, Split::Val, base.eval_way, test_k,
            base.eval_queries, selection_tasks, base.seed, base.workers,
            false);
        if (val.mean > best_val) {
          best_val = val.mean;
          best_idx = i;
        }
      }
    }
    EvalReport rep = evaluate_classification(
        trained[best_idx], world, Split::Novel, base.eval_way, test_k,
        base.eval_queries, base.eval_tasks, base.seed, base.workers, false);
    auto wall = std::chrono::duration_cast<std::chrono::milliseconds>(
                    std::chrono::steady_clock::now() - t0)
                    .count();

    RunConfig row_cfg = base;
    row_cfg.train_shot = grid[best_idx];
    out.rows.push_back(
        detail::row_from_report(row_cfg, rep, Split::Novel, test_k, wall));
    out.plot.push_back({detail::series_tag(base), static_cast<double>(test_k),
                        rep.mean, rep.ci95});
  }
  return out;
}

/// Query-size ablation: meta-train with Q in {1, 5, 50} queries per class.
inline SweepOutput run_query_size_sweep(const RunConfig& base,
                                        const ClassWorld& world,
                                        const PretrainedModel& pretrained) {
  SweepOutput out;
  for (int q : query_size_sweep_grid()) {
    RunConfig cfg = base;
    cfg.train_queries = q;
    auto t0 = std::chrono::steady_clock::now();
    MetaTrainResult r = meta_train(cfg, &world, &pretrained, nullptr);
    EvalReport rep = evaluate_classification(
        r.learner, world, Split::Novel, cfg.eval_way, cfg.eval_shot,
        cfg.eval_queries, cfg.eval_tasks, cfg.seed, cfg.workers, false);
    auto wall = std::chrono::duration_cast<std::chrono::milliseconds>(
                    std::chrono::steady_clock::now() - t0)
                    .count();
    out.rows.push_back(
        detail::row_from_report(cfg, rep, Split::Novel, cfg.eval_shot, wall));
    out.plot.push_back({detail::series_tag(cfg), static_cast<double>(q),
                        rep.mean, rep.ci95});
  }
  return out;
}

/// Lambda sweep over the fixed grid; one emitted row per lambda.
inline SweepOutput run_lambda_sweep(const RunConfig& base,
                                    const ClassWorld& world,
                                    const PretrainedModel& pretrained) {
  if (base.teacher == TeacherChoice::None)
    throw ConfigError("lambda sweep needs a teacher");
  SweepOutput out;
  for (double lambda : lambda_sweep_grid()) {
    RunConfig cfg = base;
    cfg.distill.lambda = lambda;
    auto t0 = std::chrono::steady_clock::now();
    MetaTrainResult r = meta_train(cfg, &world, &pretrained, nullptr);
    EvalReport rep = evaluate_classification(
        r.learner, world, Split::Novel, cfg.eval_way, cfg.eval_shot,
        cfg.eval_queries, cfg.eval_tasks, cfg.seed, cfg.workers, false);
    auto wall = std::chrono::duration_cast<std::chrono::milliseconds>(
                    std::chrono::steady_clock::now() - t0)
                    .count();
    out.rows.push_back(
        detail::row_from_report(cfg, rep, Split::Novel, cfg.eval_shot, wall));
    out.plot.push_back(
        {detail::series_tag(cfg), lambda, rep.mean, rep.ci95});
  }
  return out;
}

inline SweepOutput run_sweep(const std::string& kind, const RunConfig& base,
                             const ClassWorld& world,
                             const PretrainedModel& pretrained) {
  if (kind == "shot") return run_shot_sweep(base, world, pretrained);
  if (kind == "query_size") return run_query_size_sweep(base, world, pretrained);
  if (kind == "lambda") return run_lambda_sweep(base, world, pretrained);
  throw ConfigError("run_sweep: unknown kind '" + kind +
                    "' (expected shot, query_size, or lambda)");
}

}  // namespace lastshot
