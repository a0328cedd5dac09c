#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>

#include "lastshot/teachers.hpp"
#include "testutil.hpp"

using namespace lastshot;

namespace {

/// Hand-built pretrained model with an identity encoder and a fabricated
/// feature cache; lets teacher tests control features exactly.
PretrainedModel manual_model(std::size_t dim, std::size_t num_base) {
  PretrainedModel m;
  m.encoder.layers.push_back({Matrix::identity(dim), Matrix(1, dim)});
  m.num_base = num_base;
  m.head = Matrix(dim, num_base);
  return m;
}

/// Newton iterations for the same regularized multinomial LR objective the
/// teacher optimizes: mean CE + 0.5*reg*|W|^2 (bias unregularized).
/// Independent of the gradient-descent implementation path.
std::vector<double> newton_lr_oracle(const Matrix& x, const std::vector<int>& y,
                                     std::size_t way, double reg) {
  const std::size_t n = x.rows, d = x.cols;
  const std::size_t dim = (d + 1) * way;  // [W, b] packed column-major by class
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(dim);
  auto w_at = [&](std::size_t k, std::size_t c) -> double& {
    return theta(static_cast<Eigen::Index>(k * way + c));
  };
  auto b_at = [&](std::size_t c) -> double& {
    return theta(static_cast<Eigen::Index>(d * way + c));
  };
  for (int iter = 0; iter < 100; ++iter) {
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(dim);
    Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(dim, dim);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> logits(way);
      for (std::size_t c = 0; c < way; ++c) {
        double s = b_at(c);
        for (std::size_t k = 0; k < d; ++k) s += x.at(i, k) * w_at(k, c);
        logits[c] = s;
      }
      auto p = softmax(logits);
      std::vector<double> xi(d + 1);
      for (std::size_t k = 0; k < d; ++k) xi[k] = x.at(i, k);
      xi[d] = 1.0;
      for (std::size_t c = 0; c < way; ++c) {
        double gc = p[c] - (y[i] == static_cast<int>(c) ? 1.0 : 0.0);
        for (std::size_t k = 0; k <= d; ++k) {
          std::size_t row = k < d ? k * way + c : d * way + c;
          grad(static_cast<Eigen::Index>(row)) += gc * xi[k] / n;
        }
        for (std::size_t c2 = 0; c2 < way; ++c2) {
          double h = p[c] * ((c == c2 ? 1.0 : 0.0) - p[c2]) / n;
          for (std::size_t k = 0; k <= d; ++k)
            for (std::size_t k2 = 0; k2 <= d; ++k2) {
              std::size_t row = k < d ? k * way + c : d * way + c;
              std::size_t col = k2 < d ? k2 * way + c2 : d * way + c2;
              hess(static_cast<Eigen::Index>(row),
                   static_cast<Eigen::Index>(col)) += h * xi[k] * xi[k2];
            }
        }
      }
    }
    for (std::size_t k = 0; k < d * way; ++k) {
      grad(static_cast<Eigen::Index>(k)) += reg * theta(static_cast<Eigen::Index>(k));
      hess(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k)) += reg;
    }
    // Softmax Hessian is singular along per-row shifts; damp slightly.
    hess.diagonal().array() += 1e-10;
    Eigen::VectorXd step = hess.ldlt().solve(grad);
    theta -= step;
    if (grad.norm() < 1e-12) break;
  }
  return std::vector<double>(theta.data(), theta.data() + theta.size());
}

}  // namespace

TEST(NcTeacher, HandDistances) {
  PretrainedModel m = manual_model(2, 2);
  m.cache_ready = true;
  m.class_feature_means = Matrix(2, 2, {0.0, 0.0, 2.0, 0.0});

  Teacher t = build_nc_teacher(m, {0, 1});
  Matrix logits = t.logits(Matrix(1, 2, {0.0, 0.0}));
  EXPECT_NEAR(logits.at(0, 0), 0.0, 1e-12);
  EXPECT_NEAR(logits.at(0, 1), -4.0, 1e-12);

  // Query whose feature equals a class mean: logit 0 and maximal.
  Matrix at_mean = t.logits(Matrix(1, 2, {2.0, 0.0}));
  EXPECT_NEAR(at_mean.at(0, 1), 0.0, 1e-12);
  EXPECT_GT(at_mean.at(0, 1), at_mean.at(0, 0));
}

TEST(NcTeacher, MeansAreBruteForcePoolAverages) {
  RngStream rng = RngStream::from(800, 0);
  ClassWorldConfig cfg;
  cfg.latent_dim = 6;
  cfg.obs_dim = 6;
  cfg.num_classes = 8;
  cfg.base_classes = 5;
  cfg.val_classes = 2;
  cfg.novel_classes = 1;
  cfg.identity_mixer = true;
  ClassWorld w = build_class_world(cfg, rng);
  RngStream prng = RngStream::from(800, 1);
  const BasePool& pool = enumerate_base_data(w, 30, prng);

  PretrainedModel m = manual_model(6, 5);
  extract_features(m, pool);
  Teacher t = build_nc_teacher(m, {3, 1});

  for (std::size_t c = 0; c < 2; ++c) {
    int id = t.nc_means.rows == 2 ? (c == 0 ? 3 : 1) : -1;
    auto [lo, hi] = pool.class_range(id);
    for (std::size_t d = 0; d < 6; ++d) {
      double mean = 0.0;
      for (std::size_t i = lo; i < hi; ++i) mean += m.feature_cache.at(i, d);
      mean /= static_cast<double>(hi - lo);
      EXPECT_NEAR(t.nc_means.at(c, d), mean, 1e-12);
    }
  }
}

TEST(NcTeacher, RejectsNonBaseClassAndMissingCache) {
  PretrainedModel m = manual_model(2, 2);
  EXPECT_THROW(build_nc_teacher(m, {0}), ProtocolError);  // cache not ready
  m.cache_ready = true;
  m.class_feature_means = Matrix(2, 2);
  EXPECT_THROW(build_nc_teacher(m, {2}), EpisodeError);
  EXPECT_THROW(build_nc_teacher(m, {-1}), EpisodeError);
}

TEST(LrTeacher, SeparableProblemReachesPerfectTrainingAccuracy) {
  PretrainedModel m = manual_model(2, 2);
  m.cache_ready = true;
  // Fabricate a pool of 6 per class and a cache of separable features.
  BasePool pool;
  pool.per_class = 6;
  pool.num_base = 2;
  pool.x = Matrix(12, 2);
  pool.labels.assign({0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1});
  m.feature_cache = Matrix(12, 2);
  RngStream rng = RngStream::from(801, 0);
  for (std::size_t i = 0; i < 12; ++i) {
    double cx = i < 6 ? -2.0 : 2.0;
    m.feature_cache.at(i, 0) = cx + 0.2 * rng.normal();
    m.feature_cache.at(i, 1) = 0.2 * rng.normal();
  }
  pool.x = m.feature_cache;

  RngStream fit_rng = RngStream::from(801, 1);
  LrFitInfo info;
  Teacher t = build_lr_teacher(m, {0, 1}, pool, fit_rng, &info);
  EXPECT_TRUE(info.converged);
  Matrix logits = t.logits(pool.x);
  for (std::size_t i = 0; i < 12; ++i) {
    int pred = logits.at(i, 0) > logits.at(i, 1) ? 0 : 1;
    EXPECT_EQ(pred, pool.labels[i]);
  }
}

TEST(LrTeacher, ConflictingDuplicateGivesFiftyFifty) {
  PretrainedModel m = manual_model(2, 2);
  m.cache_ready = true;
  BasePool pool;
  pool.per_class = 1;
  pool.num_base = 2;
  m.feature_cache = Matrix(2, 2, {0.7, -0.3, 0.7, -0.3});  // identical rows
  pool.x = m.feature_cache;
  pool.labels = {0, 1};

  RngStream rng = RngStream::from(802, 0);
  Teacher t = build_lr_teacher(m, {0, 1}, pool, rng);
  Matrix logits = t.logits(Matrix(1, 2, {0.7, -0.3}));
  std::vector<double> row = {logits.at(0, 0), logits.at(0, 1)};
  auto p = softmax(row);
  EXPECT_NEAR(p[0], 0.5, 1e-6);
  EXPECT_NEAR(p[1], 0.5, 1e-6);
}

TEST(LrTeacher, MatchesNewtonOracle) {
  // 20-point, 3-dim, 2-class problem; both routes optimize the same convex
  // objective, so the optima must agree to 1e-4.
  PretrainedModel m = manual_model(3, 2);
  m.cache_ready = true;
  BasePool pool;
  pool.per_class = 10;
  pool.num_base = 2;
  m.feature_cache = Matrix(20, 3);
  pool.labels.resize(20);
  // Overlapping classes keep the optimum small and the Hessian well
  // conditioned, so grad-norm 1e-6 pins the parameters far below 1e-4.
  RngStream rng = RngStream::from(803, 0);
  for (std::size_t i = 0; i < 20; ++i) {
    int c = i < 10 ? 0 : 1;
    pool.labels[i] = c;
    m.feature_cache.at(i, 0) = (c == 0 ? -0.4 : 0.4) + rng.normal();
    m.feature_cache.at(i, 1) = rng.normal();
    m.feature_cache.at(i, 2) = 0.5 * rng.normal();
  }
  pool.x = m.feature_cache;

  RngStream fit_rng = RngStream::from(803, 1);
  LrFitInfo info;
  Teacher t = build_lr_teacher(m, {0, 1}, pool, fit_rng, &info);
  EXPECT_TRUE(info.converged);

  Matrix x(20, 3);
  std::vector<int> y(20);
  for (std::size_t i = 0; i < 20; ++i) {
    y[i] = pool.labels[i];
    std::copy(m.feature_cache.row_ptr(i), m.feature_cache.row_ptr(i) + 3,
              x.row_ptr(i));
  }
  std::vector<double> oracle = newton_lr_oracle(x, y, 2, kLrTeacherL2);
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t c = 0; c < 2; ++c)
      EXPECT_NEAR(t.lr_w.at(k, c), oracle[k * 2 + c], 1e-4);
  for (std::size_t c = 0; c < 2; ++c)
    EXPECT_NEAR(t.lr_b.at(0, c), oracle[3 * 2 + c], 1e-4);
}

TEST(LrTeacher, SamplesAtMostFiftyPerClass) {
  PretrainedModel m = manual_model(2, 1);
  m.num_base = 1;
  m.cache_ready = true;
  BasePool pool;
  pool.per_class = 80;
  pool.num_base = 1;
  m.feature_cache = Matrix(80, 2);
  pool.labels.assign(80, 0);
  pool.x = m.feature_cache;
  // Only verifying the subsample bound; a single class is degenerate for the
  // objective but fine for the sampler.
  RngStream rng = RngStream::from(804, 0);
  auto pick = rng.sample_without_replacement(80, 50);
  EXPECT_EQ(pick.size(), kLrTeacherMaxPerClass);
}

TEST(MaskedBase, EqualsFullHeadWhenAllClassesSelected) {
  RngStream rng = RngStream::from(805, 0);
  PretrainedModel m = manual_model(3, 4);
  for (double& v : m.head.data) v = rng.normal();

  Teacher t = build_masked_base_teacher(m, {0, 1, 2, 3});
  Matrix x = testutil::random_matrix(5, 3, rng);
  Matrix full = matmul(mlp_forward(m.encoder, x), m.head);
  Matrix got = t.logits(x);
  for (std::size_t i = 0; i < full.size(); ++i)
    EXPECT_EQ(got.data[i], full.data[i]);
}

TEST(MaskedBase, SelectionOrderPermutesLogits) {
  RngStream rng = RngStream::from(806, 0);
  PretrainedModel m = manual_model(3, 4);
  for (double& v : m.head.data) v = rng.normal();
  Matrix x = testutil::random_matrix(4, 3, rng);

  Teacher fwd = build_masked_base_teacher(m, {1, 3, 2});
  Teacher rev = build_masked_base_teacher(m, {2, 3, 1});
  Matrix a = fwd.logits(x);
  Matrix b = rev.logits(x);
  for (std::size_t i = 0; i < x.rows; ++i) {
    EXPECT_EQ(a.at(i, 0), b.at(i, 2));
    EXPECT_EQ(a.at(i, 1), b.at(i, 1));
    EXPECT_EQ(a.at(i, 2), b.at(i, 0));
  }
}

namespace {
AnchorGridConfig fast_anchor_cfg() {
  AnchorGridConfig cfg;
  cfg.samples_per_anchor = 400;  // smaller fits for unit tests
  return cfg;
}
}  // namespace

TEST(AnchorGrid, IndexingFloorAndClamp) {
  AnchorGrid grid(fast_anchor_cfg(), 42);
  EXPECT_EQ(grid.axis_cells(AnchorGrid::kALo, AnchorGrid::kAHi), 20u);
  EXPECT_EQ(grid.axis_cells(AnchorGrid::kVLo, AnchorGrid::kVHi), 20u);
  EXPECT_EQ(grid.axis_cells(AnchorGrid::kBLo, AnchorGrid::kBHi), 63u);
  EXPECT_EQ(grid.total_cells(), 20u * 20u * 63u);

  EXPECT_EQ(grid.axis_index(0.05, AnchorGrid::kALo, AnchorGrid::kAHi), 0u);
  EXPECT_EQ(grid.axis_index(2.0, AnchorGrid::kALo, AnchorGrid::kAHi), 19u);
  EXPECT_EQ(grid.axis_index(kTwoPi, AnchorGrid::kBLo, AnchorGrid::kBHi), 62u);
  EXPECT_THROW(grid.axis_index(-0.01, AnchorGrid::kALo, AnchorGrid::kAHi),
               EpisodeError);
  EXPECT_THROW(grid.axis_index(2.01, AnchorGrid::kALo, AnchorGrid::kAHi),
               EpisodeError);
}

TEST(AnchorGrid, MemoizationSharesOneRegressorPerCell) {
  AnchorGrid grid(fast_anchor_cfg(), 43);
  SineTaskParams p1{1.02, 3.04, 3.14159, 0.3};
  SineTaskParams p2{1.07, 3.09, 3.19, 0.3};  // same cell
  EXPECT_EQ(grid.cell_index(p1), grid.cell_index(p2));
  Teacher a = lookup_anchor_teacher(grid, p1);
  Teacher b = lookup_anchor_teacher(grid, p2);
  EXPECT_EQ(grid.trained_count(), 1u);
  EXPECT_EQ(a.anchor_w.data, b.anchor_w.data);

  SineTaskParams p3{0.3, 2.2, 1.0, 0.3};
  lookup_anchor_teacher(grid, p3);
  EXPECT_EQ(grid.trained_count(), 2u);
}

TEST(AnchorGrid, ZeroAmplitudeCellIsNearZeroFunction) {
  AnchorGrid grid(fast_anchor_cfg(), 44);
  SineTaskParams p{0.0, 3.0, 1.0, 0.3};
  Teacher t = lookup_anchor_teacher(grid, p);
  double mse = 0.0;
  int n = 0;
  for (double x = -5.0; x <= 5.0; x += 0.1, ++n) {
    double v = t.regress(x);
    mse += v * v;
  }
  EXPECT_LE(mse / n, 0.1);
}

TEST(AnchorGrid, HeldOutMseWithinGate) {
  // Fresh draws from the anchor's own cell task; noise floor is 0.09.
  AnchorGridConfig cfg;  // full 1000-sample anchors for the quality gates
  AnchorGrid grid(cfg, 45);
  RngStream rng = RngStream::from(900, 0);
  for (int trial = 0; trial < 3; ++trial) {
    SineTaskParams p = sample_sine_task(rng);
    Teacher t = lookup_anchor_teacher(grid, p);
    SineTaskParams center = grid.cell_center(grid.cell_index(p));

    double train_like_mse = 0.0;
    const int n = 1000;
    for (int i = 0; i < n; ++i) {
      double x = rng.uniform(kSineXLo, kSineXHi);
      double y = eval_sine(center, x, &rng);
      double d = t.regress(x) - y;
      train_like_mse += d * d;
    }
    EXPECT_LE(train_like_mse / n, 0.15);
  }
}

TEST(AnchorGrid, TrainingMseWithinTwiceNoiseFloor) {
  AnchorGridConfig cfg;
  AnchorGrid grid(cfg, 46);
  SineTaskParams p{1.95, 3.95, 0.5, 0.3};  // hardest corner: fast, tall
  Teacher t = lookup_anchor_teacher(grid, p);
  SineTaskParams center = grid.cell_center(grid.cell_index(p));
  // Reconstruct the anchor's own training draw.
  RngStream rng = domain_stream(46, RngDomain::AnchorFit,
                                grid.cell_index(p) + 1);
  double mse = 0.0;
  for (std::size_t i = 0; i < cfg.samples_per_anchor; ++i) {
    double x = rng.uniform(kSineXLo, kSineXHi);
    double y = eval_sine(center, x, &rng);
    double d = t.regress(x) - y;
    mse += d * d;
  }
  EXPECT_LE(mse / cfg.samples_per_anchor, 2.0 * 0.09);
}

TEST(QueryModes, VanillaEqualsDirectLogits) {
  PretrainedModel m = manual_model(2, 2);
  m.cache_ready = true;
  m.class_feature_means = Matrix(2, 2, {0.0, 0.0, 1.0, 1.0});
  Teacher t = build_nc_teacher(m, {0, 1});

  ClassificationEpisode ep;
  ep.way = 2;
  ep.query_x = Matrix(3, 2, {0.1, 0.0, 0.9, 1.0, 0.4, 0.6});
  ep.query_clean = Matrix(3, 2, {0.0, 0.0, 1.0, 1.0, 0.5, 0.5});

  Matrix direct = t.logits(ep.query_x);
  Matrix via = query_teacher(t, ep, QueryMode::Vanilla, 0.0, nullptr);
  EXPECT_EQ(direct.data, via.data);
}

TEST(QueryModes, WeakenWithZeroSigmaEqualsVanilla) {
  PretrainedModel m = manual_model(2, 2);
  m.cache_ready = true;
  m.class_feature_means = Matrix(2, 2, {0.0, 0.0, 1.0, 1.0});
  Teacher t = build_nc_teacher(m, {0, 1});

  ClassificationEpisode ep;
  ep.way = 2;
  ep.query_x = Matrix(2, 2, {0.1, 0.0, 0.9, 1.0});
  ep.query_clean = ep.query_x;

  RngStream rng = RngStream::from(901, 0);
  Matrix a = query_teacher(t, ep, QueryMode::WeakenStudent, 0.0, &rng);
  Matrix b = query_teacher(t, ep, QueryMode::Vanilla, 0.0, nullptr);
  for (std::size_t i = 0; i < a.size(); ++i)
    EXPECT_EQ(a.data[i], b.data[i]);
}

TEST(QueryModes, StrengthenChangesTeacherInputNeverStudentInput) {
  ClassificationEpisode ep;
  ep.way = 2;
  ep.query_x = Matrix(2, 2, {0.1, 0.0, 0.9, 1.0});
  ep.query_clean = Matrix(2, 2, {0.0, 0.0, 1.0, 1.0});

  QueryInputs q =
      prepare_query_inputs(ep, QueryMode::StrengthenTeacher, 0.0, nullptr,
                           /*meta_testing=*/false);
  EXPECT_EQ(q.teacher_x.data, ep.query_clean.data);
  EXPECT_EQ(q.student_x.data, ep.query_x.data);

  RngStream rng = RngStream::from(902, 0);
  QueryInputs w = prepare_query_inputs(ep, QueryMode::WeakenStudent, 0.5, &rng,
                                       false);
  // Weakening feeds the same perturbed copy to both sides.
  EXPECT_EQ(w.teacher_x.data, w.student_x.data);
  EXPECT_NE(w.teacher_x.data, ep.query_x.data);
}

TEST(QueryModes, NonVanillaAtMetaTestIsProtocolError) {
  ClassificationEpisode ep;
  ep.way = 2;
  ep.query_x = Matrix(1, 2);
  ep.query_clean = Matrix(1, 2);
  RngStream rng = RngStream::from(903, 0);
  EXPECT_THROW(
      prepare_query_inputs(ep, QueryMode::StrengthenTeacher, 0.0, &rng, true),
      ProtocolError);
  EXPECT_THROW(prepare_query_inputs_regression(Matrix(1, 1),
                                               QueryMode::WeakenStudent, 0.1,
                                               &rng, true),
               ProtocolError);
  EXPECT_NO_THROW(
      prepare_query_inputs(ep, QueryMode::Vanilla, 0.0, nullptr, true));
}

TEST(QueryModes, RegressionStrengthenIsReportedNoop) {
  Matrix qx(3, 1, {0.0, 1.0, 2.0});
  QueryInputs q = prepare_query_inputs_regression(
      qx, QueryMode::StrengthenTeacher, 0.0, nullptr, false);
  EXPECT_TRUE(q.strengthen_noop);
  EXPECT_EQ(q.teacher_x.data, qx.data);
  EXPECT_EQ(q.student_x.data, qx.data);
}

TEST(Teacher, ParamHashDetectsMutation) {
  PretrainedModel m = manual_model(2, 2);
  m.cache_ready = true;
  m.class_feature_means = Matrix(2, 2, {0.0, 0.0, 1.0, 1.0});
  Teacher t = build_nc_teacher(m, {0, 1});
  std::uint64_t h = t.param_hash();
  EXPECT_EQ(t.param_hash(), h);
  t.nc_means.at(0, 0) += 1e-12;
  EXPECT_NE(t.param_hash(), h);
}
