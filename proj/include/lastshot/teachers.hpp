#pragma once

#include <atomic>
#include <cstring>
#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Cholesky>

#include "lastshot/classworld.hpp"
#include "lastshot/lossfn.hpp"
#include "lastshot/matrix.hpp"
#include "lastshot/mlp.hpp"
#include "lastshot/pretrain.hpp"
#include "lastshot/rng.hpp"
#include "lastshot/sine.hpp"

namespace lastshot {

enum class TeacherKind : std::uint8_t { NC, LR, MaskedBase, AnchorRegressor };

inline const char* teacher_name(TeacherKind k) {
  switch (k) {
    case TeacherKind::NC: return "nc";
    case TeacherKind::LR: return "lr";
    case TeacherKind::MaskedBase: return "masked";
    case TeacherKind::AnchorRegressor: return "anchor";
  }
  return "?";
}

enum class QueryMode : std::uint8_t { Vanilla, StrengthenTeacher, WeakenStudent };

inline const char* query_mode_name(QueryMode m) {
  switch (m) {
    case QueryMode::Vanilla: return "vanilla";
    case QueryMode::StrengthenTeacher: return "strengthen";
    case QueryMode::WeakenStudent: return "weaken";
  }
  return "?";
}

/// Frozen target model h*: produces episode-local logits (classification) or
/// scalar predictions (regression). No gradient ever flows into a teacher;
/// its outputs enter training graphs as constants.
struct Teacher {
  TeacherKind kind = TeacherKind::NC;
  const PretrainedModel* pretrained = nullptr;  // NC / LR / MaskedBase
  Matrix nc_means;             // C x feat
  Matrix lr_w;                 // feat x C
  Matrix lr_b;                 // 1 x C
  std::vector<int> class_ids;  // MaskedBase: selected head columns
  const MlpParams* anchor_features = nullptr;  // shared frozen feature net
  Matrix anchor_w;             // (width+1) x 1

  /// Classification logits for a batch of observations.
  Matrix logits(const Matrix& x) const {
    switch (kind) {
      case TeacherKind::NC: {
        Matrix f = pretrained->encode(x);
        Matrix out(f.rows, nc_means.rows);
        for (std::size_t i = 0; i < f.rows; ++i)
          for (std::size_t c = 0; c < nc_means.rows; ++c) {
            double d2 = 0.0;
            for (std::size_t d = 0; d < f.cols; ++d) {
              double t = f.at(i, d) - nc_means.at(c, d);
              d2 += t * t;
            }
            out.at(i, c) = -d2;
          }
        return out;
      }
      case TeacherKind::LR: {
        Matrix f = pretrained->encode(x);
        Matrix out = matmul(f, lr_w);
        for (std::size_t i = 0; i < out.rows; ++i)
          for (std::size_t c = 0; c < out.cols; ++c)
            out.at(i, c) += lr_b.at(0, c);
        return out;
      }
      case TeacherKind::MaskedBase: {
        Matrix full = matmul(pretrained->encode(x), pretrained->head);
        Matrix out(full.rows, class_ids.size());
        for (std::size_t i = 0; i < full.rows; ++i)
          for (std::size_t c = 0; c < class_ids.size(); ++c)
            out.at(i, c) = full.at(i, static_cast<std::size_t>(class_ids[c]));
        return out;
      }
      case TeacherKind::AnchorRegressor:
        throw ProtocolError("teacher: anchor regressor has no class logits");
    }
    throw ProtocolError("teacher: unknown kind");
  }

  /// Regression predictions for a column of inputs.
  Matrix regress_batch(const Matrix& xs) const {
    if (kind != TeacherKind::AnchorRegressor)
      throw ProtocolError("teacher: regress on a classification teacher");
    Matrix h = mlp_forward(*anchor_features, xs);
    for (double& v : h.data) v = std::tanh(v);
    Matrix out(xs.rows, 1);
    for (std::size_t i = 0; i < h.rows; ++i) {
      double s = anchor_w.at(h.cols, 0);  // bias row
      for (std::size_t d = 0; d < h.cols; ++d)
        s += h.at(i, d) * anchor_w.at(d, 0);
      out.at(i, 0) = s;
    }
    return out;
  }

  double regress(double x) const {
    return regress_batch(Matrix::full(1, 1, x)).at(0, 0);
  }

  /// FNV-1a over the payload bits; for frozen-teacher checks.
  std::uint64_t param_hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    auto eat = [&h](const Matrix& m) {
      for (double v : m.data) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof bits);
        for (int b = 0; b < 8; ++b) {
          h ^= (bits >> (8 * b)) & 0xFF;
          h *= 1099511628211ULL;
        }
      }
    };
    eat(nc_means);
    eat(lr_w);
    eat(lr_b);
    eat(anchor_w);
    if (kind == TeacherKind::MaskedBase && pretrained) eat(pretrained->head);
    return h;
  }
};

/// Nearest-centroid teacher: class means over the full cached base pool,
/// logits are negative squared distances in f-dagger space.
inline Teacher build_nc_teacher(const PretrainedModel& model,
                                const std::vector<int>& class_ids) {
  if (!model.cache_ready)
    throw ProtocolError("nc teacher: feature cache not populated");
  Teacher t;
  t.kind = TeacherKind::NC;
  t.pretrained = &model;
  t.nc_means = Matrix(class_ids.size(), model.feat_dim());
  for (std::size_t c = 0; c < class_ids.size(); ++c) {
    int id = class_ids[c];
    if (id < 0 || static_cast<std::size_t>(id) >= model.num_base)
      throw EpisodeError("nc teacher: class " + std::to_string(id) +
                         " outside the base split");
    std::copy(model.class_feature_means.row_ptr(id),
              model.class_feature_means.row_ptr(id) + model.feat_dim(),
              t.nc_means.row_ptr(c));
  }
  return t;
}

struct LrFitInfo {
  std::size_t iterations = 0;
  double grad_norm = 0.0;
  bool converged = false;
};

inline constexpr std::size_t kLrTeacherMaxPerClass = 50;
inline constexpr double kLrTeacherL2 = 1e-4;
inline constexpr double kLrTeacherTol = 1e-6;
inline constexpr std::size_t kLrTeacherMaxIters = 500;

namespace detail {

/// Mean multinomial cross-entropy + 0.5*reg*|W|^2 and its gradient.
/// Parameters are packed [W (d*c), b (c)].
inline double lr_objective(const Matrix& x, const std::vector<int>& y,
                           std::size_t way, double reg,
                           const std::vector<double>& params,
                           std::vector<double>* grad) {
  const std::size_t n = x.rows, d = x.cols;
  const double* w = params.data();
  const double* b = params.data() + d * way;
  double loss = 0.0;
  if (grad) std::fill(grad->begin(), grad->end(), 0.0);
  std::vector<double> logits(way);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < way; ++c) {
      double s = b[c];
      for (std::size_t k = 0; k < d; ++k) s += x.at(i, k) * w[k * way + c];
      logits[c] = s;
    }
    loss += cross_entropy(logits, static_cast<std::size_t>(y[i]));
    if (grad) {
      auto p = softmax(logits);
      p[static_cast<std::size_t>(y[i])] -= 1.0;
      double* gw = grad->data();
      double* gb = grad->data() + d * way;
      for (std::size_t c = 0; c < way; ++c) {
        gb[c] += p[c];
        for (std::size_t k = 0; k < d; ++k)
          gw[k * way + c] += p[c] * x.at(i, k);
      }
    }
  }
  loss /= static_cast<double>(n);
  if (grad)
    for (double& g : *grad) g /= static_cast<double>(n);
  double reg_term = 0.0;
  for (std::size_t k = 0; k < d * way; ++k) {
    reg_term += w[k] * w[k];
    if (grad) (*grad)[k] += reg * w[k];
  }
  return loss + 0.5 * reg * reg_term;
}

}  // namespace detail

/// Logistic-regression teacher on cached features: at most 50 instances per
/// class, full-batch gradient descent (backtracking step) to grad-norm 1e-6
/// or 500 iterations, L2 1e-4 on the weights.
inline Teacher build_lr_teacher(const PretrainedModel& model,
                                const std::vector<int>& class_ids,
                                const BasePool& pool, RngStream& rng,
                                LrFitInfo* info = nullptr) {
  if (!model.cache_ready)
    throw ProtocolError("lr teacher: feature cache not populated");
  const std::size_t way = class_ids.size();
  const std::size_t d = model.feat_dim();

  std::vector<std::size_t> take;
  std::vector<int> labels;
  for (std::size_t c = 0; c < way; ++c) {
    int id = class_ids[c];
    if (id < 0 || static_cast<std::size_t>(id) >= model.num_base)
      throw EpisodeError("lr teacher: class " + std::to_string(id) +
                         " outside the base split");
    auto [lo, hi] = pool.class_range(id);
    std::size_t have = hi - lo;
    std::size_t want = std::min(kLrTeacherMaxPerClass, have);
    auto pick = rng.sample_without_replacement(have, want);
    for (std::size_t p : pick) {
      take.push_back(lo + p);
      labels.push_back(static_cast<int>(c));
    }
  }
  Matrix x(take.size(), d);
  for (std::size_t i = 0; i < take.size(); ++i)
    std::copy(model.feature_cache.row_ptr(take[i]),
              model.feature_cache.row_ptr(take[i]) + d, x.row_ptr(i));

  std::vector<double> params(d * way + way, 0.0);
  std::vector<double> grad(params.size());
  double step = 1.0;
  double loss = detail::lr_objective(x, labels, way, kLrTeacherL2, params, &grad);
  LrFitInfo fit;
  for (fit.iterations = 0; fit.iterations < kLrTeacherMaxIters;
       ++fit.iterations) {
    fit.grad_norm = std::sqrt(squared_norm(grad));
    if (fit.grad_norm <= kLrTeacherTol) {
      fit.converged = true;
      break;
    }
    // Backtracking (Armijo) with step growth on easy accepts.
    std::vector<double> trial(params.size());
    double g2 = fit.grad_norm * fit.grad_norm;
    for (int tries = 0; tries < 60; ++tries) {
      for (std::size_t i = 0; i < params.size(); ++i)
        trial[i] = params[i] - step * grad[i];
      double new_loss =
          detail::lr_objective(x, labels, way, kLrTeacherL2, trial, nullptr);
      if (new_loss <= loss - 1e-4 * step * g2) break;
      step *= 0.5;
    }
    params.swap(trial);
    loss = detail::lr_objective(x, labels, way, kLrTeacherL2, params, &grad);
    step *= 2.0;
  }
  if (info) *info = fit;

  Teacher t;
  t.kind = TeacherKind::LR;
  t.pretrained = &model;
  t.lr_w = Matrix(d, way);
  std::copy(params.begin(), params.begin() + static_cast<std::ptrdiff_t>(d * way),
            t.lr_w.data.begin());
  t.lr_b = Matrix(1, way);
  std::copy(params.begin() + static_cast<std::ptrdiff_t>(d * way), params.end(),
            t.lr_b.data.begin());
  return t;
}

/// Row selection of the B-way head at the episode's classes. Deliberately
/// uncalibrated; this is the ablation baseline.
inline Teacher build_masked_base_teacher(const PretrainedModel& model,
                                         const std::vector<int>& class_ids) {
  Teacher t;
  t.kind = TeacherKind::MaskedBase;
  t.pretrained = &model;
  for (int id : class_ids)
    if (id < 0 || static_cast<std::size_t>(id) >= model.num_base)
      throw EpisodeError("masked teacher: class " + std::to_string(id) +
                         " outside the base split");
  t.class_ids = class_ids;
  return t;
}

struct AnchorGridConfig {
  double step = 0.1;
  std::size_t samples_per_anchor = 1000;
  std::size_t feature_width = 100;
  std::vector<double> rho_grid = {1e-4, 1e-3, 1e-2, 1e-1};
  std::size_t cv_folds = 5;
};

/// Lazily built lattice of many-shot sine regressors. All anchors share one
/// frozen random two-layer tanh feature map; each cell owns the ridge weights
/// fit on 1000 samples of the cell-center task, with rho picked by
/// cross-validation.
class AnchorGrid {
 public:
  AnchorGrid(AnchorGridConfig cfg, std::uint64_t seed)
      : cfg_(cfg), seed_(seed) {
    RngStream rng = domain_stream(seed, RngDomain::AnchorFit);
    const std::size_t w = cfg.feature_width;
    MlpParams net;
    MlpParams::Layer l1;
    l1.weight = Matrix(1, w);
    for (double& v : l1.weight.data) v = rng.uniform(-6.0, 6.0);
    l1.bias = Matrix(1, w);
    for (double& v : l1.bias.data) v = rng.uniform(-30.0, 30.0);
    MlpParams::Layer l2;
    l2.weight = Matrix(w, w);
    for (double& v : l2.weight.data)
      v = rng.normal() / std::sqrt(static_cast<double>(w));
    l2.bias = Matrix(1, w);
    for (double& v : l2.bias.data) v = rng.uniform(-1.0, 1.0);
    net.layers.push_back(std::move(l1));
    net.layers.push_back(std::move(l2));
    net.hidden_acts = {Activation::Tanh};
    feature_net_ = std::move(net);
  }

  static constexpr double kALo = 0.0, kAHi = 2.0;
  static constexpr double kVLo = 2.0, kVHi = 4.0;
  static constexpr double kBLo = 0.0, kBHi = kTwoPi;

  std::size_t axis_cells(double lo, double hi) const {
    return static_cast<std::size_t>(std::ceil((hi - lo) / cfg_.step - 1e-12));
  }

  std::size_t axis_index(double v, double lo, double hi) const {
    if (v < lo || v > hi)
      throw EpisodeError("anchor grid: value " + std::to_string(v) +
                         " outside [" + std::to_string(lo) + ", " +
                         std::to_string(hi) + "]");
    std::size_t cells = axis_cells(lo, hi);
    auto idx = static_cast<std::size_t>((v - lo) / cfg_.step);
    return std::min(idx, cells - 1);  // upper boundary clamps into last cell
  }

  std::uint32_t cell_index(const SineTaskParams& p) const {
    std::size_t ia = axis_index(p.amplitude, kALo, kAHi);
    std::size_t iv = axis_index(p.frequency, kVLo, kVHi);
    std::size_t ib = axis_index(p.phase, kBLo, kBHi);
    return static_cast<std::uint32_t>(
        (ia * axis_cells(kVLo, kVHi) + iv) * axis_cells(kBLo, kBHi) + ib);
  }

  SineTaskParams cell_center(std::uint32_t cell) const {
    std::size_t nb = axis_cells(kBLo, kBHi), nv = axis_cells(kVLo, kVHi);
    std::size_t ib = cell % nb;
    std::size_t iv = (cell / nb) % nv;
    std::size_t ia = cell / (nb * nv);
    SineTaskParams p;
    p.amplitude = kALo + (static_cast<double>(ia) + 0.5) * cfg_.step;
    p.frequency = kVLo + (static_cast<double>(iv) + 0.5) * cfg_.step;
    p.phase = kBLo + (static_cast<double>(ib) + 0.5) * cfg_.step;
    return p;
  }

  std::size_t total_cells() const {
    return axis_cells(kALo, kAHi) * axis_cells(kVLo, kVHi) *
           axis_cells(kBLo, kBHi);
  }

  /// The memoized teacher for the cell containing `p`.
  Teacher lookup(const SineTaskParams& p) const {
    std::uint32_t cell = cell_index(p);
    std::shared_ptr<CellSlot> slot;
    {
      std::lock_guard<std::mutex> lk(map_mutex_);
      auto& e = cells_[cell];
      if (!e) e = std::make_shared<CellSlot>();
      slot = e;
    }
    {
      std::lock_guard<std::mutex> lk(slot->build_mutex);
      if (!slot->weights) {
        slot->weights =
            std::make_shared<const Matrix>(fit_cell(cell));
        trained_count_.fetch_add(1, std::memory_order_relaxed);
      }
    }
    Teacher t;
    t.kind = TeacherKind::AnchorRegressor;
    t.anchor_features = &feature_net_;
    t.anchor_w = *slot->weights;
    return t;
  }

  std::size_t trained_count() const {
    return trained_count_.load(std::memory_order_relaxed);
  }

  const AnchorGridConfig& config() const { return cfg_; }
  std::uint64_t seed() const { return seed_; }
  const MlpParams& feature_net() const { return feature_net_; }

  /// Feature row [phi(x), 1] for inspection/tests.
  Matrix features_with_bias(const Matrix& xs) const {
    Matrix h = mlp_forward(feature_net_, xs);
    for (double& v : h.data) v = std::tanh(v);
    Matrix out(h.rows, h.cols + 1);
    for (std::size_t i = 0; i < h.rows; ++i) {
      std::copy(h.row_ptr(i), h.row_ptr(i) + h.cols, out.row_ptr(i));
      out.at(i, h.cols) = 1.0;
    }
    return out;
  }

  /// Snapshot of built cells (for persistence).
  std::vector<std::pair<std::uint32_t, Matrix>> snapshot() const {
    std::vector<std::pair<std::uint32_t, Matrix>> out;
    std::lock_guard<std::mutex> lk(map_mutex_);
    for (const auto& [cell, slot] : cells_) {
      if (!slot) continue;
      std::lock_guard<std::mutex> lk2(slot->build_mutex);
      if (slot->weights) out.emplace_back(cell, *slot->weights);
    }
    return out;
  }

  void preload(std::uint32_t cell, Matrix weights) {
    std::lock_guard<std::mutex> lk(map_mutex_);
    auto& e = cells_[cell];
    if (!e) e = std::make_shared<CellSlot>();
    std::lock_guard<std::mutex> lk2(e->build_mutex);
    if (!e->weights)
      e->weights = std::make_shared<const Matrix>(std::move(weights));
  }

 private:
  struct CellSlot {
    std::mutex build_mutex;
    std::shared_ptr<const Matrix> weights;
  };

  Matrix fit_cell(std::uint32_t cell) const {
    const SineTaskParams p = cell_center(cell);
    const std::size_t n = cfg_.samples_per_anchor;
    RngStream rng = domain_stream(seed_, RngDomain::AnchorFit, cell + 1);
    Matrix xs(n, 1);
    Matrix ys(n, 1);
    for (std::size_t i = 0; i < n; ++i) {
      xs.at(i, 0) = rng.uniform(kSineXLo, kSineXHi);
      ys.at(i, 0) = eval_sine(p, xs.at(i, 0), &rng);
    }
    Matrix phi = features_with_bias(xs);
    const std::size_t dim = phi.cols;

    auto ephi = detail::as_eigen(phi);
    auto ey = detail::as_eigen(ys);
    Eigen::MatrixXd g_total = ephi.transpose() * ephi;
    Eigen::VectorXd b_total = ephi.transpose() * ey;

    const std::size_t folds = cfg_.cv_folds;
    std::vector<Eigen::MatrixXd> g_fold(folds,
                                        Eigen::MatrixXd::Zero(dim, dim));
    std::vector<Eigen::VectorXd> b_fold(folds, Eigen::VectorXd::Zero(dim));
    for (std::size_t f = 0; f < folds; ++f) {
      std::size_t lo = f * n / folds, hi = (f + 1) * n / folds;
      auto block = ephi.middleRows(static_cast<Eigen::Index>(lo),
                                   static_cast<Eigen::Index>(hi - lo));
      auto yb = ey.middleRows(static_cast<Eigen::Index>(lo),
                              static_cast<Eigen::Index>(hi - lo));
      g_fold[f] = block.transpose() * block;
      b_fold[f] = block.transpose() * yb;
    }

    double best_rho = cfg_.rho_grid.front();
    double best_err = std::numeric_limits<double>::infinity();
    for (double rho : cfg_.rho_grid) {
      double err = 0.0;
      std::size_t count = 0;
      for (std::size_t f = 0; f < folds; ++f) {
        Eigen::MatrixXd g_train = g_total - g_fold[f];
        g_train.diagonal().array() += rho;
        Eigen::VectorXd w =
            Eigen::LLT<Eigen::MatrixXd>(g_train).solve(b_total - b_fold[f]);
        std::size_t lo = f * n / folds, hi = (f + 1) * n / folds;
        for (std::size_t i = lo; i < hi; ++i) {
          double pred = 0.0;
          for (std::size_t d = 0; d < dim; ++d)
            pred += phi.at(i, d) * w(static_cast<Eigen::Index>(d));
          double r = pred - ys.at(i, 0);
          err += r * r;
          ++count;
        }
      }
      err /= static_cast<double>(count);
      if (err < best_err) {
        best_err = err;
        best_rho = rho;
      }
    }

    Eigen::MatrixXd g_final = g_total;
    g_final.diagonal().array() += best_rho;
    Eigen::VectorXd w = Eigen::LLT<Eigen::MatrixXd>(g_final).solve(b_total);
    Matrix out(dim, 1);
    for (std::size_t d = 0; d < dim; ++d)
      out.at(d, 0) = w(static_cast<Eigen::Index>(d));
    return out;
  }

  AnchorGridConfig cfg_;
  std::uint64_t seed_;
  MlpParams feature_net_;
  mutable std::mutex map_mutex_;
  mutable std::unordered_map<std::uint32_t, std::shared_ptr<CellSlot>> cells_;
  mutable std::atomic<std::size_t> trained_count_{0};
};

inline Teacher lookup_anchor_teacher(const AnchorGrid& grid,
                                     const SineTaskParams& p) {
  return grid.lookup(p);
}

/// What the teacher and the student each see for the distillation term.
struct QueryInputs {
  Matrix teacher_x;
  Matrix student_x;
  bool strengthen_noop = false;  // regression: strengthening has no analog
};

/// Realizes the query-mode contract for classification episodes. The
/// strengthened teacher sees the clean (pre-noise) renditions; the student's
/// input never changes. Weakening feeds one shared perturbed copy to both.
inline QueryInputs prepare_query_inputs(const ClassificationEpisode& ep,
                                        QueryMode mode, double sigma,
                                        RngStream* rng, bool meta_testing) {
  if (meta_testing && mode != QueryMode::Vanilla)
    throw ProtocolError("query mode must be vanilla at meta-test time");
  QueryInputs q;
  switch (mode) {
    case QueryMode::Vanilla:
      q.teacher_x = ep.query_x;
      q.student_x = ep.query_x;
      break;
    case QueryMode::StrengthenTeacher:
      q.teacher_x = ep.query_clean;
      q.student_x = ep.query_x;
      break;
    case QueryMode::WeakenStudent: {
      if (rng == nullptr)
        throw ProtocolError("weaken-student mode needs an rng stream");
      Matrix noisy = ep.query_x;
      for (double& v : noisy.data) v += sigma * rng->normal();
      q.teacher_x = noisy;
      q.student_x = noisy;
      break;
    }
  }
  return q;
}

/// Regression flavor: strengthening is a no-op (anchors are already fit on
/// dense samples and take x only), reported via the flag.
inline QueryInputs prepare_query_inputs_regression(const Matrix& query_x,
                                                   QueryMode mode, double sigma,
                                                   RngStream* rng,
                                                   bool meta_testing) {
  if (meta_testing && mode != QueryMode::Vanilla)
    throw ProtocolError("query mode must be vanilla at meta-test time");
  QueryInputs q;
  q.teacher_x = query_x;
  q.student_x = query_x;
  if (mode == QueryMode::StrengthenTeacher) q.strengthen_noop = true;
  if (mode == QueryMode::WeakenStudent) {
    if (rng == nullptr)
      throw ProtocolError("weaken-student mode needs an rng stream");
    Matrix noisy = query_x;
    for (double& v : noisy.data) v += sigma * rng->normal();
    q.teacher_x = noisy;
    q.student_x = noisy;
  }
  return q;
}

/// Teacher logits under a query mode; the spec-level querying surface.
inline Matrix query_teacher(const Teacher& teacher,
                            const ClassificationEpisode& ep, QueryMode mode,
                            double sigma, RngStream* rng,
                            bool meta_testing = false) {
  QueryInputs q = prepare_query_inputs(ep, mode, sigma, rng, meta_testing);
  return teacher.logits(q.teacher_x);
}

}  // namespace lastshot
