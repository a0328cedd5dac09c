#pragma once

#include <memory>
#include <string>
#include <vector>

#include "lastshot/matrix.hpp"
#include "lastshot/mlp.hpp"
#include "lastshot/rng.hpp"

namespace lastshot {

enum class Split : std::uint8_t { Base, Val, Novel };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::Base: return "base";
    case Split::Val: return "val";
    case Split::Novel: return "novel";
  }
  return "?";
}

struct ClassWorldConfig {
  std::size_t latent_dim = 16;
  std::size_t obs_dim = 32;
  std::size_t num_classes = 100;
  std::size_t base_classes = 64;
  std::size_t val_classes = 16;
  std::size_t novel_classes = 20;
  double within_class_sigma = 0.6;
  std::size_t mixer_hidden = 32;
  bool identity_mixer = false;  // test hook: observations == latents

  void validate() const {
    if (base_classes + val_classes + novel_classes != num_classes)
      throw ConfigError("world: split counts " +
                        std::to_string(base_classes) + "/" +
                        std::to_string(val_classes) + "/" +
                        std::to_string(novel_classes) +
                        " do not cover num_classes=" +
                        std::to_string(num_classes));
    if (within_class_sigma < 0.0) throw ConfigError("world: sigma < 0");
    if (identity_mixer && latent_dim != obs_dim)
      throw ConfigError("world: identity mixer needs latent_dim == obs_dim");
    if (latent_dim == 0 || obs_dim == 0 || num_classes == 0)
      throw ConfigError("world: zero dimension");
  }
};

/// Fixed pool of labeled instances from the base classes; the single data
/// source for pre-training and teacher construction.
struct BasePool {
  Matrix x;                    // (num_base*per_class) x obs_dim
  std::vector<int> labels;     // global class ids
  std::size_t per_class = 0;
  std::size_t num_base = 0;

  std::size_t size() const { return labels.size(); }
  /// Pool rows of class `global_id` occupy one contiguous block.
  std::pair<std::size_t, std::size_t> class_range(int global_id) const {
    std::size_t begin = static_cast<std::size_t>(global_id) * per_class;
    return {begin, begin + per_class};
  }
};

/// Synthetic classification world: Gaussian class centers in latent space,
/// pushed through a frozen random nonlinearity into observation space.
struct ClassWorld {
  ClassWorldConfig cfg;
  std::uint64_t seed = 0;
  Matrix class_means;  // num_classes x latent_dim
  MlpParams mixer;     // latent -> obs, frozen after construction

  mutable std::shared_ptr<const BasePool> pool_cache;

  std::vector<int> split_ids(Split s) const {
    std::size_t lo = 0, hi = 0;
    switch (s) {
      case Split::Base: lo = 0; hi = cfg.base_classes; break;
      case Split::Val:
        lo = cfg.base_classes;
        hi = cfg.base_classes + cfg.val_classes;
        break;
      case Split::Novel:
        lo = cfg.base_classes + cfg.val_classes;
        hi = cfg.num_classes;
        break;
    }
    std::vector<int> ids;
    ids.reserve(hi - lo);
    for (std::size_t i = lo; i < hi; ++i) ids.push_back(static_cast<int>(i));
    return ids;
  }

  std::size_t split_size(Split s) const { return split_ids(s).size(); }

  Matrix mix(const Matrix& latents) const {
    if (cfg.identity_mixer) return latents;
    return mlp_forward(mixer, latents);
  }
};

inline ClassWorld build_class_world(const ClassWorldConfig& cfg,
                                    RngStream& rng) {
  cfg.validate();
  ClassWorld w;
  w.cfg = cfg;
  w.class_means = Matrix(cfg.num_classes, cfg.latent_dim);
  for (double& v : w.class_means.data) v = rng.normal();
  // Pairwise-distinct means: astronomically likely already, still enforced.
  for (std::size_t i = 0; i < cfg.num_classes; ++i)
    for (std::size_t j = i + 1; j < cfg.num_classes; ++j) {
      double d = 0.0;
      for (std::size_t k = 0; k < cfg.latent_dim; ++k) {
        double t = w.class_means.at(i, k) - w.class_means.at(j, k);
        d += t * t;
      }
      if (d == 0.0)
        throw NumericError("world: duplicate class means " + std::to_string(i) +
                           "," + std::to_string(j));
    }
  if (!cfg.identity_mixer) {
    w.mixer = MlpParams::init({cfg.latent_dim, cfg.mixer_hidden, cfg.obs_dim},
                              {Activation::Tanh}, rng);
  }
  return w;
}

struct ClassificationEpisode {
  int way = 0;
  int shot = 0;
  int queries_per_class = 0;
  std::vector<int> class_ids;      // global ids; index == local label
  Matrix support_x;                // (way*shot) x obs_dim
  std::vector<int> support_y;      // local labels
  Matrix query_x;                  // (way*queries) x obs_dim
  std::vector<int> query_y;
  Matrix query_clean;              // noise-free renditions, same layout
};

inline ClassificationEpisode sample_classification_episode(
    const ClassWorld& w, Split split, int way, int shot, int queries_per_class,
    RngStream& rng) {
  std::vector<int> pool_ids = w.split_ids(split);
  if (way < 1 || static_cast<std::size_t>(way) > pool_ids.size())
    throw ConfigError("episode: way " + std::to_string(way) + " exceeds " +
                      split_name(split) + " split of " +
                      std::to_string(pool_ids.size()) + " classes");
  if (shot < 1 || queries_per_class < 1)
    throw ConfigError("episode: shot and queries must be >= 1");

  ClassificationEpisode ep;
  ep.way = way;
  ep.shot = shot;
  ep.queries_per_class = queries_per_class;
  auto pick = rng.sample_without_replacement(pool_ids.size(),
                                             static_cast<std::size_t>(way));
  for (std::size_t i : pick) ep.class_ids.push_back(pool_ids[i]);

  const std::size_t latent = w.cfg.latent_dim;
  const std::size_t n_support = static_cast<std::size_t>(way) * shot;
  const std::size_t n_query = static_cast<std::size_t>(way) * queries_per_class;
  Matrix z_support(n_support, latent), z_query(n_query, latent);
  Matrix z_clean(n_query, latent);
  ep.support_y.reserve(n_support);
  ep.query_y.reserve(n_query);

  for (int c = 0; c < way; ++c) {
    const double* mean = w.class_means.row_ptr(ep.class_ids[c]);
    for (int k = 0; k < shot; ++k) {
      std::size_t r = static_cast<std::size_t>(c) * shot + k;
      for (std::size_t d = 0; d < latent; ++d)
        z_support.at(r, d) = mean[d] + w.cfg.within_class_sigma * rng.normal();
      ep.support_y.push_back(c);
    }
    for (int q = 0; q < queries_per_class; ++q) {
      std::size_t r = static_cast<std::size_t>(c) * queries_per_class + q;
      for (std::size_t d = 0; d < latent; ++d) {
        z_query.at(r, d) = mean[d] + w.cfg.within_class_sigma * rng.normal();
        z_clean.at(r, d) = mean[d];
      }
      ep.query_y.push_back(c);
    }
  }
  ep.support_x = w.mix(z_support);
  ep.query_x = w.mix(z_query);
  ep.query_clean = w.mix(z_clean);
  return ep;
}

/// Builds (once) and returns the cached base-class pool. Later calls must use
/// the same per_class and get the identical pool object.
inline const BasePool& enumerate_base_data(const ClassWorld& w,
                                           std::size_t per_class,
                                           RngStream& rng) {
  if (per_class < 1) throw ConfigError("base pool: per_class must be >= 1");
  if (w.pool_cache) {
    if (w.pool_cache->per_class != per_class)
      throw ConfigError("base pool: cached with per_class=" +
                        std::to_string(w.pool_cache->per_class) +
                        ", requested " + std::to_string(per_class));
    return *w.pool_cache;
  }
  auto pool = std::make_shared<BasePool>();
  pool->per_class = per_class;
  pool->num_base = w.cfg.base_classes;
  const std::size_t latent = w.cfg.latent_dim;
  Matrix z(w.cfg.base_classes * per_class, latent);
  pool->labels.reserve(z.rows);
  for (std::size_t c = 0; c < w.cfg.base_classes; ++c) {
    const double* mean = w.class_means.row_ptr(c);
    for (std::size_t k = 0; k < per_class; ++k) {
      std::size_t r = c * per_class + k;
      for (std::size_t d = 0; d < latent; ++d)
        z.at(r, d) = mean[d] + w.cfg.within_class_sigma * rng.normal();
      pool->labels.push_back(static_cast<int>(c));
    }
  }
  pool->x = w.mix(z);
  w.pool_cache = pool;
  return *w.pool_cache;
}

}  // namespace lastshot
