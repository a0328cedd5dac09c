#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "lastshot/pretrain.hpp"
#include "lastshot/serialize.hpp"

using namespace lastshot;

namespace {

ClassWorldConfig small_cfg() {
  ClassWorldConfig cfg;
  cfg.latent_dim = 8;
  cfg.obs_dim = 12;
  cfg.num_classes = 14;
  cfg.base_classes = 10;
  cfg.val_classes = 2;
  cfg.novel_classes = 2;
  cfg.mixer_hidden = 12;
  return cfg;
}

struct SmallSetup {
  ClassWorld world;
  const BasePool* pool;
};

SmallSetup small_world(std::uint64_t seed, std::size_t per_class = 40) {
  SmallSetup s;
  RngStream rng = domain_stream(seed, RngDomain::WorldBuild);
  s.world = build_class_world(small_cfg(), rng);
  s.world.seed = seed;
  RngStream prng = domain_stream(seed, RngDomain::BasePool);
  s.pool = &enumerate_base_data(s.world, per_class, prng);
  return s;
}

PretrainConfig quick_pretrain_cfg() {
  PretrainConfig cfg;
  cfg.epochs = 6;
  cfg.val_tasks = 20;
  cfg.encoder_hidden = {16, 16};
  return cfg;
}

}  // namespace

TEST(Pretrain, PoolCeStrictlyDecreasesOverFirstEpochEverySeed) {
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    SmallSetup s = small_world(seed);
    PretrainConfig cfg = quick_pretrain_cfg();
    cfg.epochs = 2;
    cfg.track_pool_ce = true;
    PretrainResult r = pretrain_base_classifier(s.world, *s.pool, cfg, seed);
    ASSERT_EQ(r.pool_ce.size(), 3u);  // initial + 2 epochs
    EXPECT_LT(r.pool_ce[1], r.pool_ce[0]);
    EXPECT_LT(r.pool_ce[2], r.pool_ce[1]);
  }
}

TEST(Pretrain, SingleClassPoolRejected) {
  ClassWorldConfig cfg = small_cfg();
  cfg.num_classes = 5;
  cfg.base_classes = 1;
  cfg.val_classes = 2;
  cfg.novel_classes = 2;
  RngStream rng = RngStream::from(4, 0);
  ClassWorld w = build_class_world(cfg, rng);
  RngStream prng = RngStream::from(4, 1);
  const BasePool& pool = enumerate_base_data(w, 10, prng);
  EXPECT_THROW(pretrain_base_classifier(w, pool, quick_pretrain_cfg(), 4),
               TrainingError);
}

TEST(Pretrain, DefaultHyperparametersAreTheStatedRecipe) {
  PretrainConfig cfg;
  EXPECT_EQ(cfg.momentum, 0.9);
  EXPECT_EQ(cfg.weight_decay, 0.0005);
  EXPECT_EQ(cfg.batch_size, 128u);
  EXPECT_EQ(cfg.lr, 0.1);
  EXPECT_EQ(cfg.val_tasks, 200u);
}

TEST(ExtractFeatures, CacheCoversPoolAndIsIdempotent) {
  SmallSetup s = small_world(5);
  PretrainResult r =
      pretrain_base_classifier(s.world, *s.pool, quick_pretrain_cfg(), 5);
  PretrainedModel& m = r.model;

  extract_features(m, *s.pool);
  EXPECT_TRUE(m.cache_ready);
  EXPECT_EQ(m.feature_cache.rows, s.pool->size());

  // Cached row equals a fresh forward pass bit-for-bit.
  Matrix one(1, s.pool->x.cols);
  std::copy(s.pool->x.row_ptr(7), s.pool->x.row_ptr(7) + s.pool->x.cols,
            one.row_ptr(0));
  Matrix fresh = mlp_forward(m.encoder, one);
  for (std::size_t d = 0; d < fresh.cols; ++d)
    EXPECT_EQ(m.feature_cache.at(7, d), fresh.at(0, d));

  // Second call performs no recomputation.
  std::uint64_t ops_before = m.forward_ops;
  extract_features(m, *s.pool);
  EXPECT_EQ(m.forward_ops, ops_before);
}

TEST(PtEmb, SupportInstanceClassifiedAsItsOwnClass) {
  SmallSetup s = small_world(6);
  PretrainResult r =
      pretrain_base_classifier(s.world, *s.pool, quick_pretrain_cfg(), 6);
  RngStream ep_rng = RngStream::from(6, 9);
  ClassificationEpisode ep =
      sample_classification_episode(s.world, Split::Novel, 2, 1, 2, ep_rng);
  // Make the query identical to a support instance.
  ClassificationEpisode probe = ep;
  probe.query_x = ep.support_x;
  probe.query_y = ep.support_y;
  probe.queries_per_class = 1;
  PtEmbResult res = pt_emb_classify(r.model, probe, PreprocessMode::None);
  EXPECT_EQ(res.predictions, probe.query_y);
}

TEST(PtEmb, TieBreaksTowardLowerClassIndex) {
  PretrainedModel m;
  m.encoder.layers.push_back({Matrix::identity(2), Matrix(1, 2)});
  m.num_base = 2;

  ClassificationEpisode ep;
  ep.way = 2;
  ep.shot = 1;
  ep.queries_per_class = 1;
  ep.class_ids = {0, 1};
  ep.support_x = Matrix(2, 2, {0.0, 0.0, 2.0, 0.0});
  ep.support_y = {0, 1};
  ep.query_x = Matrix(1, 2, {1.0, 0.0});  // equidistant
  ep.query_y = {0};
  PtEmbResult res = pt_emb_classify(m, ep, PreprocessMode::None);
  EXPECT_EQ(res.predictions[0], 0);
  EXPECT_NEAR(res.logits.at(0, 0), res.logits.at(0, 1), 1e-12);
}

TEST(PtEmb, CenterL2InvariantToGlobalFeatureScale) {
  SmallSetup s = small_world(7);
  PretrainResult r =
      pretrain_base_classifier(s.world, *s.pool, quick_pretrain_cfg(), 7);
  PretrainedModel scaled = r.model;
  // Final encoder layer is linear, so scaling it scales every feature by 10.
  for (double& v : scaled.encoder.layers.back().weight.data) v *= 10.0;
  for (double& v : scaled.encoder.layers.back().bias.data) v *= 10.0;

  extract_features(r.model, *s.pool);
  extract_features(scaled, *s.pool);

  RngStream ep_rng = RngStream::from(7, 3);
  ClassificationEpisode ep =
      sample_classification_episode(s.world, Split::Novel, 2, 3, 5, ep_rng);
  PtEmbResult a = pt_emb_classify(r.model, ep, PreprocessMode::CenterL2);
  PtEmbResult b = pt_emb_classify(scaled, ep, PreprocessMode::CenterL2);
  EXPECT_EQ(a.predictions, b.predictions);
  for (std::size_t i = 0; i < a.logits.size(); ++i)
    EXPECT_NEAR(a.logits.data[i], b.logits.data[i], 1e-9);
}

TEST(PtEmb, CenteringCancelsConstantFeatureOffset) {
  SmallSetup s = small_world(8);
  PretrainResult r =
      pretrain_base_classifier(s.world, *s.pool, quick_pretrain_cfg(), 8);
  PretrainedModel shifted = r.model;
  for (double& v : shifted.encoder.layers.back().bias.data) v += 3.7;

  extract_features(r.model, *s.pool);
  extract_features(shifted, *s.pool);

  RngStream ep_rng = RngStream::from(8, 3);
  ClassificationEpisode ep =
      sample_classification_episode(s.world, Split::Novel, 2, 2, 6, ep_rng);
  for (PreprocessMode mode : {PreprocessMode::Center, PreprocessMode::CenterL2}) {
    PtEmbResult a = pt_emb_classify(r.model, ep, mode);
    PtEmbResult b = pt_emb_classify(shifted, ep, mode);
    EXPECT_EQ(a.predictions, b.predictions);
  }
}

TEST(PtEmb, CenterL2RowsHaveUnitNorm) {
  SmallSetup s = small_world(9);
  PretrainResult r =
      pretrain_base_classifier(s.world, *s.pool, quick_pretrain_cfg(), 9);
  extract_features(r.model, *s.pool);
  Matrix f = r.model.encode(s.pool->x);
  Matrix pp = preprocess_features(r.model, f, PreprocessMode::CenterL2);
  for (std::size_t i = 0; i < std::min<std::size_t>(pp.rows, 50); ++i) {
    double n2 = 0.0;
    for (std::size_t d = 0; d < pp.cols; ++d) n2 += pp.at(i, d) * pp.at(i, d);
    EXPECT_NEAR(std::sqrt(n2), 1.0, 1e-10);
  }
}

TEST(Pretrain, KeepsBestEncoderByValidation) {
  SmallSetup s = small_world(10);
  PretrainConfig cfg = quick_pretrain_cfg();
  PretrainResult r = pretrain_base_classifier(s.world, *s.pool, cfg, 10);
  ASSERT_EQ(r.val_accuracies.size(), cfg.epochs);
  double best = -1.0;
  for (double v : r.val_accuracies) best = std::max(best, v);
  EXPECT_EQ(r.val_accuracies[r.best_epoch], best);
}

TEST(PretrainedModelSerialization, RoundTrip) {
  SmallSetup s = small_world(11);
  PretrainResult r =
      pretrain_base_classifier(s.world, *s.pool, quick_pretrain_cfg(), 11);
  extract_features(r.model, *s.pool);

  std::string path =
      (std::filesystem::temp_directory_path() / "lastshot_pretrained.bin")
          .string();
  save_pretrained(r.model, path);
  PretrainedModel m = load_pretrained(path);
  std::filesystem::remove(path);

  EXPECT_EQ(m.encoder.flatten(), r.model.encoder.flatten());
  EXPECT_EQ(m.head.data, r.model.head.data);
  EXPECT_EQ(m.cache_ready, true);
  EXPECT_EQ(m.feature_cache.data, r.model.feature_cache.data);
  EXPECT_EQ(m.class_feature_means.data, r.model.class_feature_means.data);
}
