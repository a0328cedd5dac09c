#include <gtest/gtest.h>

#include <filesystem>

#include "lastshot/config.hpp"
#include "lastshot/sha1.hpp"

using namespace lastshot;

TEST(Sha1, KnownVectors) {
  EXPECT_EQ(sha1_hex(""), "da39a3ee5e6b4b0d3255bfef95601890afd80709");
  EXPECT_EQ(sha1_hex("abc"), "a9993e364706816aba3e25717850c26c9cd0d89d");
  EXPECT_EQ(sha1_hex("The quick brown fox jumps over the lazy dog"),
            "2fd4e1c67a2d28fced849ee1bb76e7391b93eb12");
}

TEST(KvParse, CommentsWhitespaceAndErrors) {
  auto kv = parse_kv_text(
      "# a comment\n"
      "task = regression\n"
      "  seed=42   # trailing comment\n"
      "\n"
      "train.lr = 0.5\n");
  EXPECT_EQ(kv.at("task"), "regression");
  EXPECT_EQ(kv.at("seed"), "42");
  EXPECT_EQ(kv.at("train.lr"), "0.5");
  EXPECT_THROW(parse_kv_text("not_a_kv_line\n"), ConfigError);
}

TEST(RunConfig, UnknownKeyRejected) {
  auto kv = parse_kv_text("task = classification\nbogus.key = 1\n");
  try {
    run_config_from_kv(kv);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("bogus.key"), std::string::npos);
  }
}

TEST(RunConfig, RegressionDefaultsMirrorTheStatedRecipe) {
  RunConfig c = RunConfig::regression_defaults();
  EXPECT_EQ(c.train_iterations, 40000u);
  EXPECT_EQ(c.episodes_per_batch, 32u);
  EXPECT_EQ(c.train_iterations * c.episodes_per_batch, 1280000u);
  EXPECT_EQ(c.meta_lr, 0.001);
  EXPECT_EQ(c.meta_momentum, 0.9);
  EXPECT_EQ(c.lr_decay_factor, 0.5);
  EXPECT_EQ(c.lr_decay_every_tasks, 160000u);
  EXPECT_EQ(c.earlystop_val_tasks, 1000u);
  EXPECT_EQ(c.eval_tasks, 1000u);
  EXPECT_EQ(c.eval_queries, 100);

  Manifest m = Manifest::from(c);
  std::string text = m.text();
  EXPECT_NE(text.find("train.iterations = 40000"), std::string::npos);
  EXPECT_NE(text.find("train.batch = 32"), std::string::npos);
  EXPECT_NE(text.find("train.lr = 0.001"), std::string::npos);
  EXPECT_NE(text.find("train.momentum = 0.9"), std::string::npos);
  EXPECT_NE(text.find("train.lr_decay_every_tasks = 160000"),
            std::string::npos);
  EXPECT_NE(text.find("earlystop.val_tasks = 1000"), std::string::npos);
}

TEST(RunConfig, PretrainRecipeEchoedInManifest) {
  RunConfig c;
  Manifest m = Manifest::from(c);
  std::string text = m.text();
  EXPECT_NE(text.find("pretrain.momentum = 0.9"), std::string::npos);
  EXPECT_NE(text.find("pretrain.weight_decay = 0.0005"), std::string::npos);
  EXPECT_NE(text.find("pretrain.batch = 128"), std::string::npos);
  EXPECT_NE(text.find("pretrain.lr = 0.1"), std::string::npos);
  EXPECT_NE(text.find("pretrain.val_tasks = 200"), std::string::npos);
}

TEST(RunConfig, EpisodeBudgetShrinksTrainingQueries) {
  RunConfig c;
  c.train_way = 5;
  c.train_shot = 50;
  c.train_queries = 15;
  EXPECT_EQ(c.effective_train_queries(), 10);  // 300/5 - 50
  c.train_shot = 1;
  EXPECT_EQ(c.effective_train_queries(), 15);
  c.train_shot = 59;
  EXPECT_EQ(c.effective_train_queries(), 1);
}

TEST(RunConfig, HashIgnoresEnvironmentKeys) {
  RunConfig a;
  RunConfig b = a;
  b.workers = 16;
  b.out_dir = "/somewhere/else";
  b.run_id = "other";
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.distill.lambda = 0.5;
  EXPECT_NE(config_hash(a), config_hash(b));
}

TEST(RunConfig, KvRoundTripPreservesHash) {
  RunConfig a = RunConfig::regression_defaults();
  a.seed = 9;
  a.teacher = TeacherChoice::Anchor;
  a.distill.lambda = 0.25;
  auto kv = run_config_kv(a);
  RunConfig b = run_config_from_kv(kv);
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_EQ(run_config_kv(b), kv);
}

TEST(RunConfig, EveryConsumedKeyAppearsInManifest) {
  // Feed a config that sets every known key; the manifest must echo each.
  RunConfig defaults = RunConfig::regression_defaults();
  auto kv = run_config_kv(defaults);
  kv["train.queries_effective"];  // derived key, not an input
  kv.erase("train.queries_effective");
  RunConfig c = run_config_from_kv(kv);
  Manifest m = Manifest::from(c);
  for (const auto& [key, value] : kv) {
    EXPECT_TRUE(m.config.count(key)) << "missing " << key;
  }
}

TEST(RunConfig, CrossTaskValidation) {
  auto bad1 = parse_kv_text("task = classification\nteacher.kind = anchor\n");
  EXPECT_THROW(run_config_from_kv(bad1), ConfigError);
  auto bad2 = parse_kv_text("task = regression\nteacher.kind = nc\n");
  EXPECT_THROW(run_config_from_kv(bad2), ConfigError);
  auto bad3 = parse_kv_text("task = regression\nlearner.kind = ptemb\n");
  EXPECT_THROW(run_config_from_kv(bad3), ConfigError);
  auto ok = parse_kv_text("task = regression\nteacher.kind = anchor\n");
  EXPECT_NO_THROW(run_config_from_kv(ok));
}

TEST(Results, CsvRoundTripExactFloats) {
  std::vector<ResultRow> rows(2);
  rows[0].run_id = "r1";
  rows[0].config_hash = "abc";
  rows[0].learner = "protonet";
  rows[0].teacher = "nc";
  rows[0].way = 5;
  rows[0].shot = 1;
  rows[0].queries_train = 15;
  rows[0].lambda = 0.1 + 0.2;  // not exactly representable sum
  rows[0].tau = 4.0;
  rows[0].mode = "vanilla";
  rows[0].split = "novel";
  rows[0].metric = "accuracy";
  rows[0].mean = 0.6123456789012345678;
  rows[0].ci95 = 1.234567890123456e-3;
  rows[0].n_tasks = 2000;
  rows[0].seed = 7;
  rows[0].wall_ms = 1234;
  rows[1] = rows[0];
  rows[1].mean = 1.0 / 3.0;

  std::string path =
      (std::filesystem::temp_directory_path() / "lastshot_results.csv")
          .string();
  emit_results(rows, path);
  auto parsed = parse_results(path);
  std::filesystem::remove(path);
  ASSERT_EQ(parsed.size(), 2u);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(parsed[i].mean, rows[i].mean);
    EXPECT_EQ(parsed[i].ci95, rows[i].ci95);
    EXPECT_EQ(parsed[i].lambda, rows[i].lambda);
    EXPECT_EQ(parsed[i].run_id, rows[i].run_id);
  }
}

TEST(Results, EmptyListGivesHeaderOnly) {
  std::string path =
      (std::filesystem::temp_directory_path() / "lastshot_empty.csv").string();
  emit_results({}, path);
  std::ifstream in(path);
  std::string line;
  ASSERT_TRUE(std::getline(in, line));
  EXPECT_EQ(line, kResultsHeader);
  EXPECT_FALSE(std::getline(in, line));
  std::filesystem::remove(path);
}

TEST(EvalReportStats, Ci95FormulaAndRecompute) {
  std::vector<double> vals = {0.2, 0.4, 0.6, 0.8};
  EvalReport r = EvalReport::from_values("accuracy", vals);
  EXPECT_EQ(r.n_tasks, 4u);
  EXPECT_NEAR(r.mean, 0.5, 1e-15);
  double mean = 0.5;
  double ss = 0.0;
  for (double v : vals) ss += (v - mean) * (v - mean);
  double sd = std::sqrt(ss / 3.0);
  EXPECT_NEAR(r.ci95, 1.96 * sd / 2.0, 1e-15);

  // Recomputing from retained per-task values matches the stored field.
  EvalReport again = EvalReport::from_values(r.metric, r.per_task);
  EXPECT_NEAR(again.ci95, r.ci95, 1e-12);
  EXPECT_NEAR(again.mean, r.mean, 1e-12);

  EXPECT_THROW(EvalReport::from_values("accuracy", {}), ConfigError);
  EvalReport single = EvalReport::from_values("mse", {0.5});
  EXPECT_EQ(single.ci95, 0.0);
}

TEST(Plotdata, EmitsSeriesLines) {
  std::string path =
      (std::filesystem::temp_directory_path() / "lastshot_plot.tsv").string();
  emit_plotdata({{"protonet", 1.0, 0.62, 0.01}, {"protonet", 5.0, 0.8, 0.008}},
                path);
  std::ifstream in(path);
  std::string header, l1;
  std::getline(in, header);
  std::getline(in, l1);
  EXPECT_EQ(header, "series\tx\tmean\tci95");
  EXPECT_EQ(l1.substr(0, 9), "protonet\t");
  std::filesystem::remove(path);
}
