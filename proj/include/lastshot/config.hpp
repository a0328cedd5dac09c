#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "lastshot/classworld.hpp"
#include "lastshot/distill.hpp"
#include "lastshot/learners.hpp"
#include "lastshot/pretrain.hpp"
#include "lastshot/report.hpp"
#include "lastshot/sha1.hpp"

namespace lastshot {

/// Flat `key = value` configuration text; '#' starts a comment.
inline std::map<std::string, std::string> parse_kv_text(
    const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  auto trim = [](std::string s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    std::size_t e = s.find_last_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    return s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": empty key");
    kv[key] = value;
  }
  return kv;
}

inline std::map<std::string, std::string> parse_kv_file(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_kv_text(ss.str());
}

/// Evaluation-only baselines join the trainable learners in CLI configs.
enum class HarnessLearner : std::uint8_t {
  ProtoNet,
  Maml,
  ProtoMaml,
  RidgeHead,
  Kernel,
  PtEmb,
  SimpleShot,
};

inline const char* harness_learner_name(HarnessLearner k) {
  switch (k) {
    case HarnessLearner::ProtoNet: return "protonet";
    case HarnessLearner::Maml: return "maml";
    case HarnessLearner::ProtoMaml: return "protomaml";
    case HarnessLearner::RidgeHead: return "ridge";
    case HarnessLearner::Kernel: return "kernel";
    case HarnessLearner::PtEmb: return "ptemb";
    case HarnessLearner::SimpleShot: return "simpleshot";
  }
  return "?";
}

enum class TeacherChoice : std::uint8_t { None, NC, LR, Masked, Anchor };

inline const char* teacher_choice_name(TeacherChoice t) {
  switch (t) {
    case TeacherChoice::None: return "none";
    case TeacherChoice::NC: return "nc";
    case TeacherChoice::LR: return "lr";
    case TeacherChoice::Masked: return "masked";
    case TeacherChoice::Anchor: return "anchor";
  }
  return "?";
}

/// Everything a run consumes; every field lands in the manifest.
struct RunConfig {
  std::string task = "classification";  // or "regression"
  std::uint64_t seed = 1;
  std::string run_id = "run";

  // Environment-only keys: consumed but excluded from the config hash so a
  // run's identity does not depend on the machine layout.
  std::size_t workers = 1;
  std::string out_dir;
  std::string pretrained_path;
  std::string anchor_cache_path;

  ClassWorldConfig world;
  std::size_t per_class = 600;

  PretrainConfig pretrain;

  HarnessLearner learner = HarnessLearner::ProtoNet;
  double inner_lr = 0.01;
  int inner_steps = 1;
  double ridge_rho = 1.0;
  MetaGradMode meta_grad = MetaGradMode::FirstOrder;
  PreprocessMode pt_preprocess = PreprocessMode::None;

  TeacherChoice teacher = TeacherChoice::None;
  DistillConfig distill;

  std::vector<std::size_t> net_dims = {100, 100, 100};  // regression feature net

  int train_way = 5;
  int train_shot = 1;
  int train_queries = 15;
  std::size_t train_iterations = 5000;
  std::size_t episodes_per_batch = 4;
  double meta_lr = 1e-3;
  double meta_momentum = 0.9;
  double lr_decay_factor = 0.5;
  std::size_t lr_decay_every_tasks = 6667;

  std::size_t earlystop_val_tasks = 0;
  std::size_t earlystop_every_iters = 1000;

  int eval_way = 5;
  int eval_shot = 1;
  int eval_queries = 15;
  std::size_t eval_tasks = 2000;
  Split eval_split = Split::Novel;

  static RunConfig classification_defaults() { return RunConfig{}; }

  static RunConfig regression_defaults() {
    RunConfig c;
    c.task = "regression";
    c.learner = HarnessLearner::Kernel;
    c.teacher = TeacherChoice::None;
    c.distill.lambda = 1.0;  // balance for the weighted-square objective
    c.train_shot = 5;
    c.train_queries = 100;
    c.train_iterations = 40000;
    c.episodes_per_batch = 32;
    c.meta_lr = 1e-3;
    c.lr_decay_every_tasks = 160000;
    c.earlystop_val_tasks = 1000;
    c.earlystop_every_iters = 1000;
    c.eval_shot = 5;
    c.eval_queries = 100;
    c.eval_tasks = 1000;
    return c;
  }

  bool classification() const { return task == "classification"; }

  /// Episode budget C*(K+Q) <= 300: the training query count shrinks as the
  /// shot count grows.
  int effective_train_queries() const {
    if (!classification()) return train_queries;
    int budget = 300 / train_way - train_shot;
    return std::max(1, std::min(train_queries, budget));
  }

  LearnerConfig learner_config() const {
    LearnerConfig lc;
    switch (learner) {
      case HarnessLearner::ProtoNet: lc.kind = LearnerKind::ProtoNet; break;
      case HarnessLearner::Maml: lc.kind = LearnerKind::Maml; break;
      case HarnessLearner::ProtoMaml: lc.kind = LearnerKind::ProtoMaml; break;
      case HarnessLearner::RidgeHead: lc.kind = LearnerKind::RidgeHead; break;
      case HarnessLearner::Kernel: lc.kind = LearnerKind::KernelRegressor; break;
      case HarnessLearner::PtEmb:
      case HarnessLearner::SimpleShot:
        throw ConfigError("learner: " +
                          std::string(harness_learner_name(learner)) +
                          " is evaluation-only and cannot be meta-trained");
    }
    lc.inner_lr = inner_lr;
    lc.inner_steps = inner_steps;
    lc.ridge_rho = ridge_rho;
    lc.meta_grad = meta_grad;
    return lc;
  }

  void validate() const {
    if (task != "classification" && task != "regression")
      throw ConfigError("task must be classification or regression");
    world.validate();
    distill.validate();
    if (learner != HarnessLearner::PtEmb &&
        learner != HarnessLearner::SimpleShot)
      learner_config().validate();
    if (classification()) {
      if (teacher == TeacherChoice::Anchor)
        throw ConfigError("anchor teachers are regression-only");
      if (learner == HarnessLearner::Kernel)
        throw ConfigError("kernel learner is regression-only");
    } else {
      if (teacher == TeacherChoice::NC || teacher == TeacherChoice::LR ||
          teacher == TeacherChoice::Masked)
        throw ConfigError("nc/lr/masked teachers are classification-only");
      if (learner == HarnessLearner::ProtoMaml ||
          learner == HarnessLearner::PtEmb ||
          learner == HarnessLearner::SimpleShot)
        throw ConfigError("learner " +
                          std::string(harness_learner_name(learner)) +
                          " is classification-only");
      if (net_dims.empty()) throw ConfigError("net.dims must be non-empty");
    }
    if (train_way < 1 || eval_way < 1 || train_shot < 1 || eval_shot < 1 ||
        train_queries < 1 || eval_queries < 1)
      throw ConfigError("episode sizes must be >= 1");
    if (eval_tasks < 1) throw ConfigError("eval.tasks must be >= 1");
    if (episodes_per_batch < 1) throw ConfigError("train.batch must be >= 1");
    if (meta_lr <= 0 || meta_momentum < 0 || meta_momentum >= 1)
      throw ConfigError("meta optimizer hyperparameters out of range");
    if (lr_decay_factor <= 0 || lr_decay_factor > 1)
      throw ConfigError("train.lr_decay_factor must be in (0, 1]");
    if (lr_decay_every_tasks < 1)
      throw ConfigError("train.lr_decay_every_tasks must be >= 1");
  }
};

namespace detail {

inline std::string join_dims(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s.push_back(',');
    s += std::to_string(v[i]);
  }
  return s;
}

inline std::vector<std::size_t> parse_dims(const std::string& s,
                                           const std::string& key) {
  std::vector<std::size_t> out;
  std::string cur;
  for (char c : s + ",") {
    if (c == ',') {
      if (!cur.empty()) {
        out.push_back(std::stoull(cur));
        cur.clear();
      }
    } else if (!std::isspace(static_cast<unsigned char>(c))) {
      cur.push_back(c);
    }
  }
  if (out.empty()) throw ConfigError(key + ": empty dimension list");
  return out;
}

template <typename T, typename F>
T parse_or_throw(const std::string& key, const std::string& value, F&& conv) {
  try {
    return conv(value);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": bad value '" + value + "'");
  }
}

}  // namespace detail

/// Applies `kv` onto defaults chosen by the `task` key. Unknown keys are
/// rejected; every consumed key appears in the manifest.
inline RunConfig run_config_from_kv(std::map<std::string, std::string> kv) {
  std::string task = "classification";
  if (auto it = kv.find("task"); it != kv.end()) task = it->second;
  RunConfig c = task == "regression" ? RunConfig::regression_defaults()
                                     : RunConfig::classification_defaults();

  std::set<std::string> consumed;
  auto take = [&](const std::string& key, auto&& apply) {
    auto it = kv.find(key);
    if (it == kv.end()) return;
    apply(it->second);
    consumed.insert(key);
  };
  auto to_u64 = [](const std::string& v) { return std::stoull(v); };
  auto to_int = [](const std::string& v) { return std::stoi(v); };
  auto to_f = [](const std::string& v) { return std::stod(v); };

  take("task", [&](const std::string& v) { c.task = v; });
  take("seed", [&](const std::string& v) {
    c.seed = detail::parse_or_throw<std::uint64_t>("seed", v, to_u64);
  });
  take("run_id", [&](const std::string& v) { c.run_id = v; });
  take("workers", [&](const std::string& v) {
    c.workers = detail::parse_or_throw<std::uint64_t>("workers", v, to_u64);
  });
  take("out", [&](const std::string& v) { c.out_dir = v; });
  take("pretrained", [&](const std::string& v) { c.pretrained_path = v; });
  take("anchor_cache", [&](const std::string& v) { c.anchor_cache_path = v; });

  take("world.latent_dim", [&](const std::string& v) {
    c.world.latent_dim = detail::parse_or_throw<std::size_t>(
        "world.latent_dim", v, to_u64);
  });
  take("world.obs_dim", [&](const std::string& v) {
    c.world.obs_dim =
        detail::parse_or_throw<std::size_t>("world.obs_dim", v, to_u64);
  });
  take("world.classes", [&](const std::string& v) {
    c.world.num_classes =
        detail::parse_or_throw<std::size_t>("world.classes", v, to_u64);
  });
  take("world.base", [&](const std::string& v) {
    c.world.base_classes =
        detail::parse_or_throw<std::size_t>("world.base", v, to_u64);
  });
  take("world.val", [&](const std::string& v) {
    c.world.val_classes =
        detail::parse_or_throw<std::size_t>("world.val", v, to_u64);
  });
  take("world.novel", [&](const std::string& v) {
    c.world.novel_classes =
        detail::parse_or_throw<std::size_t>("world.novel", v, to_u64);
  });
  take("world.sigma", [&](const std::string& v) {
    c.world.within_class_sigma =
        detail::parse_or_throw<double>("world.sigma", v, to_f);
  });
  take("world.mixer_hidden", [&](const std::string& v) {
    c.world.mixer_hidden =
        detail::parse_or_throw<std::size_t>("world.mixer_hidden", v, to_u64);
  });
  take("world.per_class", [&](const std::string& v) {
    c.per_class =
        detail::parse_or_throw<std::size_t>("world.per_class", v, to_u64);
  });

  take("pretrain.epochs", [&](const std::string& v) {
    c.pretrain.epochs =
        detail::parse_or_throw<std::size_t>("pretrain.epochs", v, to_u64);
  });
  take("pretrain.batch", [&](const std::string& v) {
    c.pretrain.batch_size =
        detail::parse_or_throw<std::size_t>("pretrain.batch", v, to_u64);
  });
  take("pretrain.lr", [&](const std::string& v) {
    c.pretrain.lr = detail::parse_or_throw<double>("pretrain.lr", v, to_f);
  });
  take("pretrain.momentum", [&](const std::string& v) {
    c.pretrain.momentum =
        detail::parse_or_throw<double>("pretrain.momentum", v, to_f);
  });
  take("pretrain.weight_decay", [&](const std::string& v) {
    c.pretrain.weight_decay =
        detail::parse_or_throw<double>("pretrain.weight_decay", v, to_f);
  });
  take("pretrain.val_tasks", [&](const std::string& v) {
    c.pretrain.val_tasks =
        detail::parse_or_throw<std::size_t>("pretrain.val_tasks", v, to_u64);
  });
  take("pretrain.hidden", [&](const std::string& v) {
    c.pretrain.encoder_hidden = detail::parse_dims(v, "pretrain.hidden");
  });

  take("net.dims", [&](const std::string& v) {
    c.net_dims = detail::parse_dims(v, "net.dims");
  });

  take("learner.kind", [&](const std::string& v) {
    if (v == "protonet") c.learner = HarnessLearner::ProtoNet;
    else if (v == "maml") c.learner = HarnessLearner::Maml;
    else if (v == "protomaml") c.learner = HarnessLearner::ProtoMaml;
    else if (v == "ridge") c.learner = HarnessLearner::RidgeHead;
    else if (v == "kernel") c.learner = HarnessLearner::Kernel;
    else if (v == "ptemb") c.learner = HarnessLearner::PtEmb;
    else if (v == "simpleshot") c.learner = HarnessLearner::SimpleShot;
    else throw ConfigError("learner.kind: unknown '" + v + "'");
  });
  take("learner.alpha", [&](const std::string& v) {
    c.inner_lr = detail::parse_or_throw<double>("learner.alpha", v, to_f);
  });
  take("learner.inner_steps", [&](const std::string& v) {
    c.inner_steps =
        detail::parse_or_throw<int>("learner.inner_steps", v, to_int);
  });
  take("learner.rho", [&](const std::string& v) {
    c.ridge_rho = detail::parse_or_throw<double>("learner.rho", v, to_f);
  });
  take("learner.meta_grad", [&](const std::string& v) {
    if (v == "first_order") c.meta_grad = MetaGradMode::FirstOrder;
    else if (v == "exact") c.meta_grad = MetaGradMode::Exact;
    else throw ConfigError("learner.meta_grad: unknown '" + v + "'");
  });
  take("learner.preprocess", [&](const std::string& v) {
    if (v == "none") c.pt_preprocess = PreprocessMode::None;
    else if (v == "center") c.pt_preprocess = PreprocessMode::Center;
    else if (v == "center_l2") c.pt_preprocess = PreprocessMode::CenterL2;
    else throw ConfigError("learner.preprocess: unknown '" + v + "'");
  });

  take("teacher.kind", [&](const std::string& v) {
    if (v == "none") c.teacher = TeacherChoice::None;
    else if (v == "nc") c.teacher = TeacherChoice::NC;
    else if (v == "lr") c.teacher = TeacherChoice::LR;
    else if (v == "masked") c.teacher = TeacherChoice::Masked;
    else if (v == "anchor") c.teacher = TeacherChoice::Anchor;
    else throw ConfigError("teacher.kind: unknown '" + v + "'");
  });

  take("distill.tau", [&](const std::string& v) {
    c.distill.tau = detail::parse_or_throw<double>("distill.tau", v, to_f);
  });
  take("distill.lambda", [&](const std::string& v) {
    c.distill.lambda =
        detail::parse_or_throw<double>("distill.lambda", v, to_f);
  });
  take("distill.mode", [&](const std::string& v) {
    if (v == "vanilla") c.distill.mode = QueryMode::Vanilla;
    else if (v == "strengthen") c.distill.mode = QueryMode::StrengthenTeacher;
    else if (v == "weaken") c.distill.mode = QueryMode::WeakenStudent;
    else throw ConfigError("distill.mode: unknown '" + v + "'");
  });
  take("distill.sigma", [&](const std::string& v) {
    c.distill.weaken_sigma =
        detail::parse_or_throw<double>("distill.sigma", v, to_f);
  });

  take("train.way", [&](const std::string& v) {
    c.train_way = detail::parse_or_throw<int>("train.way", v, to_int);
  });
  take("train.shot", [&](const std::string& v) {
    c.train_shot = detail::parse_or_throw<int>("train.shot", v, to_int);
  });
  take("train.queries", [&](const std::string& v) {
    c.train_queries = detail::parse_or_throw<int>("train.queries", v, to_int);
  });
  take("train.iterations", [&](const std::string& v) {
    c.train_iterations =
        detail::parse_or_throw<std::size_t>("train.iterations", v, to_u64);
  });
  take("train.batch", [&](const std::string& v) {
    c.episodes_per_batch =
        detail::parse_or_throw<std::size_t>("train.batch", v, to_u64);
  });
  take("train.lr", [&](const std::string& v) {
    c.meta_lr = detail::parse_or_throw<double>("train.lr", v, to_f);
  });
  take("train.momentum", [&](const std::string& v) {
    c.meta_momentum =
        detail::parse_or_throw<double>("train.momentum", v, to_f);
  });
  take("train.lr_decay_factor", [&](const std::string& v) {
    c.lr_decay_factor =
        detail::parse_or_throw<double>("train.lr_decay_factor", v, to_f);
  });
  take("train.lr_decay_every_tasks", [&](const std::string& v) {
    c.lr_decay_every_tasks = detail::parse_or_throw<std::size_t>(
        "train.lr_decay_every_tasks", v, to_u64);
  });

  take("earlystop.val_tasks", [&](const std::string& v) {
    c.earlystop_val_tasks =
        detail::parse_or_throw<std::size_t>("earlystop.val_tasks", v, to_u64);
  });
  take("earlystop.every_iters", [&](const std::string& v) {
    c.earlystop_every_iters = detail::parse_or_throw<std::size_t>(
        "earlystop.every_iters", v, to_u64);
  });

  take("eval.way", [&](const std::string& v) {
    c.eval_way = detail::parse_or_throw<int>("eval.way", v, to_int);
  });
  take("eval.shot", [&](const std::string& v) {
    c.eval_shot = detail::parse_or_throw<int>("eval.shot", v, to_int);
  });
  take("eval.queries", [&](const std::string& v) {
    c.eval_queries = detail::parse_or_throw<int>("eval.queries", v, to_int);
  });
  take("eval.tasks", [&](const std::string& v) {
    c.eval_tasks =
        detail::parse_or_throw<std::size_t>("eval.tasks", v, to_u64);
  });
  take("eval.split", [&](const std::string& v) {
    if (v == "base") c.eval_split = Split::Base;
    else if (v == "val") c.eval_split = Split::Val;
    else if (v == "novel") c.eval_split = Split::Novel;
    else throw ConfigError("eval.split: unknown '" + v + "'");
  });

  for (const auto& [key, value] : kv)
    if (!consumed.count(key))
      throw ConfigError("unknown config key: " + key);

  c.validate();
  return c;
}

inline const std::set<std::string>& environment_keys() {
  static const std::set<std::string> keys = {
      "workers", "out", "pretrained", "anchor_cache", "run_id"};
  return keys;
}

/// Every resolved key, in manifest form.
inline std::map<std::string, std::string> run_config_kv(const RunConfig& c) {
  std::map<std::string, std::string> kv;
  kv["task"] = c.task;
  kv["seed"] = std::to_string(c.seed);
  kv["run_id"] = c.run_id;
  kv["workers"] = std::to_string(c.workers);
  kv["out"] = c.out_dir;
  kv["pretrained"] = c.pretrained_path;
  kv["anchor_cache"] = c.anchor_cache_path;
  kv["world.latent_dim"] = std::to_string(c.world.latent_dim);
  kv["world.obs_dim"] = std::to_string(c.world.obs_dim);
  kv["world.classes"] = std::to_string(c.world.num_classes);
  kv["world.base"] = std::to_string(c.world.base_classes);
  kv["world.val"] = std::to_string(c.world.val_classes);
  kv["world.novel"] = std::to_string(c.world.novel_classes);
  kv["world.sigma"] = format_double(c.world.within_class_sigma);
  kv["world.mixer_hidden"] = std::to_string(c.world.mixer_hidden);
  kv["world.per_class"] = std::to_string(c.per_class);
  kv["pretrain.epochs"] = std::to_string(c.pretrain.epochs);
  kv["pretrain.batch"] = std::to_string(c.pretrain.batch_size);
  kv["pretrain.lr"] = format_double(c.pretrain.lr);
  kv["pretrain.momentum"] = format_double(c.pretrain.momentum);
  kv["pretrain.weight_decay"] = format_double(c.pretrain.weight_decay);
  kv["pretrain.val_tasks"] = std::to_string(c.pretrain.val_tasks);
  kv["pretrain.hidden"] = detail::join_dims(c.pretrain.encoder_hidden);
  kv["net.dims"] = detail::join_dims(c.net_dims);
  kv["learner.kind"] = harness_learner_name(c.learner);
  kv["learner.alpha"] = format_double(c.inner_lr);
  kv["learner.inner_steps"] = std::to_string(c.inner_steps);
  kv["learner.rho"] = format_double(c.ridge_rho);
  kv["learner.meta_grad"] =
      c.meta_grad == MetaGradMode::Exact ? "exact" : "first_order";
  kv["learner.preprocess"] = preprocess_name(c.pt_preprocess);
  kv["teacher.kind"] = teacher_choice_name(c.teacher);
  kv["distill.tau"] = format_double(c.distill.tau);
  kv["distill.lambda"] = format_double(c.distill.lambda);
  kv["distill.mode"] = query_mode_name(c.distill.mode);
  kv["distill.sigma"] = format_double(c.distill.weaken_sigma);
  kv["train.way"] = std::to_string(c.train_way);
  kv["train.shot"] = std::to_string(c.train_shot);
  kv["train.queries"] = std::to_string(c.train_queries);
  kv["train.queries_effective"] = std::to_string(c.effective_train_queries());
  kv["train.iterations"] = std::to_string(c.train_iterations);
  kv["train.batch"] = std::to_string(c.episodes_per_batch);
  kv["train.lr"] = format_double(c.meta_lr);
  kv["train.momentum"] = format_double(c.meta_momentum);
  kv["train.lr_decay_factor"] = format_double(c.lr_decay_factor);
  kv["train.lr_decay_every_tasks"] = std::to_string(c.lr_decay_every_tasks);
  kv["earlystop.val_tasks"] = std::to_string(c.earlystop_val_tasks);
  kv["earlystop.every_iters"] = std::to_string(c.earlystop_every_iters);
  kv["eval.way"] = std::to_string(c.eval_way);
  kv["eval.shot"] = std::to_string(c.eval_shot);
  kv["eval.queries"] = std::to_string(c.eval_queries);
  kv["eval.tasks"] = std::to_string(c.eval_tasks);
  kv["eval.split"] = split_name(c.eval_split);
  return kv;
}

/// SHA-1 over the sorted non-environment key=value lines.
inline std::string config_hash(const RunConfig& c) {
  std::map<std::string, std::string> kv = run_config_kv(c);
  std::string text;
  for (const auto& [key, value] : kv) {
    if (environment_keys().count(key)) continue;
    text += key;
    text += '=';
    text += value;
    text += '\n';
  }
  return sha1_hex(text);
}

/// Run manifest: resolved config, content hash, then notes and warnings.
struct Manifest {
  std::map<std::string, std::string> config;
  std::string hash;
  std::vector<std::string> notes;     // note.* lines
  std::vector<std::string> warnings;  // warn.* lines

  static Manifest from(const RunConfig& c) {
    Manifest m;
    m.config = run_config_kv(c);
    m.hash = config_hash(c);
    return m;
  }

  std::string text() const {
    std::string out;
    for (const auto& [key, value] : config) {
      out += key;
      out += " = ";
      out += value;
      out += '\n';
    }
    out += "config_hash = " + hash + "\n";
    for (const std::string& n : notes) out += n + "\n";
    for (const std::string& w : warnings) out += w + "\n";
    return out;
  }

  void write(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw IoError("manifest: cannot open " + path);
    f << text();
    f.close();
    if (!f) throw IoError("manifest: write failed for " + path);
  }
};

}  // namespace lastshot
