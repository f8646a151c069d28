// SPDX-License-Identifier: Apache-2.0
#include "prunekit/config.hpp"

#include "prunekit/zoo.hpp"

namespace prunekit {

namespace {

Json stage_json(const StageConfig& s) {
  return Json{{"epochs", s.epochs},   {"lr", s.lr},           {"batch_size", s.batch_size},
              {"lr_step", s.lr_step}, {"lr_decay", s.lr_decay}, {"seed", s.seed}};
}

void read_stage(const Json& doc, const std::string& ctx, StageConfig& s) {
  StrictObject o(doc, ctx);
  o.read("epochs", s.epochs);
  o.read("lr", s.lr);
  o.read("batch_size", s.batch_size);
  o.read("lr_step", s.lr_step);
  o.read("lr_decay", s.lr_decay);
  o.read("seed", s.seed);
  o.finish();
}

}  // namespace

Json config_to_json(const RunConfig& c) {
  Json j;
  j["schema_version"] = kDocumentVersion;
  j["data"] = {{"source", c.data.source},         {"classes", c.data.classes},
               {"image_shape", c.data.image_shape}, {"train_size", c.data.train_size},
               {"test_size", c.data.test_size},   {"seed", c.data.seed},
               {"noise", c.data.noise},           {"jitter", c.data.jitter},
               {"cifar_dir", c.data.cifar_dir},   {"train_images", c.data.train_images},
               {"train_labels", c.data.train_labels}, {"test_images", c.data.test_images},
               {"test_labels", c.data.test_labels}, {"max_train", c.data.max_train},
               {"max_test", c.data.max_test}};
  j["network"] = {{"arch", c.network.arch}, {"width", c.network.width}, {"init_seed", c.network.init_seed}};
  j["train"] = stage_json(c.train);
  j["importance"] = {{"lambda", c.importance.lambda},         {"epochs", c.importance.epochs},
                     {"lr", c.importance.lr},                 {"batch_size", c.importance.batch_size},
                     {"seed", c.importance.seed},             {"reduction", c.importance.reduction}};
  j["plan"] = {{"target_kind", c.plan.target_kind}, {"target", c.plan.target}, {"strategy", c.plan.strategy},
               {"crucial", c.plan.crucial},         {"floor", c.plan.floor},   {"seed", c.plan.seed},
               {"fold_beta", c.plan.fold_beta}};
  j["recover"] = {{"mimic", c.recover.mimic}, {"taps", c.recover.taps}, {"stage", stage_json(c.recover.stage)},
                  {"eps", c.recover.eps},     {"raw_sum", c.recover.raw_sum}};
  j["finetune"] = stage_json(c.finetune);
  j["iterative"] = {{"epochs_per_layer", c.iterative.epochs_per_layer}, {"lr", c.iterative.lr},
                    {"batch_size", c.iterative.batch_size},             {"seed", c.iterative.seed}};
  j["out_dir"] = c.out_dir;
  return j;
}

RunConfig config_from_json(const Json& doc, RunConfig c) {
  StrictObject root(doc, "config");
  if (root.has("schema_version") && root.get<int>("schema_version") != kDocumentVersion) {
    throw FormatError("config schema version is not supported");
  }
  if (root.has("data")) {
    StrictObject o(root.at("data"), "config.data");
    o.read("source", c.data.source);
    o.read("classes", c.data.classes);
    o.read("image_shape", c.data.image_shape);
    o.read("train_size", c.data.train_size);
    o.read("test_size", c.data.test_size);
    o.read("seed", c.data.seed);
    o.read("noise", c.data.noise);
    o.read("jitter", c.data.jitter);
    o.read("cifar_dir", c.data.cifar_dir);
    o.read("train_images", c.data.train_images);
    o.read("train_labels", c.data.train_labels);
    o.read("test_images", c.data.test_images);
    o.read("test_labels", c.data.test_labels);
    o.read("max_train", c.data.max_train);
    o.read("max_test", c.data.max_test);
    o.finish();
  }
  if (root.has("network")) {
    StrictObject o(root.at("network"), "config.network");
    o.read("arch", c.network.arch);
    o.read("width", c.network.width);
    o.read("init_seed", c.network.init_seed);
    o.finish();
  }
  if (root.has("train")) read_stage(root.at("train"), "config.train", c.train);
  if (root.has("importance")) {
    StrictObject o(root.at("importance"), "config.importance");
    o.read("lambda", c.importance.lambda);
    o.read("epochs", c.importance.epochs);
    o.read("lr", c.importance.lr);
    o.read("batch_size", c.importance.batch_size);
    o.read("seed", c.importance.seed);
    o.read("reduction", c.importance.reduction);
    o.finish();
  }
  if (root.has("plan")) {
    StrictObject o(root.at("plan"), "config.plan");
    o.read("target_kind", c.plan.target_kind);
    o.read("target", c.plan.target);
    o.read("strategy", c.plan.strategy);
    o.read("crucial", c.plan.crucial);
    o.read("floor", c.plan.floor);
    o.read("seed", c.plan.seed);
    o.read("fold_beta", c.plan.fold_beta);
    o.finish();
  }
  if (root.has("recover")) {
    StrictObject o(root.at("recover"), "config.recover");
    o.read("mimic", c.recover.mimic);
    o.read("taps", c.recover.taps);
    if (o.has("stage")) read_stage(o.at("stage"), "config.recover.stage", c.recover.stage);
    o.read("eps", c.recover.eps);
    o.read("raw_sum", c.recover.raw_sum);
    o.finish();
  }
  if (root.has("finetune")) read_stage(root.at("finetune"), "config.finetune", c.finetune);
  if (root.has("iterative")) {
    StrictObject o(root.at("iterative"), "config.iterative");
    o.read("epochs_per_layer", c.iterative.epochs_per_layer);
    o.read("lr", c.iterative.lr);
    o.read("batch_size", c.iterative.batch_size);
    o.read("seed", c.iterative.seed);
    o.finish();
  }
  root.read("out_dir", c.out_dir);
  root.finish();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) { return config_from_json(read_json_file(path)); }

RunConfig apply_overrides(const RunConfig& config, const std::vector<std::string>& overrides) {
  Json patch = Json::object();
  for (const auto& ov : overrides) {
    const auto eq = ov.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + ov + "' is not key=value");
    const std::string key = ov.substr(0, eq), raw = ov.substr(eq + 1);
    Json value;
    try {
      value = Json::parse(raw);
    } catch (const nlohmann::json::parse_error&) {
      value = raw;
    }
    Json* node = &patch;
    std::size_t start = 0;
    while (true) {
      const auto dot = key.find('.', start);
      const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
      if (dot == std::string::npos) {
        (*node)[part] = value;
        break;
      }
      if (!node->contains(part)) (*node)[part] = Json::object();
      node = &(*node)[part];
      start = dot + 1;
    }
  }
  return config_from_json(patch, config);
}

void check_config(const RunConfig& c) {
  if (c.data.source != "synth" && c.data.source != "cifar10" && c.data.source != "idx") {
    throw ConfigError("data.source must be synth, cifar10 or idx, got '" + c.data.source + "'");
  }
  for (const auto* s : {&c.train, &c.finetune, &c.recover.stage}) {
    if (s->batch_size == 0) throw ConfigError("batch sizes must be positive");
    if (s->lr < 0.0) throw ConfigError("learning rates must be non-negative");
  }
  if (c.importance.reduction != "mean" && c.importance.reduction != "sum") {
    throw ConfigError("importance.reduction must be mean or sum");
  }
  parse_strategy(c.plan.strategy);
  parse_target_kind(c.plan.target_kind);
  PruneTarget{parse_target_kind(c.plan.target_kind), c.plan.target}.check();
  parse_mimic(c.recover.mimic);
  if (c.network.width == 0) throw ConfigError("network.width must be positive");
}

SplitDataset load_data(const DataConfig& c) {
  if (c.source == "synth") {
    SynthOptions o;
    o.num_classes = c.classes;
    o.image_shape = c.image_shape;
    o.train_size = c.train_size;
    o.test_size = c.test_size;
    o.seed = c.seed;
    o.noise = c.noise;
    o.jitter = c.jitter;
    return synth(o);
  }
  SplitDataset s;
  if (c.source == "cifar10") {
    if (c.cifar_dir.empty()) throw ConfigError("data.cifar_dir is required for cifar10");
    s.train = load_cifar10(cifar10_files(c.cifar_dir, true), "train", c.max_train);
    s.test = load_cifar10(cifar10_files(c.cifar_dir, false), "test", c.max_test);
  } else if (c.source == "idx") {
    s.train = load_idx(c.train_images, c.train_labels, "train", c.max_train);
    s.test = load_idx(c.test_images, c.test_labels, "test", c.max_test);
    s.test.num_classes = s.train.num_classes = std::max(s.train.num_classes, s.test.num_classes);
  } else {
    throw ConfigError("unknown data source '" + c.source + "'");
  }
  const ChannelStats stats = channel_stats(s.train.images);
  normalize(s.train, stats);
  normalize(s.test, stats);
  return s;
}

NetworkSpec load_network(const NetworkConfig& c, const Shape& input_shape, std::size_t num_classes) {
  if (c.arch == "vgg8") return zoo::vgg8(input_shape, num_classes, c.width);
  if (c.arch == "resnet3") return zoo::resnet3(input_shape, num_classes, c.width);
  if (c.arch == "vgg16") return zoo::vgg16(input_shape, num_classes, std::max<std::size_t>(1, 64 / c.width));
  NetworkSpec spec = spec_from_json(read_json_file(c.arch));
  if (spec.input_shape != input_shape || spec.num_classes != num_classes) {
    throw ConfigError("network '" + c.arch + "' expects input " + to_string(spec.input_shape) + " and " +
                      std::to_string(spec.num_classes) + " classes; the data has " + to_string(input_shape) + " and " +
                      std::to_string(num_classes));
  }
  return spec;
}

ImportanceOptions importance_options(const RunConfig& c) {
  return {c.importance.lambda, c.importance.epochs, c.importance.lr, c.importance.batch_size, c.importance.seed};
}

PlanOptions plan_options(const RunConfig& c) {
  return {PruneTarget{parse_target_kind(c.plan.target_kind), c.plan.target}, parse_strategy(c.plan.strategy),
          c.plan.seed, c.plan.floor};
}

TrainOptions train_options(const StageConfig& s, std::string name) {
  return {s.epochs, s.batch_size, s.lr, s.lr_step, s.lr_decay, s.seed, std::move(name)};
}

IterativeOptions iterative_options(const RunConfig& c) {
  return {c.iterative.epochs_per_layer, c.iterative.batch_size, c.iterative.lr, c.iterative.seed};
}

ScoreReduction score_reduction(const RunConfig& c) {
  return c.importance.reduction == "sum" ? ScoreReduction::sum : ScoreReduction::mean;
}

}  // namespace prunekit
