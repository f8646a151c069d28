// SPDX-License-Identifier: Apache-2.0
#include "prunekit/serialize.hpp"

#include <algorithm>
#include <fstream>

namespace prunekit {

StrictObject::StrictObject(const Json& doc, std::string context) : doc_(doc), context_(std::move(context)) {
  if (!doc_.is_object()) throw FormatError(context_ + " must be an object");
}

bool StrictObject::has(const std::string& key) const { return doc_.contains(key); }

const Json& StrictObject::at(const std::string& key) {
  if (!doc_.contains(key)) throw FormatError(context_ + " is missing '" + key + "'");
  used_.push_back(key);
  return doc_.at(key);
}

void StrictObject::finish() const {
  std::string unknown;
  for (const auto& [key, value] : doc_.items()) {
    if (std::find(used_.begin(), used_.end(), key) == used_.end()) unknown += (unknown.empty() ? "" : ", ") + key;
  }
  if (!unknown.empty()) throw ConfigError(context_ + " has unknown keys: " + unknown);
}

namespace {

void check_version(StrictObject& obj, std::string_view what) {
  const int v = obj.get<int>("schema_version");
  if (v != kDocumentVersion) {
    throw FormatError(std::string(what) + " schema version " + std::to_string(v) + " is not supported (expected " +
                      std::to_string(kDocumentVersion) + ")");
  }
}

}  // namespace

Json spec_to_json(const NetworkSpec& spec) {
  Json layers = Json::array();
  for (const auto& l : spec.layers) {
    Json j;
    j["id"] = l.id;
    j["kind"] = layer_kind_name(l.kind);
    j["inputs"] = l.inputs;
    switch (l.kind) {
      case LayerKind::conv:
        j["in_channels"] = l.in_channels;
        j["out_channels"] = l.out_channels;
        j["kernel"] = {l.kernel_h, l.kernel_w};
        j["stride"] = l.stride;
        j["pad"] = l.pad;
        j["prunable"] = l.prunable;
        break;
      case LayerKind::linear:
        j["in_features"] = l.in_features;
        j["out_features"] = l.out_features;
        break;
      case LayerKind::frozen_affine:
        if (!l.scale.empty()) j["scale"] = l.scale;
        if (!l.shift.empty()) j["shift"] = l.shift;
        break;
      default:
        break;
    }
    layers.push_back(std::move(j));
  }
  Json doc;
  doc["schema_version"] = NetworkSpec::kSchemaVersion;
  doc["name"] = spec.name;
  doc["input_shape"] = spec.input_shape;
  doc["num_classes"] = spec.num_classes;
  doc["layers"] = std::move(layers);
  return doc;
}

NetworkSpec spec_from_json(const Json& doc) {
  StrictObject obj(doc, "network");
  check_version(obj, "network");
  NetworkSpec spec;
  spec.name = obj.get<std::string>("name");
  spec.input_shape = obj.get<Shape>("input_shape");
  spec.num_classes = obj.get<std::size_t>("num_classes");
  const Json& layers = obj.at("layers");
  if (!layers.is_array()) throw FormatError("network.layers must be an array");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    StrictObject lo(layers[i], "network.layers[" + std::to_string(i) + "]");
    LayerSpec l;
    l.id = lo.get<std::string>("id");
    l.kind = parse_layer_kind(lo.get<std::string>("kind"));
    lo.read("inputs", l.inputs);
    switch (l.kind) {
      case LayerKind::conv: {
        lo.read("in_channels", l.in_channels);
        l.out_channels = lo.get<std::size_t>("out_channels");
        const auto k = lo.get<std::vector<std::size_t>>("kernel");
        if (k.size() != 2) throw FormatError("conv '" + l.id + "' kernel must be [h, w]");
        l.kernel_h = k[0];
        l.kernel_w = k[1];
        lo.read("stride", l.stride);
        lo.read("pad", l.pad);
        lo.read("prunable", l.prunable);
        break;
      }
      case LayerKind::linear:
        lo.read("in_features", l.in_features);
        l.out_features = lo.get<std::size_t>("out_features");
        break;
      case LayerKind::frozen_affine:
        lo.read("scale", l.scale);
        lo.read("shift", l.shift);
        break;
      default:
        break;
    }
    lo.finish();
    spec.layers.push_back(std::move(l));
  }
  obj.finish();
  return validate(std::move(spec));
}

Json profile_to_json(const ImportanceProfile& p) {
  Json layers = Json::array();
  for (const auto& l : p.layers) layers.push_back({{"id", l.id}, {"beta", l.beta}, {"mean_abs", l.mean_abs}});
  return Json{{"schema_version", kDocumentVersion},
              {"lambda", p.lambda},
              {"epochs", p.epochs},
              {"lr", p.lr},
              {"batch_size", p.batch_size},
              {"seed", p.seed},
              {"steps", p.steps},
              {"epoch_loss", p.epoch_loss},
              {"layers", std::move(layers)}};
}

ImportanceProfile profile_from_json(const Json& doc) {
  StrictObject obj(doc, "profile");
  check_version(obj, "profile");
  ImportanceProfile p;
  p.lambda = obj.get<double>("lambda");
  p.epochs = obj.get<std::size_t>("epochs");
  p.lr = obj.get<double>("lr");
  obj.read("batch_size", p.batch_size);
  p.seed = obj.get<std::uint64_t>("seed");
  obj.read("steps", p.steps);
  obj.read("epoch_loss", p.epoch_loss);
  for (const auto& lj : obj.at("layers")) {
    StrictObject lo(lj, "profile.layers");
    LayerImportance l;
    l.id = lo.get<std::string>("id");
    l.beta = lo.get<std::vector<double>>("beta");
    lo.read("mean_abs", l.mean_abs);
    lo.finish();
    p.layers.push_back(std::move(l));
  }
  obj.finish();
  return p;
}

std::string mask_bits(const std::vector<bool>& keep) {
  std::string s;
  s.reserve(keep.size());
  for (bool k : keep) s.push_back(k ? '1' : '0');
  return s;
}

std::vector<bool> parse_mask_bits(const std::string& bits) {
  std::vector<bool> keep;
  keep.reserve(bits.size());
  for (char c : bits) {
    if (c != '0' && c != '1') throw FormatError("keep-mask '" + bits + "' contains a character other than 0/1");
    keep.push_back(c == '1');
  }
  return keep;
}

Json plan_to_json(const PruningPlan& plan) {
  Json masks = Json::array();
  for (const auto& m : plan.masks) masks.push_back({{"id", m.id}, {"keep", mask_bits(m.keep)}});
  return Json{{"schema_version", kDocumentVersion},
              {"strategy", strategy_name(plan.strategy)},
              {"target", {{"kind", target_kind_name(plan.target.kind)}, {"value", plan.target.value}}},
              {"seed", plan.seed},
              {"floor", plan.floor},
              {"crucial", plan.crucial.ids},
              {"masks", std::move(masks)}};
}

PruningPlan plan_from_json(const Json& doc) {
  StrictObject obj(doc, "plan");
  check_version(obj, "plan");
  PruningPlan plan;
  plan.strategy = parse_strategy(obj.get<std::string>("strategy"));
  StrictObject t(obj.at("target"), "plan.target");
  plan.target.kind = parse_target_kind(t.get<std::string>("kind"));
  plan.target.value = t.get<double>("value");
  t.finish();
  plan.seed = obj.get<std::uint64_t>("seed");
  obj.read("floor", plan.floor);
  plan.crucial.ids = obj.get<std::vector<std::string>>("crucial");
  for (const auto& mj : obj.at("masks")) {
    StrictObject mo(mj, "plan.masks");
    plan.masks.push_back({mo.get<std::string>("id"), parse_mask_bits(mo.get<std::string>("keep"))});
    mo.finish();
  }
  obj.finish();
  return plan;
}

Json scores_to_json(const std::vector<LayerScore>& scores) {
  Json out = Json::array();
  for (const auto& s : scores) out.push_back({{"id", s.id}, {"score", s.score}, {"rank", s.rank}});
  return out;
}

Json plan_stats_to_json(const PlanStats& stats) {
  Json layers = Json::array();
  for (const auto& l : stats.layers) {
    layers.push_back({{"id", l.id},
                      {"total", l.total},
                      {"kept", l.kept},
                      {"rate", l.rate},
                      {"crucial", l.crucial},
                      {"prunable", l.prunable}});
  }
  return Json{{"layers", std::move(layers)},
              {"flops",
               {{"original", stats.flops.original_total},
                {"pruned", stats.flops.pruned_total},
                {"speedup", stats.flops.speedup},
                {"pruned_pct", stats.flops.pruned_pct}}}};
}

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

void write_json_file(const Json& doc, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write '" + path.string() + "'");
  out << doc.dump(2) << '\n';
}

}  // namespace prunekit
