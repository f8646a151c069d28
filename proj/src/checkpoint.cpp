// SPDX-License-Identifier: Apache-2.0
#include "prunekit/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

namespace prunekit {

namespace {

constexpr char kMagic[8] = {'P', 'R', 'U', 'N', 'E', 'K', 'I', 'T'};

template <typename U>
void put_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

template <typename U>
U get_le(const std::string& in, std::size_t off) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<unsigned char>(in[off + i])) << (8 * i);
  return v;
}

void append_tensors(const ParamSet<float>& params, const std::string& prefix, Json& table, std::string& payload) {
  for (const auto& [name, p] : params) {
    table.push_back({{"name", prefix + name},
                     {"shape", p.value.shape()},
                     {"offset", payload.size()},
                     {"count", p.value.size()},
                     {"trainable", p.trainable}});
    for (float f : p.value.data()) put_le(payload, std::bit_cast<std::uint32_t>(f));
  }
}

}  // namespace

Json history_to_json(const History& history) {
  Json rows = Json::array();
  for (const auto& r : history) {
    rows.push_back({{"stage", r.stage},
                    {"epoch", r.epoch},
                    {"tap", r.tap},
                    {"loss", r.loss},
                    {"accuracy", std::isnan(r.accuracy) ? Json(nullptr) : Json(r.accuracy)}});
  }
  return rows;
}

History history_from_json(const Json& doc) {
  History h;
  for (const auto& rj : doc) {
    StrictObject ro(rj, "history");
    HistoryRow r;
    r.stage = ro.get<std::string>("stage");
    r.epoch = ro.get<std::size_t>("epoch");
    r.tap = ro.get<std::string>("tap");
    r.loss = ro.get<double>("loss");
    const Json& acc = ro.at("accuracy");
    if (!acc.is_null()) r.accuracy = acc.get<double>();
    ro.finish();
    h.push_back(std::move(r));
  }
  return h;
}

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  Json header;
  header["toolkit_version"] = PRUNEKIT_VERSION;
  header["stage"] = c.stage;
  header["seed"] = c.seed;
  header["config"] = c.config;
  header["spec"] = spec_to_json(c.model.spec);
  if (c.teacher) header["teacher_spec"] = spec_to_json(c.teacher->spec);
  if (c.profile) header["profile"] = profile_to_json(*c.profile);
  if (c.plan) header["plan"] = plan_to_json(*c.plan);
  header["history"] = history_to_json(c.history);
  header["metrics"] = c.metrics;
  Json table = Json::array();
  std::string payload;
  append_tensors(c.model.params, "", table, payload);
  if (c.teacher) append_tensors(c.teacher->params, "teacher/", table, payload);
  header["tensors"] = std::move(table);

  const std::string text = header.dump();
  std::string head(kMagic, sizeof kMagic);
  put_le<std::uint32_t>(head, Checkpoint::kVersion);
  put_le<std::uint64_t>(head, text.size());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write checkpoint '" + path.string() + "'");
  out << head << text << payload;
  if (!out) throw FormatError("failed writing checkpoint '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint '" + path.string() + "'");
  const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  const std::string where = "checkpoint '" + path.string() + "'";
  if (bytes.size() < 20 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) throw FormatError(where + " has a bad magic");
  const auto version = get_le<std::uint32_t>(bytes, 8);
  if (version != Checkpoint::kVersion) {
    throw FormatError(where + " has container version " + std::to_string(version) + ", this build reads version " +
                      std::to_string(Checkpoint::kVersion));
  }
  const auto header_len = get_le<std::uint64_t>(bytes, 12);
  if (20 + header_len > bytes.size()) throw FormatError(where + " is truncated in its header");
  Json header;
  try {
    header = Json::parse(bytes.substr(20, header_len));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(where + " has a corrupt header: " + e.what());
  }
  const std::size_t payload_start = 20 + header_len;
  const std::size_t payload_size = bytes.size() - payload_start;

  StrictObject h(header, "checkpoint");
  h.get<std::string>("toolkit_version");
  Checkpoint c;
  c.stage = h.get<std::string>("stage");
  c.seed = h.get<std::uint64_t>("seed");
  c.config = h.at("config");
  c.model.spec = spec_from_json(h.at("spec"));
  if (h.has("teacher_spec")) c.teacher = Model<float>{spec_from_json(h.at("teacher_spec")), {}};
  if (h.has("profile")) c.profile = profile_from_json(h.at("profile"));
  if (h.has("plan")) c.plan = plan_from_json(h.at("plan"));
  c.history = history_from_json(h.at("history"));
  c.metrics = h.at("metrics");
  for (const auto& tj : h.at("tensors")) {
    StrictObject t(tj, "checkpoint.tensors");
    std::string name = t.get<std::string>("name");
    const Shape shape = t.get<Shape>("shape");
    const auto offset = t.get<std::size_t>("offset");
    const auto count = t.get<std::size_t>("count");
    const bool trainable = t.get<bool>("trainable");
    t.finish();
    if (count != numel(shape)) throw FormatError(where + ": tensor '" + name + "' count does not match its shape");
    if (offset > payload_size || count * 4 > payload_size - offset) {
      throw FormatError(where + " is truncated in tensor '" + name + "'");
    }
    std::vector<float> data(count);
    for (std::size_t i = 0; i < count; ++i) {
      data[i] = std::bit_cast<float>(get_le<std::uint32_t>(bytes, payload_start + offset + 4 * i));
    }
    ParamSet<float>* target = &c.model.params;
    if (name.starts_with("teacher/")) {
      if (!c.teacher) throw FormatError(where + " has teacher tensors but no teacher spec");
      target = &c.teacher->params;
      name = name.substr(8);
    }
    target->emplace(name, Param<float>(Tensor<float>(shape, std::move(data)), trainable));
  }
  h.finish();
  check_params(c.model.spec, c.model.params);
  if (c.teacher) check_params(c.teacher->spec, c.teacher->params);
  return c;
}

}  // namespace prunekit
