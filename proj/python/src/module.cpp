// SPDX-License-Identifier: Apache-2.0
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <map>
#include <optional>
#include <string>

#include "prunekit/checkpoint.hpp"
#include "prunekit/graph.hpp"
#include "prunekit/pipeline.hpp"
#include "prunekit/zoo.hpp"

namespace py = pybind11;
using namespace prunekit;

namespace {

using Array64 = py::array_t<double, py::array::c_style | py::array::forcecast>;
using Array32 = py::array_t<float, py::array::c_style | py::array::forcecast>;

template <typename T, typename A>
Tensor<T> to_tensor(const A& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor<T>(std::move(shape), std::vector<T>(a.data(), a.data() + a.size()));
}

template <typename T>
py::array_t<T> to_array(const Tensor<T>& t) {
  py::array_t<T> out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

Json parse(const std::string& text) { return Json::parse(text); }

RunConfig resolve(const std::string& config, const std::vector<std::string>& overrides) {
  RunConfig c = apply_overrides(config_from_json(parse(config)), overrides);
  check_config(c);
  return c;
}

py::dict checkpoint_dict(const Checkpoint& c) {
  Json header{{"stage", c.stage},
              {"seed", c.seed},
              {"config", c.config},
              {"metrics", c.metrics},
              {"spec", spec_to_json(c.model.spec)},
              {"history", history_to_json(c.history)}};
  if (c.plan) header["plan"] = plan_to_json(*c.plan);
  if (c.profile) header["profile"] = profile_to_json(*c.profile);
  py::dict params;
  for (const auto& [name, p] : c.model.params) params[py::str(name)] = to_array(p.value);
  py::dict out;
  out["header"] = header.dump();
  out["params"] = params;
  out["has_teacher"] = c.teacher.has_value();
  return out;
}

using StageFn = Checkpoint (*)(Session&, Checkpoint);

const std::map<std::string, StageFn>& stages() {
  static const std::map<std::string, StageFn> m{
      {"learn-importance", cmd_learn_importance}, {"plan", cmd_plan},         {"prune", cmd_prune},
      {"recover", cmd_recover},                   {"finetune", cmd_finetune}, {"eval", cmd_eval},
      {"iterative", cmd_iterative}};
  return m;
}

}  // namespace

PYBIND11_MODULE(_prunekit, m) {
  m.doc() = "Filter pruning and multi-tap recovery for small CNNs";
  m.attr("__version__") = PRUNEKIT_VERSION;

  auto base = py::register_exception<Error>(m, "PrunekitError");
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<SpecError>(m, "SpecError", base.ptr());

  m.def("default_config", [] { return config_to_json(RunConfig{}).dump(); });
  m.def("resolve_config", [](const std::string& config, const std::vector<std::string>& overrides) {
    return config_to_json(resolve(config, overrides)).dump();
  }, py::arg("config"), py::arg("overrides") = std::vector<std::string>{});

  m.def("zoo_names", &zoo::names);
  m.def("zoo_spec", [](const std::string& name, std::vector<std::size_t> input_shape, std::size_t classes, std::size_t width) {
    NetworkConfig n;
    n.arch = name;
    n.width = width;
    return spec_to_json(load_network(n, input_shape, classes)).dump();
  }, py::arg("name"), py::arg("input_shape"), py::arg("classes"), py::arg("width") = 16);

  m.def("flops", [](const std::string& spec_json) {
    const auto report = flops_total(spec_from_json(parse(spec_json)));
    Json layers = Json::object();
    for (const auto& l : report.per_layer) layers[l.id] = l.flops;
    return Json{{"total", report.total}, {"per_layer", layers}}.dump();
  });

  m.def("mimic", [](const std::string& name, const Array64& teacher, const Array64& student, double eps) {
    const auto r = mimic(parse_mimic(name), to_tensor<double>(teacher), to_tensor<double>(student), eps);
    return py::make_tuple(r.value, to_array(r.grad));
  }, py::arg("name"), py::arg("teacher"), py::arg("student"), py::arg("eps") = 1e-12);

  m.def("channel_distribution", [](const Array64& x) { return to_array(channel_distribution(to_tensor<double>(x))); });

  m.def("layer_scores", [](const std::string& profile_json, const std::string& reduction) {
    const auto red = reduction == "sum" ? ScoreReduction::sum : ScoreReduction::mean;
    if (reduction != "sum" && reduction != "mean") throw ConfigError("reduction must be mean or sum");
    return scores_to_json(layer_scores(profile_from_json(parse(profile_json)), red)).dump();
  }, py::arg("profile"), py::arg("reduction") = "mean");

  m.def("synth", [](std::size_t classes, std::vector<std::size_t> shape, std::size_t train, std::size_t test,
                    std::uint64_t seed) {
    SynthOptions o;
    o.num_classes = classes;
    o.image_shape = shape;
    o.train_size = train;
    o.test_size = test;
    o.seed = seed;
    const auto d = synth(o);
    return py::make_tuple(to_array(d.train.images), d.train.labels, to_array(d.test.images), d.test.labels);
  }, py::arg("classes"), py::arg("shape"), py::arg("train"), py::arg("test"), py::arg("seed") = 0);

  m.def("run_pipeline", [](const std::string& config) {
    const RunConfig c = resolve(config, {});
    py::gil_scoped_release release;
    return run_pipeline(c).summary.dump();
  });

  m.def("train", [](const std::string& config, const std::filesystem::path& out, std::optional<std::filesystem::path> log) {
    const RunConfig c = resolve(config, {});
    py::gil_scoped_release release;
    RunLog rl = log ? RunLog(*log) : RunLog();
    Session s(c, rl);
    const Checkpoint ck = cmd_train(s);
    save_checkpoint(ck, out);
    return ck.metrics.dump();
  }, py::arg("config"), py::arg("out"), py::arg("log") = std::nullopt);

  m.def("run_stage", [](const std::string& stage, const std::string& config, const std::filesystem::path& in,
                        const std::filesystem::path& out, std::optional<std::filesystem::path> log) {
    const auto it = stages().find(stage);
    if (it == stages().end()) throw ConfigError("unknown stage '" + stage + "'");
    const RunConfig c = resolve(config, {});
    py::gil_scoped_release release;
    RunLog rl = log ? RunLog(*log) : RunLog();
    Session s(c, rl);
    const Checkpoint ck = it->second(s, load_checkpoint(in));
    save_checkpoint(ck, out);
    return ck.metrics.dump();
  }, py::arg("stage"), py::arg("config"), py::arg("input"), py::arg("out"), py::arg("log") = std::nullopt);

  m.def("load_checkpoint", [](const std::filesystem::path& path) { return checkpoint_dict(load_checkpoint(path)); });

  m.def("predict", [](const std::filesystem::path& path, const Array32& images) {
    const Checkpoint c = load_checkpoint(path);
    const auto x = to_tensor<float>(images);
    Tensor<float> logits;
    {
      py::gil_scoped_release release;
      logits = run_forward(c.model.spec, c.model.params, x).logits();
    }
    return to_array(logits);
  });

  m.def("write_report", [](const std::vector<std::filesystem::path>& inputs, const std::filesystem::path& out_dir) {
    return write_report(inputs, out_dir).dump();
  });
}
