// SPDX-License-Identifier: Apache-2.0
#include <CLI11.hpp>

#include <functional>
#include <iostream>

#include "prunekit/pipeline.hpp"

namespace {

using namespace prunekit;

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::string log = "runlog.jsonl";
};

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : load_config(c.config);
  return apply_overrides(cfg, c.overrides);
}

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config, "JSON run configuration")->check(CLI::ExistingFile);
  cmd->add_option("-s,--set", c.overrides, "Override a config value, e.g. plan.target=0.5");
  cmd->add_option("--log", c.log, "Run-log file (JSON lines, appended)");
}

void print_metrics(const Checkpoint& c) { std::cout << c.metrics.dump(2) << '\n'; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"prunekit: one-step filter pruning and multi-tap recovery for small CNNs"};
  app.set_version_flag("--version", std::string(PRUNEKIT_VERSION));
  app.require_subcommand(1);

  Common common;
  std::string in, out;
  std::vector<std::string> inputs;
  std::string out_dir = "report";
  std::function<void()> action;

  auto stage = [&](const std::string& name, const std::string& help,
                   std::function<Checkpoint(Session&, Checkpoint)> fn) {
    auto* cmd = app.add_subcommand(name, help);
    add_common(cmd, common);
    cmd->add_option("-i,--in", in, "Input checkpoint")->required()->check(CLI::ExistingFile);
    cmd->add_option("-o,--out", out, "Output checkpoint")->required();
    cmd->callback([&, fn, name] {
      action = [&, fn, name] {
        RunLog log(common.log);
        Session s(resolve(common), log);
        Checkpoint c = fn(s, load_checkpoint(in));
        save_checkpoint(c, out);
        log.write(name, "checkpoint", {{"file", out}});
        print_metrics(c);
      };
    });
  };

  auto* train = app.add_subcommand("train", "Train the configured network from scratch");
  add_common(train, common);
  train->add_option("-o,--out", out, "Output checkpoint")->required();
  train->callback([&] {
    action = [&] {
      RunLog log(common.log);
      Session s(resolve(common), log);
      Checkpoint c = cmd_train(s);
      save_checkpoint(c, out);
      log.write("train", "checkpoint", {{"file", out}});
      print_metrics(c);
    };
  });

  stage("learn-importance", "Learn per-channel importance vectors with weights fixed", cmd_learn_importance);
  stage("plan", "Select crucial nodes and build a global keep-mask plan", cmd_plan);
  stage("prune", "Apply the plan; the unpruned network is kept as teacher", cmd_prune);
  stage("recover", "Multi-tap reconstruction of the teacher's activations", cmd_recover);
  stage("finetune", "Cross-entropy training of all parameters", cmd_finetune);
  stage("eval", "Top-1 accuracy and FLOPs of a checkpoint", cmd_eval);
  stage("iterative", "Layer-by-layer reconstruction baseline", cmd_iterative);

  auto* report = app.add_subcommand("report", "Aggregate runs into tables and plot series");
  report->add_option("inputs", inputs, "Checkpoints or run directories")->required();
  report->add_option("-o,--out-dir", out_dir, "Output directory");
  report->callback([&] {
    action = [&] {
      std::vector<std::filesystem::path> paths(inputs.begin(), inputs.end());
      const Json r = write_report(paths, out_dir);
      std::cout << "wrote " << r.at("runs").size() << " runs to " << out_dir << '\n';
    };
  });

  auto* pipeline = app.add_subcommand("pipeline", "Run every stage with one configuration");
  pipeline->add_option("-c,--config", common.config, "JSON run configuration")->check(CLI::ExistingFile);
  pipeline->add_option("-s,--set", common.overrides, "Override a config value");
  pipeline->callback([&] {
    action = [&] {
      const PipelineResult r = run_pipeline(resolve(common));
      std::cout << r.summary.at("metrics").dump(2) << '\n';
    };
  });

  auto* config = app.add_subcommand("config", "Print the resolved configuration");
  config->add_option("-c,--config", common.config, "JSON run configuration")->check(CLI::ExistingFile);
  config->add_option("-s,--set", common.overrides, "Override a config value");
  config->callback([&] { action = [&] { std::cout << config_to_json(resolve(common)).dump(2) << '\n'; }; });

  CLI11_PARSE(app, argc, argv);
  try {
    action();
  } catch (const prunekit::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
