// SPDX-License-Identifier: Apache-2.0
#include "prunekit/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <map>

#include "prunekit/flops.hpp"

namespace prunekit {

namespace {

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

Json nan_safe(double v) { return std::isnan(v) ? Json(nullptr) : Json(v); }

}  // namespace

RunLog::RunLog(const std::filesystem::path& path, bool truncate) {
  out_.emplace(path, truncate ? std::ios::trunc : std::ios::app);
  if (!*out_) throw FormatError("cannot open run-log '" + path.string() + "'");
}

void RunLog::write(const std::string& command, const std::string& event, Json fields) {
  Json rec;
  rec["ts"] = utc_now();
  rec["version"] = PRUNEKIT_VERSION;
  rec["command"] = command;
  rec["event"] = event;
  for (auto& [k, v] : fields.items()) rec[k] = v;
  if (out_) {
    *out_ << rec.dump() << '\n';
    out_->flush();
  }
  records_.push_back(std::move(rec));
}

std::vector<Json> read_run_log(const std::filesystem::path& path, bool strip_time) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open run-log '" + path.string() + "'");
  std::vector<Json> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    Json rec = Json::parse(line);
    if (strip_time) rec.erase("ts");
    out.push_back(std::move(rec));
  }
  return out;
}

Session::Session(RunConfig config, RunLog& log) : config_(std::move(config)), log_(log) { check_config(config_); }

const SplitDataset& Session::data() {
  if (!data_) {
    data_ = load_data(config_.data);
    check_dataset(data_->train);
    check_dataset(data_->test);
    log_.write("data", "loaded",
               {{"source", config_.data.source},
                {"train", data_->train.size()},
                {"test", data_->test.size()},
                {"classes", data_->train.num_classes},
                {"shape", data_->train.sample_shape()}});
  }
  return *data_;
}

namespace {

Checkpoint derived(const Session& s, Checkpoint in, std::string stage) {
  in.stage = std::move(stage);
  in.config = config_to_json(s.config());
  return in;
}

void log_history(RunLog& log, const std::string& command, const History& rows) {
  for (const auto& r : rows) {
    log.write(command, "epoch",
              {{"stage", r.stage}, {"epoch", r.epoch}, {"tap", r.tap}, {"loss", r.loss}, {"accuracy", nan_safe(r.accuracy)}});
  }
}

Json eval_json(const EvalResult& r) { return Json{{"accuracy", r.accuracy}, {"loss", r.loss}, {"samples", r.samples}}; }

}  // namespace

Checkpoint cmd_train(Session& s) {
  const auto& data = s.data();
  Checkpoint c;
  c.stage = "train";
  c.config = config_to_json(s.config());
  c.seed = s.config().network.init_seed;
  c.model.spec = load_network(s.config().network, data.train.sample_shape(), data.train.num_classes);
  c.model.params = init_params<float>(c.model.spec, s.config().network.init_seed);
  const TrainResult r = finetune(c.model, data.train, train_options(s.config().train, "train"), &data.test);
  c.history = r.history;
  log_history(s.log(), "train", r.history);
  const EvalResult e = evaluate(c.model, data.test);
  c.metrics["baseline_accuracy"] = e.accuracy;
  c.metrics["train_steps"] = r.steps;
  c.metrics["flops"] = flops_total(c.model.spec).total;
  s.log().write("train", "done", {{"network", c.model.spec.name}, {"steps", r.steps}, {"eval", eval_json(e)},
                                 {"flops", flops_total(c.model.spec).total}, {"checksum", checksum(c.model.params)}});
  return c;
}

Checkpoint cmd_learn_importance(Session& s, Checkpoint in) {
  if (in.teacher) throw ConfigError("importance must be learned on an unpruned checkpoint");
  const auto& data = s.data();
  Checkpoint c = derived(s, std::move(in), "learn-importance");
  const std::uint64_t before = checksum(c.model.params);
  c.profile = learn_importance(c.model.spec, c.model.params, data.train, importance_options(s.config()));
  if (checksum(c.model.params) != before) throw Error("importance learning modified network weights");
  const auto scores = layer_scores(*c.profile, score_reduction(s.config()));
  for (std::size_t e = 0; e < c.profile->epoch_loss.size(); ++e) {
    s.log().write("learn-importance", "epoch", {{"epoch", e + 1}, {"loss", c.profile->epoch_loss[e]}});
  }
  c.metrics["mean_abs_beta"] = c.profile->mean_abs_beta();
  c.metrics["scores"] = scores_to_json(scores);
  s.log().write("learn-importance", "done",
                {{"lambda", c.profile->lambda}, {"steps", c.profile->steps}, {"mean_abs_beta", c.profile->mean_abs_beta()},
                 {"scores", scores_to_json(scores)}});
  return c;
}

Checkpoint cmd_plan(Session& s, Checkpoint in) {
  if (in.teacher) throw ConfigError("plans are built on an unpruned checkpoint");
  Checkpoint c = derived(s, std::move(in), "plan");
  const ImportanceProfile profile = c.profile ? *c.profile : initial_profile(c.model.spec);
  const auto scores = layer_scores(profile, score_reduction(s.config()));
  const TapSet crucial = select_crucial(c.model.spec, scores, s.config().plan.crucial);
  const PlanOptions opts = plan_options(s.config());
  if (opts.strategy == Strategy::beta && !c.profile) throw ConfigError("the beta strategy needs a learn-importance checkpoint");
  c.plan = build_plan(c.model.spec, &profile, crucial, opts, &c.model.params);
  const PlanStats stats = plan_stats(*c.plan, c.model.spec);
  c.metrics["plan"] = plan_stats_to_json(stats);
  s.log().write("plan", "done",
                {{"strategy", strategy_name(c.plan->strategy)},
                 {"target", {{"kind", target_kind_name(c.plan->target.kind)}, {"value", c.plan->target.value}}},
                 {"crucial", c.plan->crucial.ids},
                 {"removed", c.plan->removed()},
                 {"speedup", stats.flops.speedup},
                 {"pruned_pct", stats.flops.pruned_pct}});
  return c;
}

Checkpoint cmd_prune(Session& s, Checkpoint in) {
  if (!in.plan) throw ConfigError("prune needs a checkpoint produced by plan");
  if (in.teacher) throw ConfigError("checkpoint is already pruned");
  const auto& data = s.data();
  Checkpoint c = derived(s, std::move(in), "prune");
  const ImportanceProfile* fold = s.config().plan.fold_beta && c.profile ? &*c.profile : nullptr;
  Model<float> pruned = apply_plan(c.model.spec, c.model.params, *c.plan, fold);
  c.teacher = std::move(c.model);
  c.model = std::move(pruned);
  const EvalResult e = evaluate(c.model, data.test);
  const FlopsReport report = compare(c.teacher->spec, c.model.spec);
  c.metrics["pruned_accuracy"] = e.accuracy;
  c.metrics["flops_pruned"] = report.total;
  c.metrics["speedup"] = report.comparison->speedup;
  c.metrics["pruned_pct"] = report.comparison->pruned_pct;
  s.log().write("prune", "done", {{"eval", eval_json(e)}, {"flops", report.total}, {"speedup", report.comparison->speedup},
                                 {"pruned_pct", report.comparison->pruned_pct}});
  return c;
}

Checkpoint cmd_recover(Session& s, Checkpoint in) {
  if (!in.teacher) throw ConfigError("recover needs a pruned checkpoint (with its teacher)");
  const auto& data = s.data();
  Checkpoint c = derived(s, std::move(in), "recover");
  const auto& rc = s.config().recover;
  MimicConfig mc;
  mc.function = parse_mimic(rc.mimic);
  mc.taps = rc.taps.empty() ? (c.plan ? c.plan->crucial : TapSet{}) : normalized_taps(c.teacher->spec, TapSet{rc.taps});
  mc.epochs = rc.stage.epochs;
  mc.batch_size = rc.stage.batch_size;
  mc.lr = rc.stage.lr;
  mc.lr_step = rc.stage.lr_step;
  mc.lr_decay = rc.stage.lr_decay;
  mc.seed = rc.stage.seed;
  mc.eps = rc.eps;
  mc.raw_sum = rc.raw_sum;
  const std::uint64_t teacher_sum = checksum(c.teacher->params);
  RecoverySession session(*c.teacher, std::move(c.model), mc);
  recover(session, data.train, &data.test);
  if (checksum(session.teacher.params) != teacher_sum) throw Error("recovery modified the teacher");
  c.model = std::move(session.student);
  log_history(s.log(), "recover", session.history);
  c.history.insert(c.history.end(), session.history.begin(), session.history.end());
  const EvalResult e = evaluate(c.model, data.test);
  c.metrics["recovered_accuracy"] = e.accuracy;
  c.metrics["recover_steps"] = session.steps;
  c.metrics["mimic"] = rc.mimic;
  c.metrics["taps"] = mc.taps.ids;
  s.log().write("recover", "done",
                {{"mimic", rc.mimic}, {"taps", mc.taps.ids}, {"steps", session.steps}, {"eval", eval_json(e)}});
  return c;
}

Checkpoint cmd_finetune(Session& s, Checkpoint in) {
  const auto& data = s.data();
  Checkpoint c = derived(s, std::move(in), "finetune");
  const TrainResult r = finetune(c.model, data.train, train_options(s.config().finetune, "finetune"), &data.test);
  log_history(s.log(), "finetune", r.history);
  c.history.insert(c.history.end(), r.history.begin(), r.history.end());
  const EvalResult e = evaluate(c.model, data.test);
  c.metrics["finetuned_accuracy"] = e.accuracy;
  c.metrics["finetune_steps"] = r.steps;
  s.log().write("finetune", "done", {{"steps", r.steps}, {"eval", eval_json(e)}});
  return c;
}

Checkpoint cmd_eval(Session& s, Checkpoint in) {
  const auto& data = s.data();
  Checkpoint c = std::move(in);
  const EvalResult e = evaluate(c.model, data.test);
  Json flops{{"total", flops_total(c.model.spec).total}};
  if (c.teacher) {
    const auto cmp = compare(c.teacher->spec, c.model.spec).comparison;
    flops["original"] = cmp->original_total;
    flops["speedup"] = cmp->speedup;
    flops["pruned_pct"] = cmp->pruned_pct;
  }
  c.metrics["accuracy"] = e.accuracy;
  c.metrics["loss"] = e.loss;
  c.metrics["eval_flops"] = flops;
  s.log().write("eval", "done", {{"stage", c.stage}, {"eval", eval_json(e)}, {"flops", flops}});
  return c;
}

Checkpoint cmd_iterative(Session& s, Checkpoint in) {
  if (!in.teacher || !in.plan) throw ConfigError("the iterative baseline needs a pruned checkpoint with its plan");
  const auto& data = s.data();
  Checkpoint c = derived(s, std::move(in), "iterative");
  IterativeResult r = iterative_recover_baseline(*c.teacher, *c.plan, data.train, iterative_options(s.config()));
  c.model = std::move(r.student);
  log_history(s.log(), "iterative", r.history);
  c.history.insert(c.history.end(), r.history.begin(), r.history.end());
  Json layers = Json::array();
  for (const auto& l : r.layers) layers.push_back({{"pruned", l.pruned}, {"consumers", l.consumers}, {"steps", l.steps}});
  const EvalResult e = evaluate(c.model, data.test);
  c.metrics["iterative_accuracy"] = e.accuracy;
  c.metrics["iterative_steps"] = r.steps;
  s.log().write("iterative", "done", {{"steps", r.steps}, {"layers", layers}, {"eval", eval_json(e)}});
  return c;
}

PipelineResult run_pipeline(const RunConfig& config) {
  const std::filesystem::path dir = config.out_dir;
  std::filesystem::create_directories(dir);
  RunLog log(dir / "runlog.jsonl", true);
  Session s(config, log);
  log.write("pipeline", "start", {{"config", config_to_json(config)}});
  PipelineResult result;
  int n = 0;
  auto save = [&](const Checkpoint& c) {
    char name[64];
    std::snprintf(name, sizeof name, "%02d_%s.ckpt", ++n, c.stage.c_str());
    save_checkpoint(c, dir / name);
    result.checkpoints.push_back(dir / name);
    log.write("pipeline", "checkpoint", {{"stage", c.stage}, {"file", name}, {"checksum", checksum(c.model.params)}});
  };
  Checkpoint c = cmd_train(s);
  save(c);
  c = cmd_learn_importance(s, std::move(c));
  save(c);
  c = cmd_plan(s, std::move(c));
  save(c);
  c = cmd_prune(s, std::move(c));
  save(c);
  if (c.plan->is_identity()) {
    // nothing was removed, so the baseline weights are kept as they are
    log.write("pipeline", "skipped", {{"stages", {"recover", "finetune"}}, {"reason", "identity plan"}});
  } else {
    c = cmd_recover(s, std::move(c));
    save(c);
    c = cmd_finetune(s, std::move(c));
  }
  c = cmd_eval(s, std::move(c));
  save(c);
  write_history_tsv(c.history, dir / "history.tsv");
  result.summary = {{"config", config_to_json(config)}, {"version", PRUNEKIT_VERSION}, {"metrics", c.metrics}};
  write_json_file(result.summary, dir / "summary.json");
  log.write("pipeline", "done", {{"metrics", c.metrics}});
  return result;
}

Json write_report(const std::vector<std::filesystem::path>& inputs, const std::filesystem::path& out_dir) {
  if (inputs.empty()) throw ConfigError("report needs at least one run");
  std::filesystem::create_directories(out_dir);
  struct Run {
    std::string name;
    Checkpoint ckpt;
  };
  std::vector<Run> runs;
  for (const auto& in : inputs) {
    std::filesystem::path file = in;
    if (std::filesystem::is_directory(in)) {
      std::vector<std::filesystem::path> found;
      for (const auto& e : std::filesystem::directory_iterator(in)) {
        if (e.path().extension() == ".ckpt") found.push_back(e.path());
      }
      if (found.empty()) throw ConfigError("no checkpoints in '" + in.string() + "'");
      std::sort(found.begin(), found.end());
      file = found.back();
    }
    std::string name = std::filesystem::is_directory(in) ? in.filename().string() : file.stem().string();
    if (name.empty()) name = in.parent_path().filename().string();
    runs.push_back({name, load_checkpoint(file)});
  }

  auto metric = [](const Checkpoint& c, const char* key) -> Json {
    return c.metrics.contains(key) ? c.metrics.at(key) : Json(nullptr);
  };
  auto cell = [](const Json& v) { return v.is_null() ? std::string("nan") : v.dump(); };

  std::ofstream loss(out_dir / "loss_by_tap.tsv");
  loss << "run\tstage\tepoch\ttap\tloss\taccuracy\n";
  Json summary = Json::array();
  struct Point {
    std::string run, mimic;
    std::size_t taps;
    Json recovered, finetuned;
  };
  std::vector<Point> points;
  for (const auto& r : runs) {
    for (const auto& h : r.ckpt.history) {
      loss << r.name << '\t' << h.stage << '\t' << h.epoch << '\t' << h.tap << '\t' << Json(h.loss).dump() << '\t'
           << cell(nan_safe(h.accuracy)) << '\n';
    }
    const Json taps = metric(r.ckpt, "taps");
    const Json mimic = metric(r.ckpt, "mimic");
    Point p{r.name, mimic.is_string() ? mimic.get<std::string>() : "", taps.is_array() ? taps.size() : 0,
            metric(r.ckpt, "recovered_accuracy"), metric(r.ckpt, "finetuned_accuracy")};
    points.push_back(p);
    summary.push_back({{"run", r.name}, {"stage", r.ckpt.stage}, {"metrics", r.ckpt.metrics}});
  }

  auto write_points = [&](const std::filesystem::path& path, auto less) {
    std::vector<Point> sorted = points;
    std::stable_sort(sorted.begin(), sorted.end(), less);
    std::ofstream out(path);
    out << "run\tmimic\ttaps\trecovered_accuracy\tfinetuned_accuracy\n";
    for (const auto& p : sorted) {
      out << p.run << '\t' << p.mimic << '\t' << p.taps << '\t' << cell(p.recovered) << '\t' << cell(p.finetuned) << '\n';
    }
  };
  write_points(out_dir / "accuracy_by_taps.tsv", [](const Point& a, const Point& b) { return a.taps < b.taps; });
  write_points(out_dir / "accuracy_by_mimic.tsv", [](const Point& a, const Point& b) { return a.mimic < b.mimic; });
  Json report{{"version", PRUNEKIT_VERSION}, {"runs", summary}};
  write_json_file(report, out_dir / "report.json");
  return report;
}

}  // namespace prunekit
