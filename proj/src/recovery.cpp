// SPDX-License-Identifier: Apache-2.0
#include "prunekit/recovery.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "prunekit/adam.hpp"
#include "prunekit/ops.hpp"

namespace prunekit {

std::string_view mimic_name(MimicFunction f) {
  switch (f) {
    case MimicFunction::mse: return "mse";
    case MimicFunction::lasso: return "lasso";
    case MimicFunction::kl: return "kl";
    case MimicFunction::js: return "js";
  }
  return "?";
}

MimicFunction parse_mimic(std::string_view name) {
  for (auto f : {MimicFunction::mse, MimicFunction::lasso, MimicFunction::kl, MimicFunction::js}) {
    if (mimic_name(f) == name) return f;
  }
  throw ConfigError("unknown mimic function '" + std::string(name) + "' (mse, lasso, kl, js)");
}

namespace {

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, std::string_view what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": teacher tap " + to_string(a.shape()) + " vs student tap " + to_string(b.shape()));
  }
  if (a.empty()) throw ShapeError(std::string(what) + ": empty tap");
}

/// [B, C, inner] view of a tap for per-site channel distributions.
struct SiteLayout {
  std::size_t batch = 1, channels = 0, inner = 1;
  std::size_t sites() const { return batch * inner; }
};

SiteLayout layout_of(const Shape& s) {
  if (s.size() == 1) return {1, s[0], 1};
  SiteLayout l{s[0], s[1], 1};
  for (std::size_t i = 2; i < s.size(); ++i) l.inner *= s[i];
  return l;
}

template <typename T, typename Fn>
void for_each_site(const SiteLayout& l, Fn&& fn) {
  for (std::size_t b = 0; b < l.batch; ++b) {
    for (std::size_t k = 0; k < l.inner; ++k) fn(b * l.channels * l.inner + k, l.inner);
  }
}

/// Softmax of one site (stride `step` starting at `base`) in double.
template <typename T>
void site_softmax(const Tensor<T>& x, std::size_t base, std::size_t step, std::size_t c, std::vector<double>& out) {
  out.resize(c);
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < c; ++i) mx = std::max(mx, static_cast<double>(x[base + i * step]));
  double sum = 0.0;
  for (std::size_t i = 0; i < c; ++i) {
    out[i] = std::exp(static_cast<double>(x[base + i * step]) - mx);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
}

/// Chain through the student softmax: dz_k = q_k (dq_k - sum_i dq_i q_i).
void softmax_chain(const std::vector<double>& q, const std::vector<double>& dq, std::vector<double>& dz) {
  double dot = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) dot += dq[i] * q[i];
  for (std::size_t k = 0; k < q.size(); ++k) dz[k] = q[k] * (dq[k] - dot);
}

/// Divergence between teacher and student channel distributions; `site_fn`
/// returns the site loss and fills d(loss)/d(student logits) for the site.
template <typename T, typename SiteFn>
MimicLoss<T> divergence(const Tensor<T>& teacher, const Tensor<T>& student, SiteFn&& site_fn) {
  const SiteLayout l = layout_of(teacher.shape());
  MimicLoss<T> out{0.0, Tensor<T>(student.shape())};
  const double inv_sites = 1.0 / static_cast<double>(l.sites());
  std::vector<double> p, q, dz;
  double total = 0.0;
  for_each_site<T>(l, [&](std::size_t base, std::size_t step) {
    site_softmax(teacher, base, step, l.channels, p);
    site_softmax(student, base, step, l.channels, q);
    dz.assign(l.channels, 0.0);
    total += site_fn(p, q, dz);
    for (std::size_t k = 0; k < l.channels; ++k) out.grad[base + k * step] = static_cast<T>(dz[k] * inv_sites);
  });
  out.value = total * inv_sites;
  return out;
}

}  // namespace

template <typename T>
MimicLoss<T> mimic_mse(const Tensor<T>& teacher, const Tensor<T>& student, bool raw_sum) {
  require_same_shape(teacher, student, "mse");
  const double scale = raw_sum ? 1.0 : 1.0 / static_cast<double>(teacher.size());
  MimicLoss<T> out{0.0, Tensor<T>(student.shape())};
  double total = 0.0;
  for (std::size_t i = 0; i < teacher.size(); ++i) {
    const double d = static_cast<double>(student[i]) - static_cast<double>(teacher[i]);
    total += d * d;
    out.grad[i] = static_cast<T>(2.0 * d * scale);
  }
  out.value = total * scale;
  return out;
}

template <typename T>
MimicLoss<T> mimic_lasso(const Tensor<T>& teacher, const Tensor<T>& student, bool raw_sum) {
  require_same_shape(teacher, student, "lasso");
  const double scale = raw_sum ? 1.0 : 1.0 / static_cast<double>(teacher.size());
  MimicLoss<T> out{0.0, Tensor<T>(student.shape())};
  double total = 0.0;
  for (std::size_t i = 0; i < teacher.size(); ++i) {
    const double d = static_cast<double>(student[i]) - static_cast<double>(teacher[i]);
    total += std::abs(d);
    out.grad[i] = static_cast<T>((d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0)) * scale);
  }
  out.value = total * scale;
  return out;
}

template <typename T>
Tensor<T> channel_distribution(const Tensor<T>& x) {
  if (x.empty()) throw ShapeError("channel_distribution of an empty tensor");
  const SiteLayout l = layout_of(x.shape());
  Tensor<T> out(x.shape());
  std::vector<double> p;
  for_each_site<T>(l, [&](std::size_t base, std::size_t step) {
    site_softmax(x, base, step, l.channels, p);
    for (std::size_t i = 0; i < l.channels; ++i) out[base + i * step] = static_cast<T>(p[i]);
  });
  return out;
}

template <typename T>
MimicLoss<T> mimic_kl(const Tensor<T>& teacher, const Tensor<T>& student, double eps) {
  require_same_shape(teacher, student, "kl");
  return divergence(teacher, student, [eps](const std::vector<double>& p, const std::vector<double>& q, std::vector<double>& dz) {
    double kl = 0.0;
    bool floored = false;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double qi = std::max(q[i], eps);
      if (p[i] > 0.0) kl += p[i] * (std::log(std::max(p[i], eps)) - std::log(qi));
      floored = floored || q[i] < eps;
    }
    if (!floored) {
      // closed form, exactly zero when p == q
      for (std::size_t k = 0; k < p.size(); ++k) dz[k] = q[k] - p[k];
      return kl;
    }
    std::vector<double> dq(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) dq[i] = q[i] >= eps ? -p[i] / q[i] : 0.0;
    softmax_chain(q, dq, dz);
    return kl;
  });
}

template <typename T>
MimicLoss<T> mimic_js(const Tensor<T>& teacher, const Tensor<T>& student, double eps) {
  require_same_shape(teacher, student, "js");
  return divergence(teacher, student, [eps](const std::vector<double>& p, const std::vector<double>& q, std::vector<double>& dz) {
    double js = 0.0;
    std::vector<double> dq(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double m = std::max(0.5 * (p[i] + q[i]), eps);
      const double a = p[i] > 0.0 ? p[i] * (std::log(std::max(p[i], eps)) - std::log(m)) : 0.0;
      const double b = q[i] > 0.0 ? q[i] * (std::log(std::max(q[i], eps)) - std::log(m)) : 0.0;
      js += 0.5 * (a + b);  // a + b commutes, so js(p, q) == js(q, p) bitwise
      dq[i] = 0.5 * (std::log(std::max(q[i], eps)) - std::log(m));
    }
    softmax_chain(q, dq, dz);
    return js;
  });
}

template <typename T>
MimicLoss<T> mimic(MimicFunction f, const Tensor<T>& teacher, const Tensor<T>& student, double eps, bool raw_sum) {
  switch (f) {
    case MimicFunction::mse: return mimic_mse(teacher, student, raw_sum);
    case MimicFunction::lasso: return mimic_lasso(teacher, student, raw_sum);
    case MimicFunction::kl: return mimic_kl(teacher, student, eps);
    case MimicFunction::js: return mimic_js(teacher, student, eps);
  }
  throw ConfigError("unknown mimic function");
}

void check_mimic_config(const NetworkSpec& spec, const MimicConfig& c) {
  if (c.taps.size() == 0) throw ConfigError("recovery needs at least one tap");
  check_taps(spec, c.taps);
  if (c.batch_size == 0) throw ConfigError("batch size must be positive");
  if (c.lr < 0.0) throw ConfigError("learning rate must be non-negative");
  if (!(c.eps > 0.0)) throw ConfigError("epsilon floor must be positive");
  if (c.function == MimicFunction::kl || c.function == MimicFunction::js) {
    const std::string name(mimic_name(c.function));
    if (c.taps.size() < 2) {
      throw ConfigError(name + " recovery needs at least two taps (N >= 2); matching only the last layer does not work");
    }
    const std::string& final_id = spec.layers[final_activation(spec)].id;
    if (!c.taps.contains(final_id)) {
      throw ConfigError(name + " recovery needs the final activation '" + final_id + "' among its taps");
    }
  }
}

template <typename T>
ReconstructionLoss reconstruction_loss(const Model<T>& teacher, const Model<T>& student, const MimicConfig& config,
                                       const Tensor<T>& images, ParamSet<T>* grads) {
  check_mimic_config(teacher.spec, config);
  check_taps(student.spec, config.taps);
  const TappedForward<T> t = forward_with_taps(teacher.spec, teacher.params, images, config.taps);
  const Trace<T> trace = run_forward(student.spec, student.params, images);

  ReconstructionLoss out;
  BackwardRequest<T> req;
  req.param_grads = grads;
  const double inv_n = 1.0 / static_cast<double>(config.taps.size());
  for (const auto& id : config.taps.ids) {
    const std::size_t idx = student.spec.index_of(id);
    auto m = mimic(config.function, t.taps.at(id), trace.outputs[idx], config.eps, config.raw_sum);
    out.per_tap.push_back({id, m.value});
    out.value += m.value;
    if (grads) {
      for (auto& g : m.grad.data()) g = static_cast<T>(g * inv_n);
      auto [it, fresh] = req.node_grads.emplace(idx, std::move(m.grad));
      if (!fresh) throw ConfigError("duplicate tap '" + id + "'");
    }
  }
  out.value *= inv_n;
  if (grads) run_backward(student.spec, student.params, trace, req);
  return out;
}

// --- history ---------------------------------------------------------------

namespace {

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void write_history_tsv(const History& history, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write '" + path.string() + "'");
  out << "stage\tepoch\ttap\tloss\taccuracy\n";
  for (const auto& r : history) {
    out << r.stage << '\t' << r.epoch << '\t' << r.tap << '\t' << fmt(r.loss) << '\t' << fmt(r.accuracy) << '\n';
  }
}

History read_history_tsv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || line != "stage\tepoch\ttap\tloss\taccuracy") {
    throw FormatError("'" + path.string() + "' is not a history table");
  }
  History h;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, '\t')) cols.push_back(cell);
    if (cols.size() != 5) throw FormatError("history line " + std::to_string(lineno) + " has " + std::to_string(cols.size()) + " columns");
    try {
      h.push_back({cols[0], std::stoul(cols[1]), cols[2], std::stod(cols[3]), std::stod(cols[4])});
    } catch (const std::logic_error&) {
      throw FormatError("history line " + std::to_string(lineno) + " has a malformed number");
    }
  }
  return h;
}

// --- training loops --------------------------------------------------------

namespace {

double scheduled_lr(double lr, std::size_t epoch, std::size_t step, double decay) {
  return step == 0 ? lr : lr * std::pow(decay, static_cast<double>(epoch / step));
}

std::size_t argmax_row(const Tensor<float>& logits, std::size_t row) {
  const std::size_t k = logits.dim(1);
  std::size_t best = 0;
  for (std::size_t j = 1; j < k; ++j) {
    if (logits[row * k + j] > logits[row * k + best]) best = j;
  }
  return best;
}

}  // namespace

RecoverySession::RecoverySession(Model<float> t, Model<float> s, MimicConfig c)
    : teacher(std::move(t)), student(std::move(s)), config(std::move(c)) {
  check_mimic_config(teacher.spec, config);
  check_taps(student.spec, config.taps);
  if (student.spec.input_shape != teacher.spec.input_shape) throw ShapeError("teacher and student inputs differ");
  for (const auto& id : config.taps.ids) {
    const Shape& a = teacher.spec.layer(id).out_shape;
    const Shape& b = student.spec.layer(id).out_shape;
    if (a != b) {
      throw ShapeError("tap '" + id + "' is " + to_string(a) + " in the teacher but " + to_string(b) +
                       " in the student; crucial layers must keep their width");
    }
  }
}

void recover(RecoverySession& s, const Dataset& data, const Dataset* eval) {
  check_dataset(data);
  check_params(s.student.spec, s.student.params);
  set_classifier_trainable(s.student.spec, s.student.params, false);
  Adam<float> adam(AdamConfig{s.config.lr});
  Rng rng(s.config.seed);
  const std::size_t first_epoch = s.history.empty() ? 0 : s.history.back().epoch;
  for (std::size_t epoch = 0; epoch < s.config.epochs; ++epoch) {
    adam.set_lr(scheduled_lr(s.config.lr, epoch, s.config.lr_step, s.config.lr_decay));
    std::vector<double> tap_sum(s.config.taps.size(), 0.0);
    double total = 0.0;
    for (const auto& idx : epoch_batches(data.size(), s.config.batch_size, &rng)) {
      const Batch batch = make_batch(data, idx);
      zero_grads(s.student.params);
      const auto loss = reconstruction_loss(s.teacher, s.student, s.config, batch.images, &s.student.params);
      adam.step(s.student.params);
      ++s.steps;
      const double w = static_cast<double>(idx.size());
      total += loss.value * w;
      for (std::size_t k = 0; k < tap_sum.size(); ++k) tap_sum[k] += loss.per_tap[k].loss * w;
    }
    const double n = static_cast<double>(data.size());
    const std::size_t e = first_epoch + epoch + 1;
    for (std::size_t k = 0; k < tap_sum.size(); ++k) {
      s.history.push_back({"recover", e, s.config.taps.ids[k], tap_sum[k] / n});
    }
    HistoryRow row{"recover", e, "total", total / n};
    if (eval) row.accuracy = evaluate(s.student, *eval).accuracy;
    s.history.push_back(row);
  }
  set_classifier_trainable(s.student.spec, s.student.params, true);
}

TrainResult finetune(Model<float>& model, const Dataset& data, const TrainOptions& o, const Dataset* eval) {
  check_dataset(data);
  check_params(model.spec, model.params);
  if (o.lr < 0.0) throw ConfigError("learning rate must be non-negative");
  TrainResult result;
  Adam<float> adam(AdamConfig{o.lr});
  Rng rng(o.seed);
  for (std::size_t epoch = 0; epoch < o.epochs; ++epoch) {
    adam.set_lr(scheduled_lr(o.lr, epoch, o.lr_step, o.lr_decay));
    double total = 0.0;
    std::size_t correct = 0;
    for (const auto& idx : epoch_batches(data.size(), o.batch_size, &rng)) {
      const Batch batch = make_batch(data, idx);
      zero_grads(model.params);
      const Trace<float> trace = run_forward(model.spec, model.params, batch.images);
      const auto ce = cross_entropy(trace.logits(), batch.labels);
      for (std::size_t r = 0; r < idx.size(); ++r) {
        correct += argmax_row(trace.logits(), r) == static_cast<std::size_t>(batch.labels[r]);
      }
      BackwardRequest<float> req;
      req.grad_logits = &ce.grad;
      req.param_grads = &model.params;
      run_backward(model.spec, model.params, trace, req);
      adam.step(model.params);
      ++result.steps;
      total += static_cast<double>(ce.value) * static_cast<double>(idx.size());
      if (!std::isfinite(total)) throw Error(o.stage + " diverged: non-finite loss in epoch " + std::to_string(epoch + 1));
    }
    const double n = static_cast<double>(data.size());
    result.history.push_back({o.stage, epoch + 1, "ce", total / n, static_cast<double>(correct) / n});
    if (eval) {
      const EvalResult r = evaluate(model, *eval);
      result.history.push_back({o.stage, epoch + 1, "eval", r.loss, r.accuracy});
    }
  }
  return result;
}

EvalResult evaluate(const Model<float>& model, const Dataset& data, std::size_t batch_size) {
  check_dataset(data);
  EvalResult r;
  double total = 0.0;
  std::size_t correct = 0;
  for (const auto& idx : epoch_batches(data.size(), batch_size, nullptr)) {
    const Batch batch = make_batch(data, idx);
    const Trace<float> trace = run_forward(model.spec, model.params, batch.images);
    total += static_cast<double>(cross_entropy(trace.logits(), batch.labels).value) * static_cast<double>(idx.size());
    for (std::size_t row = 0; row < idx.size(); ++row) {
      correct += argmax_row(trace.logits(), row) == static_cast<std::size_t>(batch.labels[row]);
    }
  }
  r.samples = data.size();
  r.loss = total / static_cast<double>(r.samples);
  r.accuracy = static_cast<double>(correct) / static_cast<double>(r.samples);
  return r;
}

IterativeResult iterative_recover_baseline(const Model<float>& teacher, const PruningPlan& plan, const Dataset& data,
                                           const IterativeOptions& o) {
  check_dataset(data);
  check_plan(teacher.spec, plan);
  IterativeResult result{teacher, {}, 0, {}};
  Rng rng(o.seed);
  for (const auto& mask : plan.masks) {
    if (mask.all_kept()) continue;
    Model<float>& student = result.student;
    PruningPlan single = identity_plan(student.spec);
    single.floor = plan.floor;
    for (auto& m : single.masks) {
      if (m.id == mask.id) m.keep = mask.keep;
    }
    student = apply_plan(student.spec, student.params, single);

    IterativeLayerRecord rec;
    rec.pruned = mask.id;
    std::vector<std::size_t> consumer_idx;
    for (const auto& c : channel_consumers(student.spec, student.spec.index_of(mask.id))) {
      consumer_idx.push_back(c.index);
      rec.consumers.push_back(student.spec.layers[c.index].id);
    }
    // Only the consumers' weights move.
    std::map<std::string, bool> saved;
    for (auto& [name, p] : student.params) {
      saved[name] = p.trainable;
      p.trainable = false;
    }
    for (const auto& id : rec.consumers) student.params.at(weight_key(id)).trainable = true;

    Adam<float> adam(AdamConfig{o.lr});
    const std::size_t stop = *std::min_element(consumer_idx.begin(), consumer_idx.end());
    for (std::size_t epoch = 0; epoch < o.epochs_per_layer; ++epoch) {
      double total = 0.0;
      for (const auto& idx : epoch_batches(data.size(), o.batch_size, &rng)) {
        const Batch batch = make_batch(data, idx);
        const Trace<float> target = run_forward(teacher.spec, teacher.params, batch.images);
        const Trace<float> trace = run_forward(student.spec, student.params, batch.images);
        zero_grads(student.params);
        BackwardRequest<float> req;
        req.param_grads = &student.params;
        req.stop_at = stop;
        double loss = 0.0;
        for (std::size_t ci : consumer_idx) {
          const std::string& id = student.spec.layers[ci].id;
          auto m = mimic_mse(target.outputs[teacher.spec.index_of(id)], trace.outputs[ci]);
          loss += m.value / static_cast<double>(consumer_idx.size());
          for (auto& g : m.grad.data()) g = static_cast<float>(g / static_cast<double>(consumer_idx.size()));
          req.node_grads.emplace(ci, std::move(m.grad));
        }
        run_backward(student.spec, student.params, trace, req);
        adam.step(student.params);
        ++rec.steps;
        total += loss * static_cast<double>(idx.size());
      }
      rec.final_loss = total / static_cast<double>(data.size());
      result.history.push_back({"iterative", result.layers.size() + 1, mask.id, rec.final_loss});
    }
    for (auto& [name, p] : student.params) p.trainable = saved.at(name);
    result.steps += rec.steps;
    result.layers.push_back(std::move(rec));
  }
  return result;
}

#define PRUNEKIT_INSTANTIATE_RECOVERY(T)                                                                        \
  template MimicLoss<T> mimic_mse<T>(const Tensor<T>&, const Tensor<T>&, bool);                                 \
  template MimicLoss<T> mimic_lasso<T>(const Tensor<T>&, const Tensor<T>&, bool);                               \
  template Tensor<T> channel_distribution<T>(const Tensor<T>&);                                                 \
  template MimicLoss<T> mimic_kl<T>(const Tensor<T>&, const Tensor<T>&, double);                                \
  template MimicLoss<T> mimic_js<T>(const Tensor<T>&, const Tensor<T>&, double);                                \
  template MimicLoss<T> mimic<T>(MimicFunction, const Tensor<T>&, const Tensor<T>&, double, bool);              \
  template ReconstructionLoss reconstruction_loss<T>(const Model<T>&, const Model<T>&, const MimicConfig&,      \
                                                     const Tensor<T>&, ParamSet<T>*);

PRUNEKIT_INSTANTIATE_RECOVERY(float)
PRUNEKIT_INSTANTIATE_RECOVERY(double)

}  // namespace prunekit
