#include "protex/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "protex/error.hpp"
#include "protex/random.hpp"

namespace protex {

double TrainConfig::warmup_epochs() const {
  return std::min(10.0, static_cast<double>(epochs) / 20.0);
}

std::size_t TrainConfig::projection_epoch(Mode mode) const {
  if (mode != Mode::sentence) return 0;
  if (project_at_epoch) return std::min(*project_at_epoch, epochs);
  return static_cast<std::size_t>(std::llround(0.8 * static_cast<double>(epochs)));
}

double TrainConfig::retrain_lr() const {
  const std::size_t p = project_at_epoch && *project_at_epoch > 0
                            ? *project_at_epoch
                            : static_cast<std::size_t>(std::llround(0.8 * static_cast<double>(epochs)));
  return lr_at(static_cast<double>(std::min(p, epochs)), *this);
}

void TrainConfig::validate() const {
  PROTEX_THROW_IF(epochs < 1, ErrorCode::ConfigInvalid, "epochs must be >= 1");
  PROTEX_THROW_IF(!(lr_base > 0.0), ErrorCode::ConfigInvalid, "lr_base must be positive");
  PROTEX_THROW_IF(batch_size < 1, ErrorCode::ConfigInvalid, "batch_size must be >= 1");
  PROTEX_THROW_IF(validate_every < 1, ErrorCode::ConfigInvalid, "validate_every must be >= 1");
  PROTEX_THROW_IF(prototypes < 1, ErrorCode::ConfigInvalid, "prototypes must be >= 1");
  PROTEX_THROW_IF(!(adam.beta1 >= 0 && adam.beta1 < 1 && adam.beta2 >= 0 && adam.beta2 < 1 && adam.eps > 0),
                  ErrorCode::ConfigInvalid, "adam parameters out of range");
  loss.validate();
  selector.validate();
}

double lr_at(double step, const TrainConfig& cfg) {
  const double e = static_cast<double>(cfg.epochs);
  const double wup = cfg.warmup_epochs();
  const double r = std::min(step / wup, (e - step) / (e - wup));
  return cfg.lr_base * std::max(r, 0.0);
}

double balanced_accuracy(std::span<const int> preds, std::span<const int> labels, int classes) {
  PROTEX_THROW_IF(preds.size() != labels.size(), ErrorCode::CountMismatch, "prediction/label lengths differ");
  PROTEX_THROW_IF(labels.empty(), ErrorCode::EmptyInput, "balanced accuracy of an empty set");
  std::vector<double> hit(static_cast<std::size_t>(classes), 0.0), total(static_cast<std::size_t>(classes), 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto y = static_cast<std::size_t>(labels[i]);
    total.at(y) += 1.0;
    if (preds[i] == labels[i]) hit[y] += 1.0;
  }
  double acc = 0.0;
  int present = 0;
  for (std::size_t c = 0; c < total.size(); ++c)
    if (total[c] > 0) {
      acc += hit[c] / total[c];
      ++present;
    }
  return acc / present;
}

PrototypeSet init_prototypes(const TrainConfig& cfg, const Dataset& ds) {
  const std::size_t m = cfg.prototypes;
  const auto C = static_cast<std::size_t>(ds.classes);
  PROTEX_THROW_IF(C == 0 || m % C != 0, ErrorCode::IndivisibleM,
                  std::to_string(m) + " prototypes cannot be split evenly over " + std::to_string(C) + " classes");
  PrototypeSet ps;
  ps.vecs = Mat(m, ds.dim);
  Rng rng(mix64(cfg.seed ^ 0x70726f746f747970ULL));
  for (std::size_t j = 0; j < m; ++j) {
    auto row = ps.vecs.row(j);
    double n2 = 0.0;
    for (auto& v : row) {
      v = rng.normal();
      n2 += v * v;
    }
    const double inv = 1.0 / std::sqrt(n2);
    for (auto& v : row) v = static_cast<double>(static_cast<float>(v * inv));
  }
  const std::size_t per_class = m / C;
  for (std::size_t j = 0; j < m; ++j) ps.class_of.push_back(static_cast<int>(j / per_class));
  ps.frozen.assign(m, 0);
  ps.display.assign(m, std::nullopt);
  return ps;
}

Model init_model(const TrainConfig& cfg, const Dataset& ds) {
  cfg.validate();
  Model model;
  model.mode = ds.mode;
  model.dim = ds.dim;
  model.classes = ds.classes;
  model.sim = cfg.sim;
  model.selector = cfg.selector;
  model.seed = cfg.seed;
  model.protos = init_prototypes(cfg, ds);
  model.head = Mat(static_cast<std::size_t>(ds.classes), cfg.prototypes, 1.0);
  model.enforce_head_constraints();
  return model;
}

void Adam::step(Mat& params, const Mat& grad, double lr, const AdamConfig& cfg,
                std::span<const std::uint8_t> row_enabled) {
  if (m_.rows() != params.rows() || m_.cols() != params.cols()) {
    m_ = Mat(params.rows(), params.cols(), 0.0);
    v_ = Mat(params.rows(), params.cols(), 0.0);
    t_ = 0;
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t_));
  for (std::size_t r = 0; r < params.rows(); ++r) {
    if (!row_enabled.empty() && !row_enabled[r]) continue;
    for (std::size_t c = 0; c < params.cols(); ++c) {
      const double g = grad(r, c);
      double& m = m_(r, c);
      double& v = v_(r, c);
      m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
      v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
      params(r, c) -= lr * (m / bc1) / (std::sqrt(v / bc2) + cfg.eps);
    }
  }
}

std::string_view to_string(Phase p) noexcept {
  switch (p) {
    case Phase::joint: return "joint";
    case Phase::head: return "head";
    case Phase::prototype: return "prototype";
  }
  return "joint";
}

std::vector<int> predict(const Model& model, const PatchedSplit& split) {
  std::vector<int> out;
  out.reserve(split.examples.size());
  for (const auto& ex : split.examples) out.push_back(forward(ex, model).predicted);
  return out;
}

double evaluate(const Model& model, const PatchedSplit& split) {
  const auto preds = predict(model, split);
  const auto labels = split.labels();
  return balanced_accuracy(preds, labels, model.classes);
}

namespace {

void add_terms(LossTerms& acc, const LossTerms& t) {
  acc.ce += t.ce;
  acc.clst += t.clst;
  acc.sep += t.sep;
  acc.distr += t.distr;
  acc.divers += t.divers;
  acc.l1 += t.l1;
  acc.interact += t.interact;
  acc.total += t.total;
}

void scale_terms(LossTerms& t, double s) {
  for (double* v : {&t.ce, &t.clst, &t.sep, &t.distr, &t.divers, &t.l1, &t.interact, &t.total}) *v *= s;
}

std::vector<std::uint8_t> trainable_rows(const Model& model, const OptimizeScope& scope) {
  std::vector<std::uint8_t> rows(model.num_prototypes(), 0);
  for (std::size_t j = 0; j < rows.size(); ++j) {
    const bool allowed = scope.prototype_mask.size() == rows.size() ? scope.prototype_mask[j] != 0 : true;
    rows[j] = (!model.protos.frozen[j] && allowed) ? 1 : 0;
  }
  return rows;
}

using EpochCallback = std::function<bool(EpochRecord&, Model&)>;

RunResult optimize_impl(Model& model, const PatchedSplit& train_split, const TrainConfig& cfg,
                        const OptimizeScope& scope, const RunOptions& opts, Phase phase, std::size_t epoch_offset,
                        const EpochCallback& on_epoch) {
  PROTEX_THROW_IF(train_split.examples.empty(), ErrorCode::EmptyDataset, "training split is empty");
  RunResult res;
  const auto cw = class_weights(train_split.labels(), model.classes);
  std::vector<const PatchedExample*> all;
  all.reserve(train_split.examples.size());
  for (const auto& ex : train_split.examples) all.push_back(&ex);

  Adam proto_adam, head_adam;
  auto rows = trainable_rows(model, scope);

  if (opts.stop && opts.stop(model)) {
    res.stopped_early = true;
    return res;
  }

  std::vector<const PatchedExample*> order = all;
  for (std::size_t e = 1; e <= opts.epochs; ++e) {
    const std::size_t global_epoch = epoch_offset + e;
    const double lr = opts.lr ? opts.lr(global_epoch) : cfg.lr_base;
    Rng rng(mix64(opts.shuffle_seed ^ mix64(global_epoch)));
    order = all;
    rng.shuffle(std::span<const PatchedExample*>(order));

    EpochRecord rec;
    rec.epoch = global_epoch;
    rec.phase = phase;
    rec.lr = lr;
    std::size_t batches = 0;
    bool stop = false;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      BatchView batch(order.data() + start, end - start);
      const auto bd = total_loss(batch, all, model, cfg.loss, cw, opts.target);
      if (!std::isfinite(bd.terms.total)) {
        res.diverged = true;
        break;
      }
      Model before = model;
      if (scope.prototypes) proto_adam.step(model.protos.vecs, bd.grad_protos, lr, cfg.adam, rows);
      if (scope.head) head_adam.step(model.head, bd.grad_head, lr, cfg.adam);
      model.enforce_head_constraints();
      model.quantize();
      auto finite = [](std::span<const double> xs) {
        return std::all_of(xs.begin(), xs.end(), [](double v) { return std::isfinite(v); });
      };
      if (!finite(model.protos.vecs.flat()) || !finite(model.head.flat())) {
        model = std::move(before);
        res.diverged = true;
        break;
      }
      add_terms(rec.terms, bd.terms);
      ++batches;
      if (opts.stop && opts.stop(model)) {
        stop = true;
        break;
      }
    }
    if (batches > 0) scale_terms(rec.terms, 1.0 / static_cast<double>(batches));
    ++res.epochs_run;
    if (res.diverged) {
      res.records.push_back(rec);
      break;
    }
    const bool modified = on_epoch ? on_epoch(rec, model) : false;
    res.records.push_back(rec);
    if (modified) {
      proto_adam = Adam();
      head_adam = Adam();
      rows = trainable_rows(model, scope);
    }
    if (stop) {
      res.stopped_early = true;
      break;
    }
  }
  return res;
}

struct BestTracker {
  std::optional<Model> model;
  std::size_t epoch = 0;
  double val = -1.0;

  void offer(const Model& m, std::size_t epoch_no, double v) {
    // ties go to the later, longer-trained snapshot
    if (!model || v >= val) {
      model = m;
      epoch = epoch_no;
      val = v;
    }
  }
};

}  // namespace

RunResult optimize(Model& model, const PatchedSplit& train_split, const TrainConfig& cfg, const OptimizeScope& scope,
                   const RunOptions& opts) {
  const Phase phase = scope.prototypes ? (scope.head ? Phase::joint : Phase::prototype) : Phase::head;
  return optimize_impl(model, train_split, cfg, scope, opts, phase, 0, {});
}

TrainResult train(const Dataset& ds, Model model, const TrainConfig& cfg, const EpochHook& hook) {
  cfg.validate();
  model.check_consistent();
  PROTEX_THROW_IF(model.mode != ds.mode || model.dim != ds.dim || model.classes != ds.classes,
                  ErrorCode::DimMismatch, "model does not match dataset (mode, dim or classes)");
  const auto data = prepare_dataset(ds, model.mode, model.selector);
  const PatchedSplit& val_split = data.val.examples.empty() ? data.train : data.val;

  TrainReport report;
  const std::size_t proj_epoch = cfg.projection_epoch(model.mode);
  const bool projecting = proj_epoch > 0;
  const std::size_t joint_epochs = projecting ? proj_epoch : cfg.epochs;

  auto due = [&](std::size_t epoch_in_phase, std::size_t phase_len) {
    return epoch_in_phase % cfg.validate_every == 0 || epoch_in_phase == phase_len;
  };

  // phase 1
  BestTracker joint_best;
  RunOptions joint_opts;
  joint_opts.epochs = joint_epochs;
  joint_opts.lr = [&cfg](std::size_t e) { return lr_at(static_cast<double>(e), cfg); };
  joint_opts.shuffle_seed = cfg.seed;
  auto joint_cb = [&](EpochRecord& rec, Model& m) {
    m.epoch = static_cast<std::uint32_t>(rec.epoch);
    if (due(rec.epoch, joint_epochs)) {
      rec.val_bacc = evaluate(m, val_split);
      joint_best.offer(m, rec.epoch, *rec.val_bacc);
    }
    bool modified = false;
    if (hook) modified = hook(rec, m);
    report.epochs.push_back(rec);
    // snapshots from before an edit would silently undo it
    if (modified) {
      joint_best = {};
      joint_best.offer(m, rec.epoch, evaluate(m, val_split));
    }
    return modified;
  };
  const auto joint_run = optimize_impl(model, data.train, cfg, OptimizeScope{}, joint_opts, Phase::joint, 0, joint_cb);
  if (joint_run.diverged) {
    report.diverged = true;
    if (!joint_run.records.empty() && report.epochs.size() < joint_run.records.size())
      report.epochs.push_back(joint_run.records.back());
  }
  if (!joint_best.model) joint_best.offer(model, model.epoch, evaluate(model, val_split));

  Model result = *joint_best.model;
  report.best_epoch = joint_best.epoch;
  report.best_val_bacc = joint_best.val;

  if (projecting && !report.diverged) {
    report.joint_best_epoch = joint_best.epoch;
    report.joint_best_val_bacc = joint_best.val;
    if (!data.test.examples.empty()) report.pre_projection_test_bacc = evaluate(result, data.test);

    report.projection = project(result, ds, ds.indices(Split::train));
    result.quantize();

    BestTracker head_best;
    head_best.offer(result, joint_epochs, evaluate(result, val_split));
    const double head_lr = lr_at(static_cast<double>(joint_epochs), cfg);
    RunOptions head_opts;
    head_opts.epochs = cfg.head_finetune_epochs;
    head_opts.lr = [head_lr](std::size_t) { return head_lr; };
    head_opts.shuffle_seed = cfg.seed;
    auto head_cb = [&](EpochRecord& rec, Model& m) {
      m.epoch = static_cast<std::uint32_t>(rec.epoch);
      if (due(rec.epoch - joint_epochs, cfg.head_finetune_epochs)) {
        rec.val_bacc = evaluate(m, val_split);
        head_best.offer(m, rec.epoch, *rec.val_bacc);
      }
      bool modified = false;
      if (hook) modified = hook(rec, m);
      report.epochs.push_back(rec);
      if (modified) {
        head_best = {};
        head_best.offer(m, rec.epoch, evaluate(m, val_split));
      }
      return modified;
    };
    OptimizeScope head_scope;
    head_scope.prototypes = false;
    const auto head_run =
        optimize_impl(result, data.train, cfg, head_scope, head_opts, Phase::head, joint_epochs, head_cb);
    report.diverged = head_run.diverged;
    result = *head_best.model;
    report.best_epoch = head_best.epoch;
    report.best_val_bacc = head_best.val;
  } else if (model.mode == Mode::word && !ds.indices(Split::train).empty()) {
    nn_display(result, ds, ds.indices(Split::train));
  }

  result.epoch = static_cast<std::uint32_t>(report.best_epoch);
  if (!data.test.examples.empty()) report.test_bacc = evaluate(result, data.test);
  return {std::move(result), std::move(report)};
}

nlohmann::json TrainReport::to_json() const {
  nlohmann::json j;
  nlohmann::json eps = nlohmann::json::array();
  for (const auto& r : epochs) {
    nlohmann::json e{{"epoch", r.epoch},
                     {"phase", std::string(to_string(r.phase))},
                     {"lr", r.lr},
                     {"loss",
                      {{"total", r.terms.total},
                       {"ce", r.terms.ce},
                       {"clst", r.terms.clst},
                       {"sep", r.terms.sep},
                       {"distr", r.terms.distr},
                       {"divers", r.terms.divers},
                       {"l1", r.terms.l1},
                       {"interact", r.terms.interact}}}};
    if (r.val_bacc) e["val_bacc"] = *r.val_bacc;
    eps.push_back(std::move(e));
  }
  j["epochs"] = std::move(eps);
  j["best_epoch"] = best_epoch;
  j["best_val_bacc"] = best_val_bacc;
  if (joint_best_epoch) j["joint_best_epoch"] = *joint_best_epoch;
  if (joint_best_val_bacc) j["joint_best_val_bacc"] = *joint_best_val_bacc;
  if (pre_projection_test_bacc) j["pre_projection_test_bacc"] = *pre_projection_test_bacc;
  j["test_bacc"] = test_bacc;
  j["diverged"] = diverged;
  if (projection) {
    nlohmann::json p = nlohmann::json::array();
    for (const auto& e : projection->entries)
      p.push_back({{"prototype", e.prototype},
                   {"source_id", e.source_id},
                   {"sim_before", e.sim_before},
                   {"sim_after", e.sim_after}});
    j["projection"] = std::move(p);
  }
  return j;
}

}  // namespace protex
