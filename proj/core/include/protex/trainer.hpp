#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "protex/embedding_store.hpp"
#include "protex/losses.hpp"
#include "protex/protonet.hpp"

namespace protex {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool operator==(const AdamConfig&) const = default;
};

struct TrainConfig {
  std::size_t epochs = 100;
  double lr_base = 1e-3;
  AdamConfig adam;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  LossWeights loss;
  SelectorConfig selector;
  SimKind sim = SimKind::cosine;
  std::size_t prototypes = 10;
  std::size_t validate_every = 10;
  /// Sentence mode only. Unset means 0.8 * epochs; 0 disables projection.
  std::optional<std::size_t> project_at_epoch;
  std::size_t head_finetune_epochs = 20;
  /// Prototype-only relearning budget for reinit / finetune / soft_replace.
  std::size_t relearn_epochs = 20;

  /// min(10, e / 20)
  double warmup_epochs() const;
  /// Resolved projection epoch, 0 when projection is disabled.
  std::size_t projection_epoch(Mode mode) const;
  /// Constant rate for head-only and prototype-only retraining: the
  /// schedule's value at the projection point.
  double retrain_lr() const;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

/// lr_base * min(step / e_wup, (e - step) / (e - e_wup)), one step per epoch.
double lr_at(double step, const TrainConfig& cfg);

/// Mean recall over the classes present in `labels`.
double balanced_accuracy(std::span<const int> preds, std::span<const int> labels, int classes);

/// Seeded Gaussian prototypes scaled to unit norm; prototype j belongs to
/// class j / (m / C). Head starts at 1 on the mask.
Model init_model(const TrainConfig& cfg, const Dataset& ds);
PrototypeSet init_prototypes(const TrainConfig& cfg, const Dataset& ds);

/// Adam state for one parameter matrix.
class Adam {
 public:
  Adam() = default;
  Adam(std::size_t rows, std::size_t cols) : m_(rows, cols, 0.0), v_(rows, cols, 0.0) {}

  /// Updates rows of `params` for which `row_enabled` is true (all rows when
  /// empty). Disabled rows are left bit-unchanged and their moments frozen.
  void step(Mat& params, const Mat& grad, double lr, const AdamConfig& cfg,
            std::span<const std::uint8_t> row_enabled = {});

  std::uint64_t steps() const noexcept { return t_; }

 private:
  Mat m_, v_;
  std::uint64_t t_ = 0;
};

enum class Phase : std::uint8_t { joint = 0, head = 1, prototype = 2 };
std::string_view to_string(Phase p) noexcept;

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based across phases
  Phase phase = Phase::joint;
  double lr = 0.0;
  LossTerms terms;  // mean over mini-batches
  std::optional<double> val_bacc;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_bacc = 0.0;
  /// Best joint-phase snapshot, recorded when projection follows.
  std::optional<std::size_t> joint_best_epoch;
  std::optional<double> joint_best_val_bacc;
  std::optional<double> pre_projection_test_bacc;
  double test_bacc = 0.0;
  std::optional<ProjectionReport> projection;
  bool diverged = false;

  nlohmann::json to_json() const;
};

struct TrainResult {
  Model model;
  TrainReport report;
};

/// Called after every epoch with the live model. Returning true signals the
/// model was edited (e.g. an interaction command ran); optimizer state is then
/// reset.
using EpochHook = std::function<bool(const EpochRecord&, Model&)>;

/// Phase 1 joint training under the composite loss, optional projection at
/// the configured epoch, phase 2 head-only fine-tuning. Validation every
/// validate_every epochs; the best snapshot of the final phase is returned.
TrainResult train(const Dataset& ds, Model model, const TrainConfig& cfg, const EpochHook& hook = {});

/// What may move during an optimization run.
struct OptimizeScope {
  bool head = true;
  bool prototypes = true;
  /// Per-prototype override when non-empty (1 = trainable).
  std::vector<std::uint8_t> prototype_mask;
};

struct RunOptions {
  std::size_t epochs = 0;
  std::function<double(std::size_t)> lr;  // epoch (1-based) -> rate
  const InteractionTarget* target = nullptr;
  /// Checked after every step; true stops the run.
  std::function<bool(const Model&)> stop;
  std::uint64_t shuffle_seed = 0;
};

struct RunResult {
  std::size_t epochs_run = 0;
  std::vector<EpochRecord> records;
  bool stopped_early = false;
  bool diverged = false;
};

/// Mini-batch Adam over the training split with clamp + mask after each step
/// and float quantization of parameters.
RunResult optimize(Model& model, const PatchedSplit& train_split, const TrainConfig& cfg,
                   const OptimizeScope& scope, const RunOptions& opts);

std::vector<int> predict(const Model& model, const PatchedSplit& split);
double evaluate(const Model& model, const PatchedSplit& split);

}  // namespace protex
