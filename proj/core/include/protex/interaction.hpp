#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "protex/embedding_store.hpp"
#include "protex/protonet.hpp"
#include "protex/provider.hpp"
#include "protex/trainer.hpp"

namespace protex {

enum class InteractionOp { remove, add, replace, reinit, finetune, prune, soft_replace };

std::string_view to_string(InteractionOp op) noexcept;
InteractionOp parse_interaction_op(std::string_view s);

/// One user edit. Payload is exactly one of example_id / text / vector.
struct InteractionCommand {
  InteractionOp op = InteractionOp::remove;
  std::optional<std::size_t> target;
  std::optional<std::string> example_id;
  std::optional<std::string> text;
  std::optional<std::vector<double>> vector;
  std::optional<double> certainty;
  double prune_threshold = 0.8;
  /// Class of an added prototype. Defaults to the payload example's label
  /// (add) or the replaced prototype's class (replace / soft_replace).
  std::optional<int> cls;

  bool has_payload() const noexcept { return example_id || text || vector; }
  /// InvalidCommand for missing/extra fields, CertaintyRange for c outside [0,1].
  void validate() const;

  static InteractionCommand from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct InteractionOutcome {
  bool accepted = false;
  InteractionOp op = InteractionOp::remove;
  double acc_before = 0.0;
  double acc_after = 0.0;
  std::string digest_before;
  std::string digest_after;
  std::size_t retrain_epochs_used = 0;
  /// Index of the edited / inserted prototype after the command, if any.
  std::optional<std::size_t> prototype;
  std::string message;

  nlohmann::json to_json() const;
};

/// Applies one command. On any error or a rejected prune the model is left
/// untouched; otherwise structural and relearning edits are followed by
/// head-only retraining. Accuracies are balanced accuracy on the validation
/// split (training split when there is none).
InteractionOutcome apply(Model& model, const InteractionCommand& cmd, const Dataset& ds, const TrainConfig& cfg,
                         const EmbeddingProvider* provider = nullptr);

void freeze(Model& model, std::span<const std::size_t> ids, bool flag);

/// Cut candidates for pruning a display text, longest first: the first two
/// sentences, then that cut limited to 15 tokens. Candidates that do not
/// shorten the text are dropped.
std::vector<std::vector<std::string>> prune_candidates(std::span<const std::string> tokens);

}  // namespace protex
