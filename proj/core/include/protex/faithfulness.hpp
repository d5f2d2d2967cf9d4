#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "protex/embedding_store.hpp"
#include "protex/protonet.hpp"
#include "protex/provider.hpp"

namespace protex {

/// Token rationale masks keyed by example id (1 = rationale token).
struct RationaleSet {
  std::map<std::string, std::vector<std::uint8_t>, std::less<>> masks;

  /// Every id exists in `ds`, every mask matches its token count, and at
  /// least one mask is nonempty.
  void validate(const Dataset& ds) const;
};

/// rationales.jsonl: one {"id": str, "mask": [0/1, ...]} per line.
RationaleSet parse_rationales(std::string_view text, const std::string& source);
RationaleSet load_rationales(const std::filesystem::path& path);
/// Lines ordered by id.
std::string format_rationales(const RationaleSet& rs);
void save_rationales(const RationaleSet& rs, const std::filesystem::path& path);

struct CompSuffDetail {
  std::string id;
  int predicted = 0;
  double p_full = 0.0;
  std::optional<double> p_without;  // unset when nothing remains
  std::optional<double> p_only;     // unset when the rationale is empty
};

struct CompSuffResult {
  double comprehensiveness = 0.0;  // mean over evaluated examples, 0 if none
  double sufficiency = 0.0;
  std::size_t comp_evaluated = 0, comp_skipped = 0;
  std::size_t suff_evaluated = 0, suff_skipped = 0;
  std::vector<CompSuffDetail> details;
};

/// comp = p(t|x) - p(t|x without rationale), suff = p(t|x) - p(t|rationale
/// only), t the predicted class on the stored embedding. Perturbed inputs are
/// re-embedded by `provider`; examples with nothing left (or, in word mode,
/// too few tokens for one patch) are skipped and counted. Examples are
/// visited in dataset order.
CompSuffResult comp_suff(const Model& model, const Dataset& ds, const RationaleSet& rationales,
                         const EmbeddingProvider& provider);

struct RemovalResult {
  double acc_before = 0.0;
  double acc_after = 0.0;
  std::vector<int> preds_before, preds_after;
  /// Prototype masked for each example (per-example mode) or the single
  /// prototype deleted (global mode, repeated).
  std::vector<std::size_t> removed;
};

/// Logits with prototype j's similarity and head column dropped.
std::vector<double> masked_logits(const Model& model, std::span<const double> sims, std::size_t j);

/// Per example: mask its top-importance prototype and re-predict. With
/// `global`, instead delete the prototype that is most often the top
/// explanation (lowest index on ties) for every example.
RemovalResult prototype_removal(const Model& model, const PatchedSplit& test, bool global = false);

struct FaithfulnessReport {
  std::optional<CompSuffResult> comp_suff;
  RemovalResult removal;
  bool global = false;

  nlohmann::json to_json(bool include_details = false) const;
};

/// Runs prototype removal on the test split and, when rationales and a
/// novel-text provider are given, comprehensiveness/sufficiency.
FaithfulnessReport evaluate_faithfulness(const Model& model, const Dataset& ds, const RationaleSet* rationales,
                                         const EmbeddingProvider* provider, bool global = false);

}  // namespace protex
