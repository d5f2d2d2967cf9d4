#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "protex/embedding_store.hpp"
#include "protex/matrix.hpp"
#include "protex/patching.hpp"

namespace protex {

struct PrototypeDisplay {
  std::string source_id;
  std::string text;
  bool operator==(const PrototypeDisplay&) const = default;
};

struct PrototypeSet {
  Mat vecs;                     // m x d
  std::vector<int> class_of;    // length m
  std::vector<std::uint8_t> frozen;
  std::vector<std::optional<PrototypeDisplay>> display;

  std::size_t size() const noexcept { return class_of.size(); }
  bool operator==(const PrototypeSet&) const = default;
};

/// Prototype layer plus the class-masked, nonnegative linear head. The head
/// is stored as a dense C x m matrix; entries off the class mask are kept at
/// exactly zero by enforce_head_constraints().
struct Model {
  Mode mode = Mode::sentence;
  std::size_t dim = 0;
  int classes = 0;
  SimKind sim = SimKind::cosine;
  SelectorConfig selector;
  PrototypeSet protos;
  Mat head;  // C x m
  std::uint64_t seed = 0;
  std::uint32_t epoch = 0;

  std::size_t num_prototypes() const noexcept { return protos.size(); }
  bool mask(int c, std::size_t j) const { return protos.class_of[j] == c; }
  Mat class_mask() const;

  /// w <- max(w, 0) and zero every off-class entry.
  void enforce_head_constraints();
  /// Rounds every parameter to the nearest float, so checkpoints (f32) round
  /// trip exactly.
  void quantize();
  /// FNV-1a over prototype vectors, class assignment, frozen flags and head.
  std::string digest() const;

  void remove_prototype(std::size_t j);
  std::size_t append_prototype(std::span<const double> vec, int cls, double head_weight,
                               std::optional<PrototypeDisplay> display);

  void check_consistent() const;
  bool operator==(const Model&) const = default;
};

/// Candidate vectors an example offers to the prototype layer: one row in
/// sentence mode, one row per selected patch in word mode.
struct PatchedExample {
  int label = 0;
  Mat patches;
  std::vector<std::vector<std::size_t>> token_indices;  // empty in sentence mode
};

PatchedExample prepare_example(const EmbeddedExample& ex, Mode mode, const SelectorConfig& selector);

struct PatchedSplit {
  std::vector<PatchedExample> examples;
  std::vector<std::size_t> source;  // dataset index of each entry
  std::vector<int> labels() const;
};

struct PatchedData {
  PatchedSplit train, val, test;
};

PatchedData prepare_dataset(const Dataset& ds, Mode mode, const SelectorConfig& selector);

struct ForwardResult {
  std::vector<double> sims;    // length m
  std::vector<std::size_t> best_patch;
  std::vector<double> logits;  // length C
  std::vector<double> probs;
  int predicted = 0;
};

std::vector<double> softmax(std::span<const double> logits);

/// Per-prototype best-patch similarity for one example.
void prototype_similarities(const PatchedExample& ex, const Model& model, std::span<double> sims,
                            std::span<std::size_t> best_patch);

std::vector<double> logits_from_sims(const Model& model, std::span<const double> sims);

ForwardResult forward(const PatchedExample& ex, const Model& model);
ForwardResult forward(const EmbeddedExample& ex, const Model& model);

struct ExplanationItem {
  std::size_t prototype = 0;
  double similarity = 0.0;
  double head_weight = 0.0;
  double importance = 0.0;
  std::string display;
  std::vector<std::size_t> patch_tokens;  // word mode: matched query tokens
};

struct ExplanationResult {
  int predicted_class = 0;
  std::vector<double> probs;
  std::vector<double> sims;
  std::vector<ExplanationItem> items;  // importance descending
};

/// Ranks the predicted class's prototypes by similarity x head weight.
ExplanationResult explain(const EmbeddedExample& ex, const Model& model, std::size_t top_k);
ExplanationResult explain(const PatchedExample& ex, const Model& model, std::size_t top_k);

/// "0.52·8.07 = 4.20": two-decimal rendering of an importance product.
std::string format_importance(double similarity, double head_weight);

struct ProjectionEntry {
  std::size_t prototype = 0;
  std::string source_id;
  double sim_before = 0.0;  // similarity of the old prototype to the chosen example
  double sim_after = 0.0;
};

struct ProjectionReport {
  std::vector<ProjectionEntry> entries;
};

/// Sentence mode: moves each unfrozen prototype onto its most similar
/// same-class training embedding.
ProjectionReport project(Model& model, const Dataset& train_data, std::span<const std::size_t> candidates);

/// Word mode: labels each prototype with the tokens of its nearest training
/// patch; the latent vectors stay put.
std::vector<std::string> nn_display(Model& model, const Dataset& data, std::span<const std::size_t> candidates);

}  // namespace protex
