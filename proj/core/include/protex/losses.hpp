#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "protex/matrix.hpp"
#include "protex/protonet.hpp"

namespace protex {

/// Weights of the composite objective. Defaults are the Yelp/SBERT row of the
/// published grid with the interaction weight at 0.5.
struct LossWeights {
  double clst = 0.5;
  double sep = 0.2;
  double distr = 0.1;
  double divers = 0.3;
  double l1 = 0.001;
  double interact = 0.5;
  /// Compatibility switch: use the literal "min" reductions in Clst, Sep,
  /// Distr and Divers instead of the max-similarity reading.
  bool literal_min = false;

  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

/// Soft-feedback target: pull prototype `prototype` toward `vec` until their
/// similarity reaches `certainty`.
struct InteractionTarget {
  std::size_t prototype = 0;
  std::vector<double> vec;
  double certainty = 0.0;
};

struct LossTerms {
  double ce = 0, clst = 0, sep = 0, distr = 0, divers = 0, l1 = 0, interact = 0, total = 0;
  bool operator==(const LossTerms&) const = default;
};

/// One loss term with its gradients. `signature` records every discrete
/// choice (argmax patch/prototype, active hinge, floored probability) the
/// value depends on; finite differences use it to detect kinks.
struct TermGrad {
  double value = 0.0;
  Mat grad_protos;  // m x d
  Mat grad_head;    // C x m
  std::vector<std::int64_t> signature;
};

/// Unweighted terms; total = ce + sum(lambda_i * term_i).
struct LossBreakdown {
  LossTerms terms;
  Mat grad_protos;
  Mat grad_head;
  std::vector<std::int64_t> signature;
  bool divers_defined = true;
};

using BatchView = std::span<const PatchedExample* const>;

/// n / (C * n_c) per class; 0 for classes that never occur.
std::vector<double> class_weights(std::span<const int> labels, int classes);

inline constexpr double kProbFloor = 1e-12;

/// (1/n) sum_i w[y_i] * -log(max(p_i[y_i], floor)) over precomputed rows.
double weighted_nll(std::span<const std::vector<double>> probs, std::span<const int> labels,
                    std::span<const double> weights);

TermGrad ce_loss(BatchView batch, const Model& model, std::span<const double> class_weights);

struct ClstSep {
  TermGrad clst, sep;
};
ClstSep clst_sep(BatchView batch, const Model& model, bool literal_min = false);

struct DistrDivers {
  TermGrad distr, divers;
  bool divers_defined = true;  // false for m < 2 (term reported as 0)
};
DistrDivers distr_divers(BatchView all, const Model& model, bool literal_min = false);

/// lambda6 * max(c - sim(p_target, p_new), 0); identically zero at c = 0.
TermGrad interact_loss(const Model& model, const InteractionTarget& target, double lambda6);

/// Mini-batch terms (CE, Clst, Sep) over `batch`; population terms (Distr)
/// over `all`; Divers and L1 over parameters. Frozen prototype rows get zero
/// gradient.
LossBreakdown total_loss(BatchView batch, BatchView all, const Model& model, const LossWeights& weights,
                         std::span<const double> class_weights, const InteractionTarget* target = nullptr);

// --- parameter packing ----------------------------------------------------

/// Trainable coordinates: unfrozen prototype rows, then masked head entries.
std::vector<double> pack_params(const Model& model);
void unpack_params(Model& model, std::span<const double> params);
std::vector<double> pack_grads(const Model& model, const Mat& grad_protos, const Mat& grad_head);

// --- finite-difference validation -----------------------------------------

struct FdSample {
  double value = 0.0;
  std::vector<std::int64_t> signature;
};

using FdFunction = std::function<FdSample(std::span<const double>)>;

struct FdReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  std::size_t excluded_ties = 0;
  double tolerance = 0.0;
  bool passed = true;
};

/// Central differences per coordinate against `analytic`. Relative error is
/// |fd - an| / max(|fd|, |an|, denom_floor). Coordinates whose +-h probes
/// change the discrete signature sit within h of a tie and are excluded.
FdReport fd_check(const FdFunction& f, std::span<const double> params, std::span<const double> analytic,
                  double h, double tol, double denom_floor = 1e-3);

}  // namespace protex
