#include "protex/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "protex/error.hpp"

namespace protex {

void LossWeights::validate() const {
  for (double v : {clst, sep, distr, divers, l1, interact})
    PROTEX_THROW_IF(!std::isfinite(v) || v < 0.0, ErrorCode::ConfigInvalid,
                    "loss weights must be finite and nonnegative");
}

std::vector<double> class_weights(std::span<const int> labels, int classes) {
  std::vector<double> counts(static_cast<std::size_t>(classes), 0.0);
  for (int y : labels) counts.at(static_cast<std::size_t>(y)) += 1.0;
  std::vector<double> w(counts.size(), 0.0);
  const double n = static_cast<double>(labels.size());
  for (std::size_t c = 0; c < counts.size(); ++c)
    if (counts[c] > 0) w[c] = n / (static_cast<double>(classes) * counts[c]);
  return w;
}

double weighted_nll(std::span<const std::vector<double>> probs, std::span<const int> labels,
                    std::span<const double> weights) {
  PROTEX_THROW_IF(probs.size() != labels.size() || probs.empty(), ErrorCode::EmptyInput,
                  "weighted_nll needs equal, nonzero lengths");
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const auto y = static_cast<std::size_t>(labels[i]);
    acc += weights[y] * -std::log(std::max(probs[i][y], kProbFloor));
  }
  return acc / static_cast<double>(probs.size());
}

namespace {

TermGrad zero_term(const Model& model) {
  TermGrad t;
  t.grad_protos = Mat(model.num_prototypes(), model.dim, 0.0);
  t.grad_head = Mat(static_cast<std::size_t>(model.classes), model.num_prototypes(), 0.0);
  return t;
}

void zero_frozen(const Model& model, Mat& grad_protos) {
  for (std::size_t j = 0; j < model.num_prototypes(); ++j)
    if (model.protos.frozen[j]) std::fill(grad_protos.row(j).begin(), grad_protos.row(j).end(), 0.0);
}

struct Reduced {
  double value = 0.0;
  std::size_t arg = 0;
};

// max (or min) over patches of sim(z, p), lowest index on ties
Reduced reduce_patches(const PatchedExample& ex, std::span<const double> p, SimKind kind, bool use_min) {
  Reduced r;
  r.value = use_min ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
  for (std::size_t z = 0; z < ex.patches.rows(); ++z) {
    const double s = similarity(ex.patches.row(z), p, kind);
    if (use_min ? s < r.value : s > r.value) {
      r.value = s;
      r.arg = z;
    }
  }
  return r;
}

// Per (example, prototype) reduced similarities for a batch.
struct SimTable {
  std::vector<std::vector<Reduced>> rows;  // rows[i][j]
};

SimTable build_table(BatchView batch, const Model& model, bool use_min) {
  SimTable t;
  t.rows.resize(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& ex = *batch[i];
    PROTEX_THROW_IF(ex.patches.rows() == 0, ErrorCode::TooShort, "example without patches");
    PROTEX_THROW_IF(ex.patches.cols() != model.dim, ErrorCode::DimMismatch, "example dim != model dim");
    t.rows[i].resize(model.num_prototypes());
    for (std::size_t j = 0; j < model.num_prototypes(); ++j)
      t.rows[i][j] = reduce_patches(ex, model.protos.vecs.row(j), model.sim, use_min);
  }
  return t;
}

TermGrad ce_from_table(BatchView batch, const SimTable& table, const Model& model,
                       std::span<const double> cw) {
  TermGrad out = zero_term(model);
  const std::size_t m = model.num_prototypes();
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  std::vector<double> sims(m);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& ex = *batch[i];
    for (std::size_t j = 0; j < m; ++j) {
      sims[j] = table.rows[i][j].value;
      out.signature.push_back(static_cast<std::int64_t>(table.rows[i][j].arg));
    }
    const auto logits = logits_from_sims(model, sims);
    const auto probs = softmax(logits);
    const auto y = static_cast<std::size_t>(ex.label);
    PROTEX_THROW_IF(y >= cw.size(), ErrorCode::DimMismatch, "label without class weight");
    const double w = cw[y];
    const bool floored = probs[y] < kProbFloor;
    out.signature.push_back(floored ? 1 : 0);
    out.value += w * -std::log(std::max(probs[y], kProbFloor)) * inv_n;
    if (floored || w == 0.0) continue;
    std::vector<double> g(probs.size());
    for (std::size_t c = 0; c < g.size(); ++c) g[c] = w * inv_n * (probs[c] - (c == y ? 1.0 : 0.0));
    for (std::size_t j = 0; j < m; ++j) {
      const auto c = static_cast<std::size_t>(model.protos.class_of[j]);
      out.grad_head(c, j) += g[c] * sims[j];
      const double ds = g[c] * model.head(c, j);
      accumulate_similarity_grad(ex.patches.row(table.rows[i][j].arg), model.protos.vecs.row(j), model.sim, ds,
                                 out.grad_protos.row(j));
    }
  }
  zero_frozen(model, out.grad_protos);
  return out;
}

ClstSep clst_sep_from_table(BatchView batch, const SimTable& table, const Model& model, bool use_min) {
  ClstSep out{zero_term(model), zero_term(model)};
  const std::size_t m = model.num_prototypes();
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& ex = *batch[i];
    std::size_t own = m, other = m;
    for (std::size_t j = 0; j < m; ++j) {
      const bool is_own = model.protos.class_of[j] == ex.label;
      std::size_t& slot = is_own ? own : other;
      const double v = table.rows[i][j].value;
      if (slot == m || (use_min ? v < table.rows[i][slot].value : v > table.rows[i][slot].value)) slot = j;
    }
    PROTEX_THROW_IF(own == m, ErrorCode::NoOwnClassPrototype,
                    "no prototype for class " + std::to_string(ex.label));
    PROTEX_THROW_IF(other == m, ErrorCode::NoOtherClassPrototype,
                    "no prototype outside class " + std::to_string(ex.label));
    const auto& ro = table.rows[i][own];
    const auto& rs = table.rows[i][other];
    out.clst.value -= ro.value * inv_n;
    out.sep.value += rs.value * inv_n;
    out.clst.signature.insert(out.clst.signature.end(),
                              {static_cast<std::int64_t>(own), static_cast<std::int64_t>(ro.arg)});
    out.sep.signature.insert(out.sep.signature.end(),
                             {static_cast<std::int64_t>(other), static_cast<std::int64_t>(rs.arg)});
    accumulate_similarity_grad(ex.patches.row(ro.arg), model.protos.vecs.row(own), model.sim, -inv_n,
                               out.clst.grad_protos.row(own));
    accumulate_similarity_grad(ex.patches.row(rs.arg), model.protos.vecs.row(other), model.sim, inv_n,
                               out.sep.grad_protos.row(other));
  }
  zero_frozen(model, out.clst.grad_protos);
  zero_frozen(model, out.sep.grad_protos);
  return out;
}

TermGrad distr_from_table(BatchView all, const SimTable& table, const Model& model, bool use_min) {
  TermGrad out = zero_term(model);
  const std::size_t m = model.num_prototypes();
  PROTEX_THROW_IF(all.empty(), ErrorCode::EmptyDataset, "distribution loss over an empty set");
  const double inv_m = 1.0 / static_cast<double>(m);
  for (std::size_t j = 0; j < m; ++j) {
    std::size_t best_i = 0;
    for (std::size_t i = 1; i < all.size(); ++i) {
      const double v = table.rows[i][j].value;
      const double b = table.rows[best_i][j].value;
      if (use_min ? v < b : v > b) best_i = i;
    }
    const auto& r = table.rows[best_i][j];
    out.value -= r.value * inv_m;
    out.signature.insert(out.signature.end(), {static_cast<std::int64_t>(best_i), static_cast<std::int64_t>(r.arg)});
    accumulate_similarity_grad(all[best_i]->patches.row(r.arg), model.protos.vecs.row(j), model.sim, -inv_m,
                               out.grad_protos.row(j));
  }
  zero_frozen(model, out.grad_protos);
  return out;
}

TermGrad divers_term(const Model& model, bool use_min, bool& defined) {
  TermGrad out = zero_term(model);
  const std::size_t m = model.num_prototypes();
  defined = m >= 2;
  if (!defined) return out;
  const double inv_m = 1.0 / static_cast<double>(m);
  for (std::size_t a = 0; a < m; ++a) {
    std::size_t best = m;
    double best_v = 0.0;
    for (std::size_t b = 0; b < m; ++b) {
      if (b == a) continue;
      const double v = similarity(model.protos.vecs.row(a), model.protos.vecs.row(b), model.sim);
      if (best == m || (use_min ? v < best_v : v > best_v)) {
        best = b;
        best_v = v;
      }
    }
    out.value += best_v * inv_m;
    out.signature.push_back(static_cast<std::int64_t>(best));
    // sim is symmetric; each argument receives its own gradient
    accumulate_similarity_grad(model.protos.vecs.row(best), model.protos.vecs.row(a), model.sim, inv_m,
                               out.grad_protos.row(a));
    accumulate_similarity_grad(model.protos.vecs.row(a), model.protos.vecs.row(best), model.sim, inv_m,
                               out.grad_protos.row(best));
  }
  zero_frozen(model, out.grad_protos);
  return out;
}

TermGrad l1_term(const Model& model) {
  TermGrad out = zero_term(model);
  for (std::size_t j = 0; j < model.num_prototypes(); ++j) {
    const auto c = static_cast<std::size_t>(model.protos.class_of[j]);
    const double w = model.head(c, j);
    out.value += std::abs(w);
    out.grad_head(c, j) = w > 0 ? 1.0 : (w < 0 ? -1.0 : 0.0);
    out.signature.push_back(w > 0 ? 1 : (w < 0 ? -1 : 0));
  }
  return out;
}

void add_scaled(Mat& dst, const Mat& src, double scale) {
  auto d = dst.flat();
  auto s = src.flat();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += scale * s[i];
}

void append_sig(std::vector<std::int64_t>& dst, const std::vector<std::int64_t>& src) {
  dst.push_back(-1000);  // term separator
  dst.insert(dst.end(), src.begin(), src.end());
}

}  // namespace

TermGrad ce_loss(BatchView batch, const Model& model, std::span<const double> cw) {
  PROTEX_THROW_IF(batch.empty(), ErrorCode::EmptyInput, "empty batch");
  return ce_from_table(batch, build_table(batch, model, false), model, cw);
}

ClstSep clst_sep(BatchView batch, const Model& model, bool literal_min) {
  PROTEX_THROW_IF(batch.empty(), ErrorCode::EmptyInput, "empty batch");
  return clst_sep_from_table(batch, build_table(batch, model, literal_min), model, literal_min);
}

DistrDivers distr_divers(BatchView all, const Model& model, bool literal_min) {
  DistrDivers out;
  out.distr = distr_from_table(all, build_table(all, model, literal_min), model, literal_min);
  out.divers = divers_term(model, literal_min, out.divers_defined);
  return out;
}

TermGrad interact_loss(const Model& model, const InteractionTarget& target, double lambda6) {
  PROTEX_THROW_IF(!(target.certainty >= 0.0 && target.certainty <= 1.0), ErrorCode::CertaintyRange,
                  "certainty must lie in [0, 1]");
  PROTEX_THROW_IF(target.prototype >= model.num_prototypes(), ErrorCode::UnknownPrototype,
                  "prototype " + std::to_string(target.prototype) + " does not exist");
  PROTEX_THROW_IF(model.protos.frozen[target.prototype], ErrorCode::FrozenTarget,
                  "prototype " + std::to_string(target.prototype) + " is frozen");
  PROTEX_THROW_IF(target.vec.size() != model.dim, ErrorCode::DimMismatch, "feedback vector dim != model dim");
  TermGrad out = zero_term(model);
  if (target.certainty == 0.0) {
    out.signature.push_back(0);
    return out;
  }
  auto p = model.protos.vecs.row(target.prototype);
  const double gap = target.certainty - similarity(target.vec, p, model.sim);
  const bool active = gap > 0.0;
  out.signature.push_back(active ? 1 : 0);
  if (!active) return out;
  out.value = lambda6 * gap;
  accumulate_similarity_grad(target.vec, p, model.sim, -lambda6, out.grad_protos.row(target.prototype));
  return out;
}

LossBreakdown total_loss(BatchView batch, BatchView all, const Model& model, const LossWeights& weights,
                         std::span<const double> cw, const InteractionTarget* target) {
  PROTEX_THROW_IF(batch.empty(), ErrorCode::EmptyInput, "empty batch");
  LossBreakdown out;
  out.grad_protos = Mat(model.num_prototypes(), model.dim, 0.0);
  out.grad_head = Mat(static_cast<std::size_t>(model.classes), model.num_prototypes(), 0.0);

  const auto table = build_table(batch, model, false);
  const auto ce = ce_from_table(batch, table, model, cw);
  out.terms.ce = ce.value;
  add_scaled(out.grad_protos, ce.grad_protos, 1.0);
  add_scaled(out.grad_head, ce.grad_head, 1.0);
  append_sig(out.signature, ce.signature);

  if (weights.clst > 0.0 || weights.sep > 0.0) {
    const auto cs = weights.literal_min
                        ? clst_sep_from_table(batch, build_table(batch, model, true), model, true)
                        : clst_sep_from_table(batch, table, model, false);
    out.terms.clst = cs.clst.value;
    out.terms.sep = cs.sep.value;
    add_scaled(out.grad_protos, cs.clst.grad_protos, weights.clst);
    add_scaled(out.grad_protos, cs.sep.grad_protos, weights.sep);
    append_sig(out.signature, cs.clst.signature);
    append_sig(out.signature, cs.sep.signature);
  }
  if (weights.distr > 0.0) {
    const auto d = distr_from_table(all, build_table(all, model, weights.literal_min), model, weights.literal_min);
    out.terms.distr = d.value;
    add_scaled(out.grad_protos, d.grad_protos, weights.distr);
    append_sig(out.signature, d.signature);
  }
  if (weights.divers > 0.0) {
    const auto dv = divers_term(model, weights.literal_min, out.divers_defined);
    out.terms.divers = dv.value;
    add_scaled(out.grad_protos, dv.grad_protos, weights.divers);
    append_sig(out.signature, dv.signature);
  }
  if (weights.l1 > 0.0) {
    const auto l1 = l1_term(model);
    out.terms.l1 = l1.value;
    add_scaled(out.grad_head, l1.grad_head, weights.l1);
    append_sig(out.signature, l1.signature);
  }
  if (target != nullptr) {
    // interact_loss applies lambda6 itself; keep the breakdown unweighted
    const auto it = interact_loss(model, *target, 1.0);
    out.terms.interact = it.value;
    add_scaled(out.grad_protos, it.grad_protos, weights.interact);
    append_sig(out.signature, it.signature);
  }

  out.terms.total = out.terms.ce + weights.clst * out.terms.clst + weights.sep * out.terms.sep +
                    weights.distr * out.terms.distr + weights.divers * out.terms.divers +
                    weights.l1 * out.terms.l1 + weights.interact * out.terms.interact;
  zero_frozen(model, out.grad_protos);
  return out;
}

std::vector<double> pack_params(const Model& model) {
  std::vector<double> out;
  for (std::size_t j = 0; j < model.num_prototypes(); ++j)
    if (!model.protos.frozen[j]) {
      auto r = model.protos.vecs.row(j);
      out.insert(out.end(), r.begin(), r.end());
    }
  for (std::size_t j = 0; j < model.num_prototypes(); ++j)
    out.push_back(model.head(static_cast<std::size_t>(model.protos.class_of[j]), j));
  return out;
}

void unpack_params(Model& model, std::span<const double> params) {
  std::size_t k = 0;
  for (std::size_t j = 0; j < model.num_prototypes(); ++j)
    if (!model.protos.frozen[j])
      for (auto& v : model.protos.vecs.row(j)) v = params[k++];
  for (std::size_t j = 0; j < model.num_prototypes(); ++j)
    model.head(static_cast<std::size_t>(model.protos.class_of[j]), j) = params[k++];
  PROTEX_THROW_IF(k != params.size(), ErrorCode::CountMismatch, "parameter vector length mismatch");
}

std::vector<double> pack_grads(const Model& model, const Mat& grad_protos, const Mat& grad_head) {
  std::vector<double> out;
  for (std::size_t j = 0; j < model.num_prototypes(); ++j)
    if (!model.protos.frozen[j]) {
      auto r = grad_protos.row(j);
      out.insert(out.end(), r.begin(), r.end());
    }
  for (std::size_t j = 0; j < model.num_prototypes(); ++j)
    out.push_back(grad_head(static_cast<std::size_t>(model.protos.class_of[j]), j));
  return out;
}

FdReport fd_check(const FdFunction& f, std::span<const double> params, std::span<const double> analytic, double h,
                  double tol, double denom_floor) {
  PROTEX_THROW_IF(!(h > 0.0), ErrorCode::ConfigInvalid, "finite-difference step must be positive");
  PROTEX_THROW_IF(params.size() != analytic.size(), ErrorCode::CountMismatch, "gradient length != parameter length");
  FdReport rep;
  rep.tolerance = tol;
  std::vector<double> theta(params.begin(), params.end());
  const auto base = f(theta);
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double orig = theta[i];
    theta[i] = orig + h;
    const auto plus = f(theta);
    theta[i] = orig - h;
    const auto minus = f(theta);
    theta[i] = orig;
    if (plus.signature != base.signature || minus.signature != base.signature) {
      ++rep.excluded_ties;
      continue;
    }
    const double fd = (plus.value - minus.value) / (2.0 * h);
    const double an = analytic[i];
    const double denom = std::max({std::abs(fd), std::abs(an), denom_floor});
    const double rel = std::abs(fd - an) / denom;
    ++rep.checked;
    if (rel > rep.max_rel_error) {
      rep.max_rel_error = rel;
      rep.worst_index = i;
    }
  }
  rep.passed = rep.max_rel_error < tol;
  return rep;
}

}  // namespace protex
