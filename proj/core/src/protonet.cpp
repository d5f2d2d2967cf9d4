#include "protex/protonet.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "protex/error.hpp"
#include "protex/random.hpp"

namespace protex {

Mat Model::class_mask() const {
  Mat m(static_cast<std::size_t>(classes), num_prototypes(), 0.0);
  for (std::size_t j = 0; j < num_prototypes(); ++j) m(static_cast<std::size_t>(protos.class_of[j]), j) = 1.0;
  return m;
}

void Model::enforce_head_constraints() {
  for (std::size_t c = 0; c < head.rows(); ++c)
    for (std::size_t j = 0; j < head.cols(); ++j) {
      double& w = head(c, j);
      if (!mask(static_cast<int>(c), j) || !(w > 0.0)) w = 0.0;
    }
}

void Model::quantize() {
  for (auto& v : protos.vecs.flat()) v = static_cast<double>(static_cast<float>(v));
  for (auto& v : head.flat()) v = static_cast<double>(static_cast<float>(v));
}

std::string Model::digest() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const void* p, std::size_t n) {
    h = fnv1a64(std::string_view(static_cast<const char*>(p), n), h);
  };
  for (double v : protos.vecs.flat()) feed(&v, sizeof v);
  for (int c : protos.class_of) feed(&c, sizeof c);
  for (auto f : protos.frozen) feed(&f, sizeof f);
  for (double v : head.flat()) feed(&v, sizeof v);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void Model::remove_prototype(std::size_t j) {
  PROTEX_THROW_IF(j >= num_prototypes(), ErrorCode::UnknownPrototype,
                  "prototype " + std::to_string(j) + " does not exist");
  protos.vecs.erase_row(j);
  protos.class_of.erase(protos.class_of.begin() + static_cast<std::ptrdiff_t>(j));
  protos.frozen.erase(protos.frozen.begin() + static_cast<std::ptrdiff_t>(j));
  protos.display.erase(protos.display.begin() + static_cast<std::ptrdiff_t>(j));
  head.erase_col(j);
}

std::size_t Model::append_prototype(std::span<const double> vec, int cls, double head_weight,
                                    std::optional<PrototypeDisplay> display) {
  PROTEX_THROW_IF(vec.size() != dim, ErrorCode::DimMismatch,
                  "new prototype has dim " + std::to_string(vec.size()) + ", model dim " + std::to_string(dim));
  PROTEX_THROW_IF(cls < 0 || cls >= classes, ErrorCode::InvalidCommand,
                  "class " + std::to_string(cls) + " out of range");
  if (protos.vecs.rows() == 0) protos.vecs = Mat(0, dim);
  protos.vecs.append_row(vec);
  protos.class_of.push_back(cls);
  protos.frozen.push_back(0);
  protos.display.push_back(std::move(display));
  std::vector<double> col(static_cast<std::size_t>(classes), 0.0);
  col[static_cast<std::size_t>(cls)] = head_weight;
  if (head.rows() == 0) head = Mat(static_cast<std::size_t>(classes), 0);
  head.append_col(col);
  enforce_head_constraints();
  return num_prototypes() - 1;
}

void Model::check_consistent() const {
  const std::size_t m = num_prototypes();
  PROTEX_THROW_IF(protos.vecs.rows() != m || protos.frozen.size() != m || protos.display.size() != m,
                  ErrorCode::CountMismatch, "prototype set fields disagree on m");
  PROTEX_THROW_IF(m > 0 && protos.vecs.cols() != dim, ErrorCode::DimMismatch, "prototype dim != model dim");
  PROTEX_THROW_IF(head.rows() != static_cast<std::size_t>(classes) || head.cols() != m, ErrorCode::DimMismatch,
                  "head shape does not match C x m");
  for (int c : protos.class_of)
    PROTEX_THROW_IF(c < 0 || c >= classes, ErrorCode::CountMismatch, "prototype class out of range");
}

PatchedExample prepare_example(const EmbeddedExample& ex, Mode mode, const SelectorConfig& selector) {
  PatchedExample out;
  out.label = ex.label;
  if (mode == Mode::sentence) {
    PROTEX_THROW_IF(!ex.sentence_vec, ErrorCode::ModeMismatch, "example " + ex.id + " has no sentence vector");
    out.patches = Mat(0, ex.sentence_vec->size());
    out.patches.append_row(std::span<const float>(*ex.sentence_vec));
    return out;
  }
  PROTEX_THROW_IF(!ex.token_vecs, ErrorCode::ModeMismatch, "example " + ex.id + " has no token vectors");
  auto patches = select_patches(*ex.token_vecs, selector);
  out.patches = Mat(0, ex.token_vecs->cols());
  for (auto& p : patches) {
    out.patches.append_row(std::span<const double>(p.vec));
    out.token_indices.push_back(std::move(p.token_indices));
  }
  return out;
}

std::vector<int> PatchedSplit::labels() const {
  std::vector<int> out;
  out.reserve(examples.size());
  for (const auto& e : examples) out.push_back(e.label);
  return out;
}

PatchedData prepare_dataset(const Dataset& ds, Mode mode, const SelectorConfig& selector) {
  PatchedData out;
  for (std::size_t i = 0; i < ds.examples.size(); ++i) {
    const auto& ex = ds.examples[i];
    PatchedSplit& dst = ex.split == Split::train ? out.train : (ex.split == Split::val ? out.val : out.test);
    dst.examples.push_back(prepare_example(ex, mode, selector));
    dst.source.push_back(i);
  }
  return out;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.size());
  if (logits.empty()) return p;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    z += p[i];
  }
  for (auto& v : p) v /= z;
  return p;
}

void prototype_similarities(const PatchedExample& ex, const Model& model, std::span<double> sims,
                            std::span<std::size_t> best_patch) {
  PROTEX_THROW_IF(ex.patches.rows() == 0, ErrorCode::TooShort, "example has no patches");
  PROTEX_THROW_IF(ex.patches.cols() != model.dim, ErrorCode::DimMismatch,
                  "example dim " + std::to_string(ex.patches.cols()) + " vs model dim " + std::to_string(model.dim));
  for (std::size_t j = 0; j < model.num_prototypes(); ++j) {
    auto p = model.protos.vecs.row(j);
    double best = -std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (std::size_t z = 0; z < ex.patches.rows(); ++z) {
      const double s = similarity(ex.patches.row(z), p, model.sim);
      if (s > best) {
        best = s;
        arg = z;
      }
    }
    sims[j] = best;
    best_patch[j] = arg;
  }
}

std::vector<double> logits_from_sims(const Model& model, std::span<const double> sims) {
  std::vector<double> logits(static_cast<std::size_t>(model.classes), 0.0);
  for (std::size_t j = 0; j < model.num_prototypes(); ++j) {
    const auto c = static_cast<std::size_t>(model.protos.class_of[j]);
    logits[c] += model.head(c, j) * sims[j];
  }
  return logits;
}

ForwardResult forward(const PatchedExample& ex, const Model& model) {
  ForwardResult r;
  const std::size_t m = model.num_prototypes();
  r.sims.resize(m);
  r.best_patch.resize(m);
  prototype_similarities(ex, model, r.sims, r.best_patch);
  r.logits = logits_from_sims(model, r.sims);
  r.probs = softmax(r.logits);
  r.predicted = static_cast<int>(std::max_element(r.probs.begin(), r.probs.end()) - r.probs.begin());
  return r;
}

ForwardResult forward(const EmbeddedExample& ex, const Model& model) {
  return forward(prepare_example(ex, model.mode, model.selector), model);
}

namespace {

ExplanationResult explain_impl(const PatchedExample& ex, const Model& model, std::size_t top_k) {
  const auto fr = forward(ex, model);
  ExplanationResult out;
  out.predicted_class = fr.predicted;
  out.probs = fr.probs;
  out.sims = fr.sims;
  const auto t = static_cast<std::size_t>(fr.predicted);
  for (std::size_t j = 0; j < model.num_prototypes(); ++j) {
    if (model.protos.class_of[j] != fr.predicted) continue;
    ExplanationItem item;
    item.prototype = j;
    item.similarity = fr.sims[j];
    item.head_weight = model.head(t, j);
    item.importance = item.similarity * item.head_weight;
    if (const auto& d = model.protos.display[j]) item.display = d->text;
    if (!ex.token_indices.empty()) item.patch_tokens = ex.token_indices[fr.best_patch[j]];
    out.items.push_back(std::move(item));
  }
  std::stable_sort(out.items.begin(), out.items.end(),
                   [](const ExplanationItem& a, const ExplanationItem& b) { return a.importance > b.importance; });
  if (out.items.size() > top_k) out.items.resize(top_k);
  return out;
}

}  // namespace

ExplanationResult explain(const PatchedExample& ex, const Model& model, std::size_t top_k) {
  return explain_impl(ex, model, top_k);
}

ExplanationResult explain(const EmbeddedExample& ex, const Model& model, std::size_t top_k) {
  return explain_impl(prepare_example(ex, model.mode, model.selector), model, top_k);
}

std::string format_importance(double similarity, double head_weight) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%.2f·%.2f = %.2f", similarity, head_weight, similarity * head_weight);
  return buf;
}

ProjectionReport project(Model& model, const Dataset& train_data, std::span<const std::size_t> candidates) {
  PROTEX_THROW_IF(model.mode != Mode::sentence, ErrorCode::ModeMismatch,
                  "projection applies to sentence mode; use nn_display for word mode");
  ProjectionReport report;
  for (std::size_t j = 0; j < model.num_prototypes(); ++j) {
    if (model.protos.frozen[j]) continue;
    const int cls = model.protos.class_of[j];
    std::vector<double> p(model.protos.vecs.row(j).begin(), model.protos.vecs.row(j).end());
    double best = -std::numeric_limits<double>::infinity();
    const EmbeddedExample* arg = nullptr;
    std::vector<double> e(model.dim);
    for (std::size_t idx : candidates) {
      const auto& ex = train_data.examples[idx];
      if (ex.label != cls) continue;
      std::copy(ex.sentence_vec->begin(), ex.sentence_vec->end(), e.begin());
      const double s = similarity(e, p, model.sim);
      if (s > best) {
        best = s;
        arg = &ex;
      }
    }
    PROTEX_THROW_IF(arg == nullptr, ErrorCode::EmptyClass,
                    "no training example of class " + std::to_string(cls) + " to project prototype " +
                        std::to_string(j));
    auto row = model.protos.vecs.row(j);
    std::copy(arg->sentence_vec->begin(), arg->sentence_vec->end(), row.begin());
    model.protos.display[j] = PrototypeDisplay{arg->id, arg->text};
    std::copy(arg->sentence_vec->begin(), arg->sentence_vec->end(), e.begin());
    report.entries.push_back({j, arg->id, best, similarity(e, model.protos.vecs.row(j), model.sim)});
  }
  return report;
}

std::vector<std::string> nn_display(Model& model, const Dataset& data, std::span<const std::size_t> candidates) {
  PROTEX_THROW_IF(model.mode != Mode::word, ErrorCode::ModeMismatch, "nn_display applies to word mode");
  PROTEX_THROW_IF(candidates.empty(), ErrorCode::EmptyDataset, "no candidate examples for nn_display");
  std::vector<PatchedExample> patched;
  patched.reserve(candidates.size());
  for (std::size_t idx : candidates) patched.push_back(prepare_example(data.examples[idx], model.mode, model.selector));

  std::vector<std::string> texts;
  for (std::size_t j = 0; j < model.num_prototypes(); ++j) {
    auto p = model.protos.vecs.row(j);
    double best = -std::numeric_limits<double>::infinity();
    std::size_t best_ex = 0, best_z = 0;
    for (std::size_t i = 0; i < patched.size(); ++i)
      for (std::size_t z = 0; z < patched[i].patches.rows(); ++z) {
        const double s = similarity(patched[i].patches.row(z), p, model.sim);
        if (s > best) {
          best = s;
          best_ex = i;
          best_z = z;
        }
      }
    const auto& ex = data.examples[candidates[best_ex]];
    std::vector<std::string> toks;
    for (std::size_t t : patched[best_ex].token_indices[best_z]) toks.push_back(ex.tokens[t]);
    std::string text;
    for (std::size_t i = 0; i < toks.size(); ++i) text += (i ? " " : "") + toks[i];
    model.protos.display[j] = PrototypeDisplay{ex.id, text};
    texts.push_back(std::move(text));
  }
  return texts;
}

}  // namespace protex
