#include "protex/faithfulness.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "binary_io.hpp"
#include "protex/error.hpp"
#include "protex/trainer.hpp"

namespace protex {

void RationaleSet::validate(const Dataset& ds) const {
  bool any = false;
  for (const auto& [id, mask] : masks) {
    const auto* ex = ds.find(id);
    PROTEX_THROW_IF(ex == nullptr, ErrorCode::UnknownExample, "rationale for unknown example '" + id + "'");
    PROTEX_THROW_IF(mask.size() != ex->tokens.size(), ErrorCode::MaskLengthMismatch,
                    "rationale for '" + id + "' has " + std::to_string(mask.size()) + " entries, example has " +
                        std::to_string(ex->tokens.size()) + " tokens");
    any = any || std::any_of(mask.begin(), mask.end(), [](std::uint8_t b) { return b != 0; });
  }
  PROTEX_THROW_IF(!any, ErrorCode::EmptyInput, "no example has a nonempty rationale");
}

RationaleSet parse_rationales(std::string_view text, const std::string& source) {
  RationaleSet rs;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    const auto line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    const std::string where = source + ":" + std::to_string(line_no);
    try {
      const auto j = nlohmann::json::parse(line);
      auto id = j.at("id").get<std::string>();
      std::vector<std::uint8_t> mask;
      for (const auto& b : j.at("mask")) {
        const int v = b.is_boolean() ? (b.get<bool>() ? 1 : 0) : b.get<int>();
        if (v != 0 && v != 1) throw Error(ErrorCode::ParseError, where + ": mask entries must be 0 or 1");
        mask.push_back(static_cast<std::uint8_t>(v));
      }
      if (!rs.masks.emplace(id, std::move(mask)).second)
        throw Error(ErrorCode::ParseError, where + ": duplicate id '" + id + "'");
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::ParseError, where + ": " + e.what());
    }
  }
  return rs;
}

RationaleSet load_rationales(const std::filesystem::path& path) {
  return parse_rationales(detail::read_file(path), path.string());
}

std::string format_rationales(const RationaleSet& rs) {
  std::string out;
  for (const auto& [id, mask] : rs.masks) {
    nlohmann::json j{{"id", id}, {"mask", nlohmann::json::array()}};
    for (auto b : mask) j["mask"].push_back(static_cast<int>(b));
    out += j.dump() + "\n";
  }
  return out;
}

void save_rationales(const RationaleSet& rs, const std::filesystem::path& path) {
  detail::write_file(path, format_rationales(rs));
}

CompSuffResult comp_suff(const Model& model, const Dataset& ds, const RationaleSet& rationales,
                         const EmbeddingProvider& provider) {
  PROTEX_THROW_IF(!provider.supports_novel_text(), ErrorCode::ProviderCapability,
                  "comprehensiveness/sufficiency re-embed perturbed inputs; provider cannot embed novel text");
  CompSuffResult res;
  double comp_sum = 0.0, suff_sum = 0.0;
  for (const auto& ex : ds.examples) {
    const auto it = rationales.masks.find(ex.id);
    if (it == rationales.masks.end()) continue;
    PROTEX_THROW_IF(it->second.size() != ex.tokens.size(), ErrorCode::MaskLengthMismatch,
                    "rationale for '" + ex.id + "' does not match its token count");
    const auto full = forward(ex, model);
    CompSuffDetail d;
    d.id = ex.id;
    d.predicted = full.predicted;
    d.p_full = full.probs[static_cast<std::size_t>(full.predicted)];

    auto prob_of = [&](Keep keep) -> std::optional<double> {
      try {
        const auto pert = perturb(ex, it->second, keep, provider);
        return forward(pert, model).probs[static_cast<std::size_t>(full.predicted)];
      } catch (const Error& e) {
        if (e.code() == ErrorCode::AllTokensRemoved || e.code() == ErrorCode::TooShort) return std::nullopt;
        throw;
      }
    };
    d.p_without = prob_of(Keep::rationale_removed);
    d.p_only = prob_of(Keep::rationale_only);
    if (d.p_without) {
      comp_sum += d.p_full - *d.p_without;
      ++res.comp_evaluated;
    } else {
      ++res.comp_skipped;
    }
    if (d.p_only) {
      suff_sum += d.p_full - *d.p_only;
      ++res.suff_evaluated;
    } else {
      ++res.suff_skipped;
    }
    res.details.push_back(std::move(d));
  }
  if (res.comp_evaluated) res.comprehensiveness = comp_sum / static_cast<double>(res.comp_evaluated);
  if (res.suff_evaluated) res.sufficiency = suff_sum / static_cast<double>(res.suff_evaluated);
  return res;
}

std::vector<double> masked_logits(const Model& model, std::span<const double> sims, std::size_t j) {
  std::vector<double> logits(static_cast<std::size_t>(model.classes), 0.0);
  for (std::size_t c = 0; c < logits.size(); ++c)
    for (std::size_t k = 0; k < sims.size(); ++k)
      if (k != j) logits[c] += model.head(c, k) * sims[k];
  return logits;
}

namespace {

int argmax(std::span<const double> v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

std::size_t top_prototype(const Model& model, const ForwardResult& fr) {
  const auto t = static_cast<std::size_t>(fr.predicted);
  std::size_t best = 0;
  double best_imp = -std::numeric_limits<double>::infinity();
  bool found = false;
  for (std::size_t j = 0; j < model.num_prototypes(); ++j) {
    if (!model.mask(fr.predicted, j)) continue;
    const double imp = fr.sims[j] * model.head(t, j);
    if (!found || imp > best_imp) {
      best = j;
      best_imp = imp;
      found = true;
    }
  }
  return best;
}

}  // namespace

RemovalResult prototype_removal(const Model& model, const PatchedSplit& test, bool global) {
  PROTEX_THROW_IF(model.num_prototypes() < 2, ErrorCode::InvalidState, "prototype removal needs m >= 2");
  PROTEX_THROW_IF(test.examples.empty(), ErrorCode::EmptyDataset, "test split is empty");
  RemovalResult res;
  std::vector<ForwardResult> fwd;
  fwd.reserve(test.examples.size());
  for (const auto& ex : test.examples) {
    fwd.push_back(forward(ex, model));
    res.preds_before.push_back(fwd.back().predicted);
    res.removed.push_back(top_prototype(model, fwd.back()));
  }
  if (global) {
    std::vector<std::size_t> freq(model.num_prototypes(), 0);
    for (std::size_t j : res.removed) ++freq[j];
    const auto g = static_cast<std::size_t>(std::max_element(freq.begin(), freq.end()) - freq.begin());
    std::fill(res.removed.begin(), res.removed.end(), g);
  }
  for (std::size_t i = 0; i < fwd.size(); ++i)
    res.preds_after.push_back(argmax(masked_logits(model, fwd[i].sims, res.removed[i])));
  const auto labels = test.labels();
  res.acc_before = balanced_accuracy(res.preds_before, labels, model.classes);
  res.acc_after = balanced_accuracy(res.preds_after, labels, model.classes);
  return res;
}

nlohmann::json FaithfulnessReport::to_json(bool include_details) const {
  nlohmann::json j;
  j["prototype_removal"] = {{"acc_before", removal.acc_before},
                            {"acc_after", removal.acc_after},
                            {"mode", global ? "global" : "per_example"}};
  if (comp_suff) {
    nlohmann::json cs{{"comprehensiveness", comp_suff->comprehensiveness},
                      {"sufficiency", comp_suff->sufficiency},
                      {"comp_evaluated", comp_suff->comp_evaluated},
                      {"comp_skipped", comp_suff->comp_skipped},
                      {"suff_evaluated", comp_suff->suff_evaluated},
                      {"suff_skipped", comp_suff->suff_skipped}};
    if (include_details) {
      nlohmann::json det = nlohmann::json::array();
      for (const auto& d : comp_suff->details) {
        nlohmann::json e{{"id", d.id}, {"predicted", d.predicted}, {"p_full", d.p_full}};
        e["p_without"] = d.p_without ? nlohmann::json(*d.p_without) : nlohmann::json(nullptr);
        e["p_only"] = d.p_only ? nlohmann::json(*d.p_only) : nlohmann::json(nullptr);
        det.push_back(std::move(e));
      }
      cs["details"] = std::move(det);
    }
    j["comp_suff"] = std::move(cs);
  }
  return j;
}

FaithfulnessReport evaluate_faithfulness(const Model& model, const Dataset& ds, const RationaleSet* rationales,
                                         const EmbeddingProvider* provider, bool global) {
  FaithfulnessReport rep;
  rep.global = global;
  const auto data = prepare_dataset(ds, model.mode, model.selector);
  rep.removal = prototype_removal(model, data.test, global);
  if (rationales) {
    PROTEX_THROW_IF(provider == nullptr, ErrorCode::ProviderCapability,
                    "comprehensiveness/sufficiency need an embedding provider");
    rationales->validate(ds);
    rep.comp_suff = comp_suff(model, ds, *rationales, *provider);
  }
  return rep;
}

}  // namespace protex
