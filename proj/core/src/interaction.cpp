#include "protex/interaction.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "protex/error.hpp"
#include "protex/random.hpp"

namespace protex {

std::string_view to_string(InteractionOp op) noexcept {
  switch (op) {
    case InteractionOp::remove: return "remove";
    case InteractionOp::add: return "add";
    case InteractionOp::replace: return "replace";
    case InteractionOp::reinit: return "reinit";
    case InteractionOp::finetune: return "finetune";
    case InteractionOp::prune: return "prune";
    case InteractionOp::soft_replace: return "soft_replace";
  }
  return "remove";
}

InteractionOp parse_interaction_op(std::string_view s) {
  for (auto op : {InteractionOp::remove, InteractionOp::add, InteractionOp::replace, InteractionOp::reinit,
                  InteractionOp::finetune, InteractionOp::prune, InteractionOp::soft_replace})
    if (s == to_string(op)) return op;
  if (s == "soft-replace") return InteractionOp::soft_replace;
  throw Error(ErrorCode::InvalidCommand, "unknown op '" + std::string(s) + "'");
}

void InteractionCommand::validate() const {
  const auto name = std::string(to_string(op));
  PROTEX_THROW_IF(op != InteractionOp::add && !target, ErrorCode::InvalidCommand, name + " requires a target");
  PROTEX_THROW_IF(op == InteractionOp::add && target, ErrorCode::InvalidCommand, "add takes no target");
  const int payloads = (example_id ? 1 : 0) + (text ? 1 : 0) + (vector ? 1 : 0);
  PROTEX_THROW_IF(payloads > 1, ErrorCode::InvalidCommand, "give at most one of example_id, text, vector");
  const bool needs_payload =
      op == InteractionOp::add || op == InteractionOp::replace || op == InteractionOp::soft_replace;
  PROTEX_THROW_IF(needs_payload && payloads == 0, ErrorCode::InvalidCommand, name + " requires a payload");
  PROTEX_THROW_IF(!needs_payload && payloads != 0, ErrorCode::InvalidCommand, name + " takes no payload");
  if (op == InteractionOp::soft_replace)
    PROTEX_THROW_IF(!certainty, ErrorCode::InvalidCommand, "soft_replace requires certainty");
  else
    PROTEX_THROW_IF(certainty.has_value(), ErrorCode::InvalidCommand, "certainty applies to soft_replace only");
  if (certainty)
    PROTEX_THROW_IF(!(*certainty >= 0.0 && *certainty <= 1.0), ErrorCode::CertaintyRange,
                    "certainty must lie in [0, 1]");
  PROTEX_THROW_IF(!(prune_threshold >= -1.0 && prune_threshold <= 1.0), ErrorCode::InvalidCommand,
                  "prune_threshold must lie in [-1, 1]");
}

InteractionCommand InteractionCommand::from_json(const nlohmann::json& j) {
  PROTEX_THROW_IF(!j.is_object(), ErrorCode::InvalidCommand, "command must be a JSON object");
  static const std::vector<std::string> known{"op",        "target",          "example_id", "text",
                                              "vector",    "certainty",       "prune_threshold", "class"};
  for (auto it = j.begin(); it != j.end(); ++it)
    PROTEX_THROW_IF(std::find(known.begin(), known.end(), it.key()) == known.end(), ErrorCode::InvalidCommand,
                    "unknown field '" + it.key() + "'");
  InteractionCommand c;
  try {
    c.op = parse_interaction_op(j.at("op").get<std::string>());
    if (j.contains("target") && !j["target"].is_null()) {
      const auto t = j["target"].get<long long>();
      PROTEX_THROW_IF(t < 0, ErrorCode::UnknownPrototype, "prototype " + std::to_string(t) + " does not exist");
      c.target = static_cast<std::size_t>(t);
    }
    if (j.contains("example_id") && !j["example_id"].is_null()) c.example_id = j["example_id"].get<std::string>();
    if (j.contains("text") && !j["text"].is_null()) c.text = j["text"].get<std::string>();
    if (j.contains("vector") && !j["vector"].is_null()) c.vector = j["vector"].get<std::vector<double>>();
    if (j.contains("certainty") && !j["certainty"].is_null()) c.certainty = j["certainty"].get<double>();
    if (j.contains("prune_threshold") && !j["prune_threshold"].is_null())
      c.prune_threshold = j["prune_threshold"].get<double>();
    if (j.contains("class") && !j["class"].is_null()) c.cls = j["class"].get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidCommand, std::string("malformed command: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::json InteractionCommand::to_json() const {
  nlohmann::json j{{"op", std::string(to_string(op))}};
  if (target) j["target"] = *target;
  if (example_id) j["example_id"] = *example_id;
  if (text) j["text"] = *text;
  if (vector) j["vector"] = *vector;
  if (certainty) j["certainty"] = *certainty;
  if (op == InteractionOp::prune) j["prune_threshold"] = prune_threshold;
  if (cls) j["class"] = *cls;
  return j;
}

nlohmann::json InteractionOutcome::to_json() const {
  nlohmann::json j{{"accepted", accepted},
                   {"op", std::string(to_string(op))},
                   {"acc_before", acc_before},
                   {"acc_after", acc_after},
                   {"digest_before", digest_before},
                   {"digest_after", digest_after},
                   {"retrain_epochs_used", retrain_epochs_used},
                   {"message", message}};
  j["prototype"] = prototype ? nlohmann::json(*prototype) : nlohmann::json(nullptr);
  return j;
}

void freeze(Model& model, std::span<const std::size_t> ids, bool flag) {
  for (std::size_t j : ids)
    PROTEX_THROW_IF(j >= model.num_prototypes(), ErrorCode::UnknownPrototype,
                    "prototype " + std::to_string(j) + " does not exist");
  for (std::size_t j : ids) model.protos.frozen[j] = flag ? 1 : 0;
}

std::vector<std::vector<std::string>> prune_candidates(std::span<const std::string> tokens) {
  constexpr std::size_t kMaxSentences = 2;
  constexpr std::size_t kMaxTokens = 15;
  std::size_t cut = tokens.size();
  std::size_t ends = 0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto& t = tokens[i];
    if (!t.empty() && (t.back() == '.' || t.back() == '!' || t.back() == '?') && ++ends == kMaxSentences) {
      cut = i + 1;
      break;
    }
  }
  std::vector<std::vector<std::string>> out;
  auto push = [&](std::size_t n) {
    if (n == 0 || n >= tokens.size()) return;
    if (!out.empty() && out.back().size() == n) return;
    out.emplace_back(tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(n));
  };
  push(cut);
  push(std::min(cut, kMaxTokens));
  return out;
}

namespace {

struct Payload {
  std::vector<double> vec;
  std::optional<PrototypeDisplay> display;
  std::optional<int> default_class;
};

std::vector<double> to_double(std::span<const float> v) { return {v.begin(), v.end()}; }

std::vector<double> example_vector(const EmbeddedExample& ex, Mode mode) {
  if (mode == Mode::sentence) return to_double(*ex.sentence_vec);
  return to_double(mean_rows(*ex.token_vecs));
}

Payload resolve_payload(const InteractionCommand& cmd, const Model& model, const Dataset& ds,
                        const EmbeddingProvider* provider) {
  Payload p;
  if (cmd.example_id) {
    const auto* ex = ds.find(*cmd.example_id);
    PROTEX_THROW_IF(ex == nullptr, ErrorCode::UnknownExample, "no example with id '" + *cmd.example_id + "'");
    p.vec = example_vector(*ex, model.mode);
    p.display = PrototypeDisplay{ex->id, ex->text};
    p.default_class = ex->label;
  } else if (cmd.text) {
    PROTEX_THROW_IF(provider == nullptr || !provider->supports_novel_text(), ErrorCode::ProviderCapability,
                    "embedding novel text needs a provider that supports it");
    const auto tokens = split_whitespace(*cmd.text);
    PROTEX_THROW_IF(tokens.empty(), ErrorCode::EmptyInput, "payload text has no tokens");
    const auto emb = provider->embed(tokens);
    p.vec = model.mode == Mode::sentence ? to_double(emb.sentence) : to_double(mean_rows(emb.tokens));
    p.display = PrototypeDisplay{"", join_tokens(tokens)};
  } else if (cmd.vector) {
    p.vec = *cmd.vector;
    for (auto& v : p.vec) v = static_cast<double>(static_cast<float>(v));
  }
  PROTEX_THROW_IF(p.vec.size() != model.dim, ErrorCode::DimMismatch,
                  "payload has dim " + std::to_string(p.vec.size()) + ", model dim " + std::to_string(model.dim));
  for (double v : p.vec) PROTEX_THROW_IF(!std::isfinite(v), ErrorCode::NonFinite, "payload vector is not finite");
  return p;
}

void check_target(const Model& model, std::size_t j) {
  PROTEX_THROW_IF(j >= model.num_prototypes(), ErrorCode::UnknownPrototype,
                  "prototype " + std::to_string(j) + " does not exist");
  PROTEX_THROW_IF(model.protos.frozen[j], ErrorCode::FrozenTarget, "prototype " + std::to_string(j) + " is frozen");
}

double head_weight_for(const Model& model, int cls) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t j = 0; j < model.num_prototypes(); ++j)
    if (model.protos.class_of[j] == cls) {
      sum += model.head(static_cast<std::size_t>(cls), j);
      ++n;
    }
  return n ? sum / static_cast<double>(n) : 1.0;
}

std::size_t class_count(const Model& model, int cls) {
  return static_cast<std::size_t>(std::count(model.protos.class_of.begin(), model.protos.class_of.end(), cls));
}

std::size_t add_prototype(Model& model, const Payload& p, int cls) {
  PROTEX_THROW_IF(cls < 0 || cls >= model.classes, ErrorCode::InvalidCommand,
                  "class " + std::to_string(cls) + " out of range");
  return model.append_prototype(p.vec, cls, head_weight_for(model, cls), p.display);
}

void remove_checked(Model& model, std::size_t j) {
  const int cls = model.protos.class_of[j];
  PROTEX_THROW_IF(class_count(model, cls) == 1, ErrorCode::InvalidCommand,
                  "removing prototype " + std::to_string(j) + " would leave class " + std::to_string(cls) +
                      " without prototypes");
  model.remove_prototype(j);
}

/// Sentence mode: label a relearned prototype with its nearest same-class
/// training example (vector untouched). Word mode: nearest training patch.
void relabel(Model& model, std::size_t j, const Dataset& ds) {
  const auto train_idx = ds.indices(Split::train);
  if (train_idx.empty()) return;
  if (model.mode == Mode::word) {
    Model tmp = model;
    nn_display(tmp, ds, train_idx);
    model.protos.display[j] = tmp.protos.display[j];
    return;
  }
  const auto p = model.protos.vecs.row(j);
  double best = -std::numeric_limits<double>::infinity();
  const EmbeddedExample* arg = nullptr;
  for (std::size_t idx : train_idx) {
    const auto& ex = ds.examples[idx];
    if (ex.label != model.protos.class_of[j]) continue;
    const auto v = to_double(*ex.sentence_vec);
    const double s = similarity(v, p, model.sim);
    if (s > best) {
      best = s;
      arg = &ex;
    }
  }
  if (arg) model.protos.display[j] = PrototypeDisplay{arg->id, arg->text};
}

std::vector<double> fresh_vector(std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(dim);
  double n2 = 0.0;
  for (auto& x : v) {
    x = rng.normal();
    n2 += x * x;
  }
  const double inv = 1.0 / std::sqrt(n2);
  for (auto& x : v) x = static_cast<double>(static_cast<float>(x * inv));
  return v;
}

std::size_t relearn(Model& model, std::size_t j, const PatchedSplit& train_split, const TrainConfig& cfg,
                    const InteractionTarget* target) {
  OptimizeScope scope;
  scope.head = false;
  scope.prototype_mask.assign(model.num_prototypes(), 0);
  scope.prototype_mask[j] = 1;
  RunOptions opts;
  opts.epochs = cfg.relearn_epochs;
  opts.lr = [&cfg](std::size_t) { return cfg.lr_base; };
  opts.target = target;
  opts.shuffle_seed = mix64(cfg.seed ^ 0x72656c6561726eULL);
  if (target) {
    const InteractionTarget t = *target;
    opts.stop = [t](const Model& m) { return interact_loss(m, t, 1.0).value == 0.0; };
  }
  return optimize(model, train_split, cfg, scope, opts).epochs_run;
}

std::size_t retrain_head(Model& model, const PatchedSplit& train_split, const TrainConfig& cfg) {
  OptimizeScope scope;
  scope.prototypes = false;
  RunOptions opts;
  opts.epochs = cfg.head_finetune_epochs;
  const double lr = cfg.retrain_lr();
  opts.lr = [lr](std::size_t) { return lr; };
  opts.shuffle_seed = mix64(cfg.seed ^ 0x68656164ULL);
  return optimize(model, train_split, cfg, scope, opts).epochs_run;
}

}  // namespace

InteractionOutcome apply(Model& model, const InteractionCommand& cmd, const Dataset& ds, const TrainConfig& cfg,
                         const EmbeddingProvider* provider) {
  cmd.validate();
  cfg.validate();
  model.check_consistent();
  PROTEX_THROW_IF(model.mode != ds.mode || model.dim != ds.dim || model.classes != ds.classes,
                  ErrorCode::DimMismatch, "model does not match dataset (mode, dim or classes)");
  if (cmd.target) check_target(model, *cmd.target);

  const auto data = prepare_dataset(ds, model.mode, model.selector);
  const PatchedSplit& val = data.val.examples.empty() ? data.train : data.val;

  InteractionOutcome out;
  out.op = cmd.op;
  out.acc_before = evaluate(model, val);
  out.digest_before = model.digest();

  Model work = model;
  std::size_t relearn_epochs = 0;
  std::string note;

  auto replace = [&](std::size_t j) {
    const auto payload = resolve_payload(cmd, work, ds, provider);
    const int cls = cmd.cls.value_or(work.protos.class_of[j]);
    // removing first may empty the class only when the new prototype refills it
    if (cls != work.protos.class_of[j]) remove_checked(work, j);
    else work.remove_prototype(j);
    return add_prototype(work, payload, cls);
  };

  switch (cmd.op) {
    case InteractionOp::remove: {
      remove_checked(work, *cmd.target);
      break;
    }
    case InteractionOp::add: {
      const auto payload = resolve_payload(cmd, work, ds, provider);
      PROTEX_THROW_IF(!cmd.cls && !payload.default_class, ErrorCode::InvalidCommand,
                      "add with text or vector payload requires a class");
      out.prototype = add_prototype(work, payload, cmd.cls.value_or(payload.default_class.value_or(0)));
      break;
    }
    case InteractionOp::replace: {
      out.prototype = replace(*cmd.target);
      break;
    }
    case InteractionOp::reinit:
    case InteractionOp::finetune: {
      const std::size_t j = *cmd.target;
      if (cmd.op == InteractionOp::reinit) {
        const auto v = fresh_vector(work.dim, mix64(cfg.seed ^ mix64(0x7265696e6974ULL + j)));
        std::copy(v.begin(), v.end(), work.protos.vecs.row(j).begin());
      }
      relearn_epochs = relearn(work, j, data.train, cfg, nullptr);
      relabel(work, j, ds);
      out.prototype = j;
      break;
    }
    case InteractionOp::prune: {
      const std::size_t j = *cmd.target;
      PROTEX_THROW_IF(work.mode != Mode::sentence, ErrorCode::InvalidCommand, "prune applies to sentence mode");
      PROTEX_THROW_IF(provider == nullptr || !provider->supports_novel_text(), ErrorCode::ProviderCapability,
                      "pruning re-embeds text and needs a provider that supports novel text");
      PROTEX_THROW_IF(!work.protos.display[j], ErrorCode::InvalidCommand,
                      "prototype " + std::to_string(j) + " has no display text to prune");
      const auto tokens = split_whitespace(work.protos.display[j]->text);
      const auto old = work.protos.vecs.row(j);
      out.prototype = j;
      for (const auto& cand : prune_candidates(tokens)) {
        const auto emb = provider->embed(cand);
        const auto v = to_double(emb.sentence);
        const double cos = similarity(v, old, SimKind::cosine);
        if (cos >= cmd.prune_threshold) {
          std::copy(v.begin(), v.end(), work.protos.vecs.row(j).begin());
          work.protos.display[j]->text = join_tokens(cand);
          note = "pruned to " + std::to_string(cand.size()) + " tokens (cosine " + std::to_string(cos) + ")";
          break;
        }
        note = "cut to " + std::to_string(cand.size()) + " tokens has cosine " + std::to_string(cos) +
               " below threshold";
      }
      if (note.empty() || note.rfind("pruned", 0) != 0) {
        out.accepted = false;
        out.acc_after = out.acc_before;
        out.digest_after = out.digest_before;
        out.message = note.empty() ? "nothing to prune" : "rejected: " + note;
        return out;
      }
      break;
    }
    case InteractionOp::soft_replace: {
      const std::size_t j = *cmd.target;
      if (*cmd.certainty == 1.0) {
        out.prototype = replace(j);
        note = "certainty 1: hard replace";
        break;
      }
      const auto payload = resolve_payload(cmd, work, ds, provider);
      const InteractionTarget target{j, payload.vec, *cmd.certainty};
      relearn_epochs = relearn(work, j, data.train, cfg, &target);
      if (relearn_epochs > 0) relabel(work, j, ds);
      const double s = similarity(payload.vec, work.protos.vecs.row(j), work.sim);
      note = "similarity to feedback " + std::to_string(s);
      out.prototype = j;
      break;
    }
  }

  const std::size_t head_epochs = retrain_head(work, data.train, cfg);
  work.check_consistent();

  std::vector<std::size_t> counts;
  for (int c = 0; c < work.classes; ++c) counts.push_back(class_count(work, c));
  const bool balanced = std::all_of(counts.begin(), counts.end(), [&](std::size_t n) { return n == counts[0]; });
  if (!balanced) note += std::string(note.empty() ? "" : "; ") + "class assignment is now unbalanced";

  model = std::move(work);
  out.accepted = true;
  out.retrain_epochs_used = relearn_epochs + head_epochs;
  out.acc_after = evaluate(model, val);
  out.digest_after = model.digest();
  out.message = note.empty() ? "ok" : note;
  return out;
}

}  // namespace protex
