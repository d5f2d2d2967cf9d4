#include "protex/gateway/session.hpp"

#include "protex/checkpoint.hpp"
#include "protex/error.hpp"

namespace protex::gateway {

std::string_view to_string(SessionPhase p) noexcept {
  switch (p) {
    case SessionPhase::idle: return "idle";
    case SessionPhase::training: return "training";
    case SessionPhase::paused: return "paused";
    case SessionPhase::projecting: return "projecting";
    case SessionPhase::retraining_head: return "retraining_head";
  }
  return "idle";
}

nlohmann::json prototypes_json(const Model& model) {
  nlohmann::json list = nlohmann::json::array();
  for (std::size_t j = 0; j < model.num_prototypes(); ++j) {
    const int c = model.protos.class_of[j];
    const auto& d = model.protos.display[j];
    list.push_back({{"id", j},
                    {"class", c},
                    {"head_weight", model.head(static_cast<std::size_t>(c), j)},
                    {"display", d ? nlohmann::json(d->text) : nlohmann::json(nullptr)},
                    {"source_id", d && !d->source_id.empty() ? nlohmann::json(d->source_id) : nlohmann::json(nullptr)},
                    {"frozen", model.protos.frozen[j] != 0}});
  }
  return {{"digest", model.digest()}, {"epoch", model.epoch}, {"prototypes", std::move(list)}};
}

nlohmann::json explanation_json(const ExplanationResult& ex) {
  nlohmann::json items = nlohmann::json::array();
  for (const auto& it : ex.items)
    items.push_back({{"prototype", it.prototype},
                     {"similarity", it.similarity},
                     {"head_weight", it.head_weight},
                     {"importance", it.importance},
                     {"rendered", format_importance(it.similarity, it.head_weight)},
                     {"display", it.display},
                     {"patch_tokens", it.patch_tokens}});
  return {{"predicted_class", ex.predicted_class}, {"probs", ex.probs}, {"items", std::move(items)}};
}

nlohmann::json epoch_json(const EpochRecord& rec) {
  nlohmann::json j{{"epoch", rec.epoch},
                   {"phase", std::string(to_string(rec.phase))},
                   {"lr", rec.lr},
                   {"loss",
                    {{"total", rec.terms.total},
                     {"ce", rec.terms.ce},
                     {"clst", rec.terms.clst},
                     {"sep", rec.terms.sep},
                     {"distr", rec.terms.distr},
                     {"divers", rec.terms.divers},
                     {"l1", rec.terms.l1},
                     {"interact", rec.terms.interact}}}};
  j["val_bacc"] = rec.val_bacc ? nlohmann::json(*rec.val_bacc) : nlohmann::json(nullptr);
  return j;
}

namespace {

struct Cancelled {};

/// Serializes embed() for providers that are not safe to call concurrently.
class LockedProvider final : public EmbeddingProvider {
 public:
  explicit LockedProvider(std::unique_ptr<EmbeddingProvider> inner) : inner_(std::move(inner)) {}
  std::size_t dim() const override { return inner_->dim(); }
  bool supports_novel_text() const override { return inner_->supports_novel_text(); }
  bool deterministic() const override { return inner_->deterministic(); }
  Embedding embed(std::span<const std::string> tokens) const override {
    std::lock_guard lk(mu_);
    return inner_->embed(tokens);
  }

 private:
  std::unique_ptr<EmbeddingProvider> inner_;
  mutable std::mutex mu_;
};

void check_matches(const Model& m, const Dataset& ds) {
  PROTEX_THROW_IF(m.mode != ds.mode || m.dim != ds.dim || m.classes != ds.classes, ErrorCode::DimMismatch,
                  "model (mode " + std::string(to_string(m.mode)) + ", dim " + std::to_string(m.dim) + ", " +
                      std::to_string(m.classes) + " classes) does not match the dataset");
}

}  // namespace

Session::Session(Dataset data, TrainConfig cfg, std::unique_ptr<EmbeddingProvider> provider,
                 std::optional<Model> model, std::optional<RationaleSet> rationales)
    : data_(std::move(data)), cfg_(std::move(cfg)), rationales_(std::move(rationales)) {
  cfg_.validate();
  if (!provider) provider = std::make_unique<StoredOnlyProvider>(data_.dim);
  PROTEX_THROW_IF(provider->dim() != data_.dim, ErrorCode::DimMismatch,
                  "provider dim " + std::to_string(provider->dim()) + " != dataset dim " + std::to_string(data_.dim));
  if (provider->thread_safe()) provider_ = std::move(provider);
  else provider_ = std::make_unique<LockedProvider>(std::move(provider));
  if (!model) model = init_model(cfg_, data_);
  check_matches(*model, data_);
  model->check_consistent();
  snap_ = std::make_shared<const Model>(std::move(*model));
  epoch_ = snap_->epoch;
}

Session::~Session() {
  {
    std::lock_guard lk(mu_);
    stop_requested_ = true;
  }
  cv_.notify_all();
  join_trainer();
  std::lock_guard lk(mu_);
  for (auto& p : queue_)
    p->done.set_exception(std::make_exception_ptr(Error(ErrorCode::InvalidState, "session shut down")));
  queue_.clear();
}

void Session::join_trainer() {
  if (trainer_.joinable()) trainer_.join();
}

std::shared_ptr<const Model> Session::snapshot() const {
  std::lock_guard lk(mu_);
  return snap_;
}

void Session::publish(const Model& m) {
  auto s = std::make_shared<const Model>(m);
  std::lock_guard lk(mu_);
  snap_ = std::move(s);
}

void Session::push_event(nlohmann::json ev) {
  {
    std::lock_guard lk(mu_);
    events_.push_back({++event_seq_, ev.dump()});
    while (events_.size() > 4096) events_.pop_front();
  }
  cv_.notify_all();
}

std::uint64_t Session::last_event_seq() const {
  std::lock_guard lk(mu_);
  return event_seq_;
}

std::vector<Session::Event> Session::wait_events(std::uint64_t after, std::chrono::milliseconds timeout) const {
  std::unique_lock lk(mu_);
  cv_.wait_for(lk, timeout, [&] { return event_seq_ > after || stop_requested_; });
  std::vector<Event> out;
  for (const auto& e : events_)
    if (e.seq > after) out.push_back(e);
  return out;
}

nlohmann::json Session::status() const {
  std::lock_guard lk(mu_);
  nlohmann::json j{{"phase", std::string(to_string(phase_))},
                   {"epoch", epoch_},
                   {"digest", snap_->digest()},
                   {"pending_commands", queue_.size()},
                   {"mode", std::string(to_string(snap_->mode))},
                   {"dim", snap_->dim},
                   {"classes", snap_->classes},
                   {"prototypes", snap_->num_prototypes()},
                   {"provider_novel_text", provider_->supports_novel_text()}};
  j["metrics"] = last_metrics_ ? *last_metrics_ : nlohmann::json(nullptr);
  j["report"] = last_report_ ? *last_report_ : nlohmann::json(nullptr);
  j["error"] = last_error_ ? nlohmann::json(*last_error_) : nlohmann::json(nullptr);
  return j;
}

nlohmann::json Session::prototypes() const { return prototypes_json(*snapshot()); }

nlohmann::json Session::explain(const nlohmann::json& req) const {
  PROTEX_THROW_IF(!req.is_object(), ErrorCode::ParseError, "request body must be a JSON object");
  const auto model = snapshot();
  std::size_t top = 4;
  std::optional<EmbeddedExample> query;
  const EmbeddedExample* ex = nullptr;
  try {
    if (req.contains("top")) top = req.at("top").get<std::size_t>();
    if (req.contains("id")) {
      const auto id = req.at("id").get<std::string>();
      ex = data_.find(id);
      PROTEX_THROW_IF(ex == nullptr, ErrorCode::UnknownExample, "no example with id '" + id + "'");
    } else if (req.contains("tokens") || req.contains("text")) {
      PROTEX_THROW_IF(!provider_->supports_novel_text(), ErrorCode::ProviderCapability,
                      "explaining raw text needs a provider that supports novel text");
      auto tokens = req.contains("tokens") ? req.at("tokens").get<std::vector<std::string>>()
                                           : split_whitespace(req.at("text").get<std::string>());
      PROTEX_THROW_IF(tokens.empty(), ErrorCode::EmptyInput, "query has no tokens");
      query = embed_example("query", 0, std::move(tokens), model->mode, *provider_);
      ex = &*query;
    } else {
      throw Error(ErrorCode::ParseError, "give \"id\", \"tokens\" or \"text\"");
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, e.what());
  }
  auto out = explanation_json(protex::explain(*ex, *model, top));
  out["id"] = query ? nlohmann::json(nullptr) : nlohmann::json(ex->id);
  out["digest"] = model->digest();
  return out;
}

nlohmann::json Session::apply_now(Model& m, const InteractionCommand& cmd) {
  const auto outcome = protex::apply(m, cmd, data_, cfg_, provider_.get());
  publish(m);
  auto j = outcome.to_json();
  push_event({{"event", "interaction"}, {"outcome", j}});
  return j;
}

nlohmann::json Session::interact(const nlohmann::json& body) {
  const auto cmd = InteractionCommand::from_json(body);
  std::shared_ptr<Pending> pending;
  {
    std::lock_guard g(mutate_mu_);
    std::unique_lock lk(mu_);
    if (phase_ == SessionPhase::idle) {
      Model m = *snap_;
      lk.unlock();
      return apply_now(m, cmd);
    }
    pending = std::make_shared<Pending>();
    pending->cmd = cmd;
    queue_.push_back(pending);
  }
  cv_.notify_all();
  return pending->done.get_future().get();
}

bool Session::drain_queue(Model& m) {
  bool modified = false;
  for (;;) {
    std::shared_ptr<Pending> p;
    {
      std::lock_guard lk(mu_);
      if (queue_.empty()) break;
      p = queue_.front();
      queue_.pop_front();
    }
    try {
      p->done.set_value(apply_now(m, p->cmd));
      modified = true;
    } catch (...) {
      p->done.set_exception(std::current_exception());
    }
  }
  return modified;
}

bool Session::on_epoch(const EpochRecord& rec, Model& m, std::size_t proj) {
  auto metrics = epoch_json(rec);
  {
    std::lock_guard lk(mu_);
    if (stop_requested_) throw Cancelled{};
    epoch_ = rec.epoch;
    if (rec.phase == Phase::head) phase_ = SessionPhase::retraining_head;
    else if (proj > 0 && rec.epoch == proj) phase_ = SessionPhase::projecting;
    else phase_ = SessionPhase::training;
    last_metrics_ = metrics;
  }
  publish(m);
  metrics["event"] = "epoch";
  push_event(std::move(metrics));

  bool modified = drain_queue(m);
  for (;;) {
    std::unique_lock lk(mu_);
    if (stop_requested_) throw Cancelled{};
    if (!pause_requested_) break;
    const SessionPhase resume_phase = phase_ == SessionPhase::paused ? SessionPhase::training : phase_;
    phase_ = SessionPhase::paused;
    cv_.wait(lk, [&] { return stop_requested_ || !pause_requested_ || !queue_.empty(); });
    if (!pause_requested_) phase_ = resume_phase;
    lk.unlock();
    modified = drain_queue(m) || modified;
  }
  return modified;
}

void Session::run_training(Model start, TrainConfig cfg) {
  bool cancelled = false;
  const std::size_t proj = cfg.projection_epoch(start.mode);
  try {
    auto res = protex::train(data_, std::move(start), cfg,
                             [this, proj](const EpochRecord& rec, Model& m) {
                               return on_epoch(rec, m, proj);
                             });
    publish(res.model);
    auto rep = res.report.to_json();
    rep.erase("epochs");
    {
      std::lock_guard lk(mu_);
      last_report_ = rep;
      epoch_ = res.model.epoch;
    }
    push_event({{"event", "done"}, {"report", rep}});
  } catch (const Cancelled&) {
    cancelled = true;
  } catch (const std::exception& e) {
    {
      std::lock_guard lk(mu_);
      last_error_ = e.what();
    }
    push_event({{"event", "error"}, {"detail", e.what()}});
  }
  // commands that arrived after the last epoch boundary
  for (;;) {
    std::shared_ptr<Pending> p;
    {
      std::lock_guard lk(mu_);
      if (queue_.empty() || cancelled) {
        phase_ = SessionPhase::idle;
        pause_requested_ = false;
        break;
      }
      p = queue_.front();
      queue_.pop_front();
    }
    try {
      Model m = *snapshot();
      p->done.set_value(apply_now(m, p->cmd));
    } catch (...) {
      p->done.set_exception(std::current_exception());
    }
  }
  cv_.notify_all();
}

nlohmann::json Session::start_training(const nlohmann::json& req) {
  PROTEX_THROW_IF(!req.is_null() && !req.is_object(), ErrorCode::ParseError, "request body must be a JSON object");
  std::lock_guard g(mutate_mu_);
  TrainConfig cfg = cfg_;
  bool reset = true;
  try {
    if (req.is_object()) {
      if (req.contains("epochs")) cfg.epochs = req.at("epochs").get<std::size_t>();
      if (req.contains("seed")) cfg.seed = req.at("seed").get<std::uint64_t>();
      if (req.contains("reset")) reset = req.at("reset").get<bool>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, e.what());
  }
  cfg.validate();
  {
    std::lock_guard lk(mu_);
    PROTEX_THROW_IF(phase_ != SessionPhase::idle, ErrorCode::InvalidState,
                    "training already running (" + std::string(to_string(phase_)) + ")");
  }
  join_trainer();
  Model start = reset ? init_model(cfg, data_) : *snapshot();
  if (reset) start.seed = cfg.seed;
  {
    std::lock_guard lk(mu_);
    phase_ = SessionPhase::training;
    epoch_ = 0;
    pause_requested_ = false;
    last_error_.reset();
    last_report_.reset();
  }
  push_event({{"event", "start"}, {"epochs", cfg.epochs}, {"seed", cfg.seed}});
  trainer_ = std::thread([this, start = std::move(start), cfg]() mutable { run_training(std::move(start), cfg); });
  return {{"started", true}, {"epochs", cfg.epochs}, {"seed", cfg.seed}};
}

nlohmann::json Session::pause() {
  std::lock_guard lk(mu_);
  PROTEX_THROW_IF(phase_ == SessionPhase::idle, ErrorCode::InvalidState, "nothing is training");
  pause_requested_ = true;
  return {{"pause_requested", true}, {"phase", std::string(to_string(phase_))}};
}

nlohmann::json Session::resume() {
  {
    std::lock_guard lk(mu_);
    PROTEX_THROW_IF(phase_ == SessionPhase::idle, ErrorCode::InvalidState, "nothing is training");
    pause_requested_ = false;
  }
  cv_.notify_all();
  return {{"resumed", true}};
}

void Session::wait_idle() {
  {
    std::unique_lock lk(mu_);
    cv_.wait(lk, [&] { return phase_ == SessionPhase::idle; });
  }
  std::lock_guard g(mutate_mu_);
  join_trainer();
}

nlohmann::json Session::faithfulness(const nlohmann::json& req) const {
  PROTEX_THROW_IF(!req.is_null() && !req.is_object(), ErrorCode::ParseError, "request body must be a JSON object");
  const auto model = snapshot();
  bool global = false, details = false;
  std::optional<RationaleSet> inline_rs;
  try {
    if (req.is_object()) {
      global = req.value("global", false);
      details = req.value("details", false);
      if (req.contains("rationales")) {
        std::string lines;
        for (const auto& r : req.at("rationales")) lines += r.dump() + "\n";
        inline_rs = parse_rationales(lines, "request");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, e.what());
  }
  const RationaleSet* rs = inline_rs ? &*inline_rs : (rationales_ ? &*rationales_ : nullptr);
  auto rep = evaluate_faithfulness(*model, data_, rs, provider_.get(), global).to_json(details);
  rep["digest"] = model->digest();
  return rep;
}

std::string Session::checkpoint_bytes() const { return serialize_checkpoint(*snapshot()); }

nlohmann::json Session::put_checkpoint(std::string_view bytes) {
  std::lock_guard g(mutate_mu_);
  {
    std::lock_guard lk(mu_);
    PROTEX_THROW_IF(phase_ != SessionPhase::idle, ErrorCode::InvalidState, "cannot replace the model while training");
  }
  auto m = parse_checkpoint(bytes, "request body");
  check_matches(m, data_);
  publish(m);
  {
    std::lock_guard lk(mu_);
    epoch_ = m.epoch;
  }
  push_event({{"event", "checkpoint"}, {"digest", m.digest()}});
  return {{"digest", m.digest()}, {"prototypes", m.num_prototypes()}};
}

}  // namespace protex::gateway
