#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <future>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "protex/embedding_store.hpp"
#include "protex/faithfulness.hpp"
#include "protex/interaction.hpp"
#include "protex/protonet.hpp"
#include "protex/provider.hpp"
#include "protex/trainer.hpp"

namespace protex::gateway {

enum class SessionPhase { idle, training, paused, projecting, retraining_head };
std::string_view to_string(SessionPhase p) noexcept;

/// JSON rendering shared by the HTTP API and the CLI.
nlohmann::json prototypes_json(const Model& model);
nlohmann::json explanation_json(const ExplanationResult& ex);
nlohmann::json epoch_json(const EpochRecord& rec);

/// One model, one trainer thread, one serialized command queue. Readers get
/// immutable snapshots published at epoch boundaries and after commands.
class Session {
 public:
  Session(Dataset data, TrainConfig cfg, std::unique_ptr<EmbeddingProvider> provider,
          std::optional<Model> model = std::nullopt, std::optional<RationaleSet> rationales = std::nullopt);
  ~Session();

  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  std::shared_ptr<const Model> snapshot() const;
  const Dataset& data() const noexcept { return data_; }
  const TrainConfig& config() const noexcept { return cfg_; }

  nlohmann::json status() const;
  nlohmann::json prototypes() const;
  /// {"id": str} or {"text": str} / {"tokens": [str]}; optional "top" (default 4).
  nlohmann::json explain(const nlohmann::json& req) const;
  /// Applies immediately when idle; otherwise queued for the trainer thread
  /// (next epoch boundary, or at once while paused). Blocks until applied.
  nlohmann::json interact(const nlohmann::json& cmd);
  /// {"epochs"?: int, "reset"?: bool (default true), "seed"?: int}
  nlohmann::json start_training(const nlohmann::json& req);
  nlohmann::json pause();
  nlohmann::json resume();
  /// Blocks until the trainer thread has finished (tests, CLI).
  void wait_idle();
  /// {"global"?: bool, "rationales"?: [{"id", "mask"}], "details"?: bool}
  nlohmann::json faithfulness(const nlohmann::json& req) const;
  std::string checkpoint_bytes() const;
  nlohmann::json put_checkpoint(std::string_view bytes);

  struct Event {
    std::uint64_t seq = 0;
    std::string data;
  };
  /// Events with seq > after, waiting up to `timeout` for one to arrive.
  std::vector<Event> wait_events(std::uint64_t after, std::chrono::milliseconds timeout) const;
  std::uint64_t last_event_seq() const;

 private:
  struct Pending {
    InteractionCommand cmd;
    std::promise<nlohmann::json> done;
  };

  void publish(const Model& m);
  void push_event(nlohmann::json ev);
  nlohmann::json apply_now(Model& m, const InteractionCommand& cmd);
  bool drain_queue(Model& m);
  bool on_epoch(const EpochRecord& rec, Model& m, std::size_t projection_epoch);
  void run_training(Model start, TrainConfig cfg);
  void join_trainer();

  Dataset data_;
  TrainConfig cfg_;
  std::unique_ptr<EmbeddingProvider> provider_;
  std::optional<RationaleSet> rationales_;
  mutable std::mutex provider_mu_;

  mutable std::mutex mu_;  // guards everything below
  mutable std::condition_variable cv_;
  std::shared_ptr<const Model> snap_;
  SessionPhase phase_ = SessionPhase::idle;
  bool pause_requested_ = false;
  bool stop_requested_ = false;
  std::size_t epoch_ = 0;
  std::optional<nlohmann::json> last_metrics_;
  std::optional<nlohmann::json> last_report_;
  std::optional<std::string> last_error_;
  std::deque<std::shared_ptr<Pending>> queue_;
  std::deque<Event> events_;
  std::uint64_t event_seq_ = 0;
  std::thread trainer_;
  std::mutex mutate_mu_;  // serializes idle-time commands with training start
};

}  // namespace protex::gateway
