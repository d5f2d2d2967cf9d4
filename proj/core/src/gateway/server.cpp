#include "protex/gateway/server.hpp"

#include <atomic>
#include <thread>

#include <httplib.h>

#include "protex/error.hpp"

namespace protex::gateway {

int http_status(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::UnknownPrototype:
    case ErrorCode::UnknownExample: return 404;
    case ErrorCode::InvalidState: return 409;
    case ErrorCode::ProviderCapability: return 422;
    default: return 400;
  }
}

namespace {

void send_json(httplib::Response& res, const nlohmann::json& j, int status = 200) {
  res.status = status;
  res.set_content(j.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, std::string_view code, const std::string& detail) {
  send_json(res, {{"error", code}, {"detail", detail}}, status);
}

nlohmann::json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return nullptr;
  try {
    return nlohmann::json::parse(req.body);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("request body is not JSON: ") + e.what());
  }
}

template <class F>
httplib::Server::Handler guarded(F f) {
  return [f](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const Error& e) {
      send_error(res, http_status(e.code()), code_name(e.code()), e.detail());
    } catch (const std::exception& e) {
      send_error(res, 500, "Internal", e.what());
    }
  };
}

}  // namespace

struct Server::Impl {
  Session& session;
  httplib::Server http;
  std::thread thread;
  std::atomic<bool> stopping{false};

  explicit Impl(Session& s) : session(s) { routes(); }

  void routes() {
    http.Get("/v1/status", guarded([this](const auto&, auto& res) { send_json(res, session.status()); }));
    http.Get("/v1/prototypes", guarded([this](const auto&, auto& res) { send_json(res, session.prototypes()); }));
    http.Post("/v1/explain",
              guarded([this](const auto& req, auto& res) { send_json(res, session.explain(parse_body(req))); }));
    http.Post("/v1/interact",
              guarded([this](const auto& req, auto& res) { send_json(res, session.interact(parse_body(req))); }));
    http.Post("/v1/train", guarded([this](const auto& req, auto& res) {
                send_json(res, session.start_training(parse_body(req)), 202);
              }));
    http.Post("/v1/train/pause", guarded([this](const auto&, auto& res) { send_json(res, session.pause()); }));
    http.Post("/v1/train/resume", guarded([this](const auto&, auto& res) { send_json(res, session.resume()); }));
    http.Post("/v1/faithfulness", guarded([this](const auto& req, auto& res) {
                send_json(res, session.faithfulness(parse_body(req)));
              }));
    http.Get("/v1/checkpoint", guarded([this](const auto&, auto& res) {
               res.set_content(session.checkpoint_bytes(), "application/octet-stream");
             }));
    http.Put("/v1/checkpoint",
             guarded([this](const auto& req, auto& res) { send_json(res, session.put_checkpoint(req.body)); }));
    http.Get("/v1/metrics/stream", [this](const httplib::Request& req, httplib::Response& res) {
      // replay only what arrives after the connection unless the client resumes
      std::uint64_t last = session.last_event_seq();
      if (req.has_header("Last-Event-ID")) {
        try {
          last = std::stoull(req.get_header_value("Last-Event-ID"));
        } catch (const std::exception&) {
        }
      }
      res.set_header("Cache-Control", "no-cache");
      res.set_chunked_content_provider("text/event-stream", [this, last](std::size_t, httplib::DataSink& sink) mutable {
        if (stopping) return false;
        const auto events = session.wait_events(last, std::chrono::milliseconds(500));
        std::string out;
        for (const auto& e : events) {
          const auto j = nlohmann::json::parse(e.data);
          out += "id: " + std::to_string(e.seq) + "\nevent: " + j.value("event", "message") + "\ndata: " + e.data +
                 "\n\n";
          last = e.seq;
        }
        if (out.empty()) out = ": keepalive\n\n";
        return sink.write(out.data(), out.size());
      });
    });
    http.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
      if (res.status == 404 && res.body.empty())
        send_error(res, 404, "NotFound", "no route for " + req.method + " " + req.path);
    });
  }
};

Server::Server(Session& session) : impl_(std::make_unique<Impl>(session)) {}

Server::~Server() { stop(); }

int Server::bind(const std::string& host, int port) {
  int bound = port;
  if (port == 0) bound = impl_->http.bind_to_any_port(host);
  else if (!impl_->http.bind_to_port(host, port)) bound = -1;
  if (bound <= 0) throw Error(ErrorCode::BindFailure, "cannot bind " + host + ":" + std::to_string(port));
  return bound;
}

void Server::listen() { impl_->http.listen_after_bind(); }

void Server::start() {
  impl_->thread = std::thread([this] { impl_->http.listen_after_bind(); });
  impl_->http.wait_until_ready();
}

void Server::stop() {
  impl_->stopping = true;
  impl_->http.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace protex::gateway
