#pragma once

#include <memory>
#include <string>

#include "protex/error.hpp"
#include "protex/gateway/session.hpp"

namespace protex::gateway {

/// Maps a protex error code to its HTTP status (404 for unknown ids, 409 for
/// state conflicts, 422 for provider capability, 400 otherwise).
int http_status(ErrorCode code) noexcept;

/// JSON/SSE front end for a Session. All routes live under /v1.
class Server {
 public:
  explicit Server(Session& session);
  ~Server();

  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Binds without serving; port 0 picks a free port. Returns the bound
  /// port, throws BindFailure.
  int bind(const std::string& host, int port);
  /// Serves on the bound socket until stop().
  void listen();
  /// listen() on a background thread.
  void start();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace protex::gateway
