#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include "rollcall/client.hpp"
#include "rollcall/experiment.hpp"

namespace rollcall {

struct Endpoint {
  std::string host;
  std::uint16_t port = 0;
};

/// "host:port"; nullopt when the port is missing or out of range.
std::optional<Endpoint> parse_endpoint(std::string_view text);

class NetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// TCP server speaking newline-terminated request/reply lines. Each request
/// line is answered with exactly one reply line; connections may carry any
/// number of exchanges. All handlers run on the thread calling run().
class LineServer {
 public:
  using Handler = std::function<std::string(std::string_view)>;

  /// Binds immediately; throws NetError on failure. Port 0 picks a free port.
  LineServer(const Endpoint& listen, Handler handler);
  ~LineServer();
  LineServer(const LineServer&) = delete;
  LineServer& operator=(const LineServer&) = delete;

  std::uint16_t port() const;

  /// Calls `fn` every `interval_ms` on the server thread while running.
  void set_ticker(Millis interval_ms, std::function<void()> fn);

  /// Blocks until stop().
  void run();
  /// Safe to call from any thread.
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// One short-lived connection per exchange, bounded by a timeout.
class TcpTransport final : public Transport {
 public:
  TcpTransport(Endpoint counter, Millis timeout_ms = 5'000);
  ~TcpTransport() override;

  std::optional<std::string> exchange(std::string_view line) override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace rollcall
