#include "rollcall/net.hpp"

#include <boost/asio.hpp>

#include <chrono>
#include <istream>

#include "rollcall/detail/text.hpp"

namespace rollcall {

namespace asio = boost::asio;
using asio::ip::tcp;

namespace {

constexpr std::size_t kMaxLineBytes = 4096;

std::string take_line(asio::streambuf& buf) {
  std::istream in(&buf);
  std::string line;
  std::getline(in, line);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

class Session : public std::enable_shared_from_this<Session> {
 public:
  Session(tcp::socket socket, const LineServer::Handler& handler)
      : socket_(std::move(socket)), handler_(handler), buf_(kMaxLineBytes) {}

  void start() { read(); }

 private:
  void read() {
    asio::async_read_until(socket_, buf_, '\n',
                           [self = shared_from_this()](boost::system::error_code ec, std::size_t) {
                             if (ec) return;  // EOF, oversize line or reset: drop the connection
                             self->reply_ = self->handler_(take_line(self->buf_));
                             self->reply_.push_back('\n');
                             self->write();
                           });
  }

  void write() {
    asio::async_write(socket_, asio::buffer(reply_),
                      [self = shared_from_this()](boost::system::error_code ec, std::size_t) {
                        if (!ec) self->read();
                      });
  }

  tcp::socket socket_;
  const LineServer::Handler& handler_;
  asio::streambuf buf_;
  std::string reply_;
};

}  // namespace

std::optional<Endpoint> parse_endpoint(std::string_view text) {
  const auto colon = text.rfind(':');
  if (colon == std::string_view::npos || colon == 0) return std::nullopt;
  const auto port = detail::parse_int(text.substr(colon + 1));
  if (!port || *port < 0 || *port > 65535) return std::nullopt;
  return Endpoint{std::string(text.substr(0, colon)), static_cast<std::uint16_t>(*port)};
}

struct LineServer::Impl {
  Handler handler;  // outlives io so queued sessions never dangle
  asio::io_context io;
  tcp::acceptor acceptor{io};
  asio::steady_timer ticker{io};
  Millis tick_interval = 0;
  std::function<void()> tick_fn;

  void accept() {
    acceptor.async_accept([this](boost::system::error_code ec, tcp::socket socket) {
      if (ec) {
        if (ec != asio::error::operation_aborted) accept();
        return;
      }
      std::make_shared<Session>(std::move(socket), handler)->start();
      accept();
    });
  }

  void schedule_tick() {
    ticker.expires_after(std::chrono::milliseconds(tick_interval));
    ticker.async_wait([this](boost::system::error_code ec) {
      if (ec) return;
      tick_fn();
      schedule_tick();
    });
  }
};

LineServer::LineServer(const Endpoint& listen, Handler handler) : impl_(std::make_unique<Impl>()) {
  impl_->handler = std::move(handler);
  try {
    tcp::resolver resolver(impl_->io);
    const auto results = resolver.resolve(listen.host, std::to_string(listen.port),
                                          tcp::resolver::passive);
    const tcp::endpoint ep = *results.begin();
    impl_->acceptor.open(ep.protocol());
    impl_->acceptor.set_option(tcp::acceptor::reuse_address(true));
    impl_->acceptor.bind(ep);
    impl_->acceptor.listen();
  } catch (const boost::system::system_error& e) {
    throw NetError("cannot listen on " + listen.host + ":" + std::to_string(listen.port) + ": " +
                   e.what());
  }
}

LineServer::~LineServer() = default;

std::uint16_t LineServer::port() const { return impl_->acceptor.local_endpoint().port(); }

void LineServer::set_ticker(Millis interval_ms, std::function<void()> fn) {
  impl_->tick_interval = interval_ms;
  impl_->tick_fn = std::move(fn);
}

void LineServer::run() {
  impl_->accept();
  if (impl_->tick_fn) impl_->schedule_tick();
  impl_->io.run();
}

void LineServer::stop() { impl_->io.stop(); }

struct TcpTransport::Impl {
  Impl(Endpoint c, Millis t) : counter(std::move(c)), timeout_ms(t) {}
  Endpoint counter;
  Millis timeout_ms;
  asio::io_context io;
};

TcpTransport::TcpTransport(Endpoint counter, Millis timeout_ms)
    : impl_(std::make_unique<Impl>(std::move(counter), timeout_ms)) {}

TcpTransport::~TcpTransport() = default;

std::optional<std::string> TcpTransport::exchange(std::string_view line) {
  auto& io = impl_->io;
  io.restart();
  tcp::resolver resolver(io);
  tcp::socket socket(io);
  asio::streambuf buf(kMaxLineBytes);
  std::string request(line);
  request.push_back('\n');
  std::optional<std::string> reply;

  resolver.async_resolve(
      impl_->counter.host, std::to_string(impl_->counter.port),
      [&](boost::system::error_code ec, tcp::resolver::results_type results) {
        if (ec) return;
        asio::async_connect(socket, results, [&](boost::system::error_code ec, const tcp::endpoint&) {
          if (ec) return;
          asio::async_write(socket, asio::buffer(request), [&](boost::system::error_code ec, std::size_t) {
            if (ec) return;
            asio::async_read_until(socket, buf, '\n', [&](boost::system::error_code ec, std::size_t) {
              if (!ec) reply = take_line(buf);
            });
          });
        });
      });

  io.run_for(std::chrono::milliseconds(impl_->timeout_ms));
  if (!io.stopped()) {
    boost::system::error_code ignored;
    socket.close(ignored);
    resolver.cancel();
    io.restart();
    io.run();  // drain cancelled handlers before the locals go away
  }
  return reply;
}

}  // namespace rollcall
