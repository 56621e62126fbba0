#include <sys/socket.h>

#include <atomic>
#include <filesystem>
#include <list>
#include <thread>

#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include "omt/error.hpp"
#include "omt/service.hpp"

namespace omt::service {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;
using nlohmann::json;

struct Service::Impl {
  struct Connection {
    std::shared_ptr<tcp::socket> socket;
    std::shared_ptr<std::atomic<bool>> done;
    std::thread thread;
  };

  asio::io_context io;
  std::unique_ptr<tcp::acceptor> acceptor;
  std::uint16_t port = 0;
  std::thread accept_thread;
  std::mutex m;
  std::condition_variable stopped_cv;
  bool stopping = false;
  std::list<Connection> connections;

  void reap() {
    for (auto it = connections.begin(); it != connections.end();) {
      if (it->done->load()) {
        it->thread.join();
        it = connections.erase(it);
      } else {
        ++it;
      }
    }
  }
};

namespace {

// Drop the connection with a reset so the peer sees a refusal, not an
// empty reply.
void reject(tcp::socket& s) {
  boost::system::error_code ec;
  s.set_option(asio::socket_base::linger(true, 0), ec);
  s.close(ec);
}

http::response<http::string_body> make_response(const http::request<http::string_body>& req, const HttpReply& r) {
  http::response<http::string_body> res{static_cast<http::status>(r.status), req.version()};
  res.set(http::field::content_type, "application/json");
  res.set(http::field::access_control_allow_origin, "*");
  res.keep_alive(req.keep_alive());
  res.body() = r.body.dump();
  res.prepare_payload();
  return res;
}

void run_websocket(Service& svc, tcp::socket& socket, http::request<http::string_body> req) {
  websocket::stream<tcp::socket&> ws(socket);
  ws.read_message_max(1 << 20);
  ws.accept(req);
  ws.text(true);
  beast::flat_buffer buf;
  while (true) {
    buf.clear();
    boost::system::error_code ec;
    ws.read(buf, ec);
    if (ec) return;
    const std::string body = beast::buffers_to_string(buf.data());
    bool peer_gone = false;
    auto send = [&](const json& j) {
      if (peer_gone) return false;
      const std::string s = j.dump();
      boost::system::error_code wec;
      ws.write(asio::buffer(s), wec);
      if (wec) peer_gone = true;
      return !peer_gone;
    };
    try {
      const auto request = parse_translate_request(body, svc.config().direction);
      auto pass = svc.gate().acquire();
      const auto turn = svc.session().translate(request.direction, request.text,
                                                [&](const pipeline::StreamEvent& ev) { return send(token_event_json(ev)); });
      if (!turn.cancelled) send(done_event_json(turn));
    } catch (const std::exception& e) {
      send(error_event_json(to_api_error(e)));
    }
    if (peer_gone) return;
  }
}

void serve_connection(Service& svc, const std::shared_ptr<tcp::socket>& socket) {
  beast::flat_buffer buf;
  while (true) {
    http::request_parser<http::string_body> parser;
    parser.body_limit(1 << 20);
    boost::system::error_code ec;
    http::read(*socket, buf, parser, ec);
    if (ec) return;
    auto req = parser.release();
    if (websocket::is_upgrade(req)) {
      if (req.target() == "/stream") {
        run_websocket(svc, *socket, std::move(req));
      } else {
        const auto res = make_response(req, {404, error_json({404, "NOT_FOUND", "no websocket at this path"})});
        http::write(*socket, res, ec);
      }
      return;
    }
    const HttpReply reply = svc.handle(std::string(req.method_string()), std::string(req.target()), req.body());
    const auto res = make_response(req, reply);
    http::write(*socket, res, ec);
    if (ec || !req.keep_alive()) break;
  }
  boost::system::error_code ec;
  socket->shutdown(tcp::socket::shutdown_send, ec);
}

}  // namespace

Service::Service(std::shared_ptr<pipeline::Session> session, ServiceConfig config)
    : session_(std::move(session)),
      config_(std::move(config)),
      gate_(config_.queue_depth, config_.busy_timeout),
      impl_(std::make_unique<Impl>()) {
  if (!session_) fail(Errc::InvalidArgument, "service needs a session");
  check_config(config_);
}

Service::~Service() { stop(); }

HttpReply Service::handle(std::string_view method, std::string_view target, std::string_view body) {
  const std::string_view path = target.substr(0, target.find('?'));
  try {
    if (path == "/health") {
      if (method != "GET") return {405, error_json({405, "METHOD_NOT_ALLOWED", "use GET"})};
      json j = health_json(*session_);
      if (j["model"].get<std::string>().empty()) j["model"] = std::filesystem::path(config_.model_path).stem().string();
      return {200, j};
    }
    if (path == "/translate") {
      if (method != "POST") return {405, error_json({405, "METHOD_NOT_ALLOWED", "use POST"})};
      const auto req = parse_translate_request(body, config_.direction);
      auto pass = gate_.acquire();
      return {200, translate_response_json(session_->translate(req.direction, req.text))};
    }
    if (path == "/stream") return {426, error_json({426, "UPGRADE_REQUIRED", "/stream is a websocket endpoint"})};
    return {404, error_json({404, "NOT_FOUND", "no such endpoint"})};
  } catch (const std::exception& e) {
    const auto err = to_api_error(e);
    return {err.status, error_json(err)};
  }
}

void Service::start() {
  auto& im = *impl_;
  boost::system::error_code ec;
  const auto addr = asio::ip::make_address(config_.bind_address == "localhost" ? "127.0.0.1" : config_.bind_address, ec);
  if (ec) fail(Errc::InvalidArgument, "bad bind address " + config_.bind_address);
  const tcp::endpoint ep(addr, config_.port);
  im.acceptor = std::make_unique<tcp::acceptor>(im.io);
  im.acceptor->open(ep.protocol(), ec);
  if (!ec) im.acceptor->set_option(asio::socket_base::reuse_address(true), ec);
  if (!ec) im.acceptor->bind(ep, ec);
  if (!ec) im.acceptor->listen(asio::socket_base::max_listen_connections, ec);
  if (ec) fail(Errc::IoError, "cannot listen on " + config_.bind_address + ":" + std::to_string(config_.port) + ": " +
                                  ec.message());
  im.port = im.acceptor->local_endpoint().port();

  im.accept_thread = std::thread([this] {
    auto& im = *impl_;
    while (true) {
      auto socket = std::make_shared<tcp::socket>(im.io);
      boost::system::error_code ec;
      im.acceptor->accept(*socket, ec);
      std::lock_guard lock(im.m);
      if (im.stopping) return;
      im.reap();
      if (ec) continue;
      const auto peer = socket->remote_endpoint(ec);
      if (ec) continue;
      if (!config_.allow_nonlocal && !is_loopback_address(peer.address().to_string())) {
        reject(*socket);
        continue;
      }
      auto done = std::make_shared<std::atomic<bool>>(false);
      std::thread t([this, socket, done] {
        try {
          serve_connection(*this, socket);
        } catch (...) {
        }
        done->store(true);
      });
      im.connections.push_back({socket, done, std::move(t)});
    }
  });
}

std::uint16_t Service::port() const { return impl_->port; }

void Service::stop() {
  auto& im = *impl_;
  {
    std::lock_guard lock(im.m);
    if (im.stopping || !im.acceptor) {
      im.stopping = true;
      im.stopped_cv.notify_all();
      return;
    }
    im.stopping = true;
    ::shutdown(im.acceptor->native_handle(), SHUT_RDWR);
    for (auto& c : im.connections) ::shutdown(c.socket->native_handle(), SHUT_RDWR);
  }
  im.stopped_cv.notify_all();
  if (im.accept_thread.joinable()) im.accept_thread.join();
  for (auto& c : im.connections) {
    if (c.thread.joinable()) c.thread.join();
  }
  im.connections.clear();
  boost::system::error_code ec;
  im.acceptor->close(ec);
}

void Service::wait() {
  auto& im = *impl_;
  std::unique_lock lock(im.m);
  im.stopped_cv.wait(lock, [&] { return im.stopping; });
}

}  // namespace omt::service
