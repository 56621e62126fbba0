#include "client.hpp"

#include <boost/asio/connect.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

namespace client {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;

namespace {

tcp::endpoint loopback(std::uint16_t port) { return {asio::ip::make_address("127.0.0.1"), port}; }

}  // namespace

Response request(std::uint16_t port, const std::string& method, const std::string& target, const std::string& body) {
  asio::io_context io;
  tcp::socket s(io);
  s.connect(loopback(port));
  http::request<http::string_body> req{http::string_to_verb(method), target, 11};
  req.set(http::field::host, "127.0.0.1");
  req.set(http::field::content_type, "application/json");
  req.body() = body;
  req.prepare_payload();
  http::write(s, req);
  beast::flat_buffer buf;
  http::response<http::string_body> res;
  http::read(s, buf, res);
  Response r;
  r.status = static_cast<int>(res.result_int());
  r.body = nlohmann::json::parse(res.body());
  boost::system::error_code ec;
  s.shutdown(tcp::socket::shutdown_both, ec);
  return r;
}

std::vector<nlohmann::json> stream(std::uint16_t port, const nlohmann::json& request) {
  asio::io_context io;
  websocket::stream<tcp::socket> ws(io);
  ws.next_layer().connect(loopback(port));
  ws.handshake("127.0.0.1", "/stream");
  ws.text(true);
  ws.write(asio::buffer(request.dump()));
  std::vector<nlohmann::json> events;
  while (true) {
    beast::flat_buffer buf;
    ws.read(buf);
    events.push_back(nlohmann::json::parse(beast::buffers_to_string(buf.data())));
    const auto type = events.back().value("type", "");
    if (type == "done" || type == "error") break;
  }
  boost::system::error_code ec;
  ws.close(websocket::close_code::normal, ec);
  return events;
}

bool connect_from(const std::string& local_address, const std::string& server_address, std::uint16_t port) {
  asio::io_context io;
  tcp::socket s(io);
  s.open(tcp::v4());
  s.bind({asio::ip::make_address(local_address), 0});
  s.connect({asio::ip::make_address(server_address), port});
  http::request<http::string_body> req{http::verb::get, "/health", 11};
  req.set(http::field::host, server_address);
  boost::system::error_code ec;
  http::write(s, req, ec);
  if (ec) return false;
  beast::flat_buffer buf;
  http::response<http::string_body> res;
  http::read(s, buf, res, ec);
  return !ec;
}

}  // namespace client
