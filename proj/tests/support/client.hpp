#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

// Minimal blocking HTTP and WebSocket client for exercising the service.
namespace client {

struct Response {
  int status = 0;
  nlohmann::json body;
};

Response request(std::uint16_t port, const std::string& method, const std::string& target,
                 const std::string& body = {});

// Sends one request message on /stream and collects events until a done or
// error event (inclusive).
std::vector<nlohmann::json> stream(std::uint16_t port, const nlohmann::json& request);

// Connects from `local_address` to `server_address`:port and sends a GET
// /health. Returns true when a reply arrived, false when the server dropped
// the connection first.
bool connect_from(const std::string& local_address, const std::string& server_address, std::uint16_t port);

}  // namespace client
