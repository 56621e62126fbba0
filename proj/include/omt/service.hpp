#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>

#include <json.hpp>

#include "omt/pipeline.hpp"

// Loopback HTTP/WebSocket front end over one translation session.
namespace omt::service {

struct ServiceConfig {
  std::string model_path;
  std::string bind_address = "127.0.0.1";
  std::uint16_t port = 8080;  // 0 picks a free port
  pipeline::Direction direction = pipeline::Direction::ViToEn;
  bool allow_nonlocal = false;
  std::size_t queue_depth = 8;
  std::chrono::milliseconds busy_timeout{30000};
  // Tests only: bind a non-loopback address while still refusing
  // non-loopback peers.
  bool skip_bind_check = false;
};

bool is_loopback_address(std::string_view address);
// Throws InvalidArgument when the bind address breaks the loopback rule.
void check_config(const ServiceConfig& config);

struct ApiError {
  int status = 500;
  std::string code;
  std::string message;
};

ApiError to_api_error(const std::exception& e);
nlohmann::json error_json(const ApiError& e);

struct ApiTranslateRequest {
  std::string text;
  pipeline::Direction direction = pipeline::Direction::ViToEn;
};

// Throws Error(InvalidArgument) for malformed bodies.
ApiTranslateRequest parse_translate_request(std::string_view body, pipeline::Direction default_direction);

nlohmann::json health_json(const pipeline::Session& session);
nlohmann::json translate_response_json(const pipeline::TranslationTurn& turn);
nlohmann::json token_event_json(const pipeline::StreamEvent& ev);
nlohmann::json done_event_json(const pipeline::TranslationTurn& turn);
nlohmann::json error_event_json(const ApiError& e);

// One holder at a time; at most `depth` callers wait, each for at most
// `timeout`. Excess or expired waiters get Error(BusyTimeout).
class Gate {
 public:
  Gate(std::size_t depth, std::chrono::milliseconds timeout) : depth_(depth), timeout_(timeout) {}

  class Pass {
   public:
    explicit Pass(Gate& g) : g_(&g) {}
    Pass(Pass&& o) noexcept : g_(std::exchange(o.g_, nullptr)) {}
    Pass(const Pass&) = delete;
    Pass& operator=(const Pass&) = delete;
    Pass& operator=(Pass&&) = delete;
    ~Pass() {
      if (g_) g_->release();
    }

   private:
    Gate* g_;
  };

  Pass acquire();

 private:
  void release();

  std::mutex m_;
  std::condition_variable cv_;
  bool busy_ = false;
  std::size_t waiting_ = 0;
  std::size_t depth_;
  std::chrono::milliseconds timeout_;
};

struct HttpReply {
  int status = 200;
  nlohmann::json body;
};

class Service {
 public:
  Service(std::shared_ptr<pipeline::Session> session, ServiceConfig config);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  // Binds and starts accepting in the background. Throws IoError when the
  // address cannot be bound.
  void start();
  std::uint16_t port() const;
  void stop();
  // Blocks until stop() is called from another thread or a signal handler.
  void wait();

  // Request dispatch without the socket layer.
  HttpReply handle(std::string_view method, std::string_view target, std::string_view body);

  const ServiceConfig& config() const noexcept { return config_; }
  pipeline::Session& session() noexcept { return *session_; }
  Gate& gate() noexcept { return gate_; }

 private:
  struct Impl;

  std::shared_ptr<pipeline::Session> session_;
  ServiceConfig config_;
  Gate gate_;
  std::unique_ptr<Impl> impl_;
};

}  // namespace omt::service
