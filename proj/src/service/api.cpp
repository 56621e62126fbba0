#include <boost/asio/ip/address.hpp>

#include "omt/error.hpp"
#include "omt/service.hpp"

namespace omt::service {

using nlohmann::json;

namespace {

bool mapped_v4_is_loopback(const boost::asio::ip::address_v6& a) {
  return boost::asio::ip::make_address_v4(boost::asio::ip::v4_mapped, a).is_loopback();
}

}  // namespace

bool is_loopback_address(std::string_view address) {
  boost::system::error_code ec;
  const auto addr = boost::asio::ip::make_address(std::string(address), ec);
  if (ec) return address == "localhost";
  if (addr.is_v6() && addr.to_v6().is_v4_mapped()) {
    return mapped_v4_is_loopback(addr.to_v6());
  }
  return addr.is_loopback();
}

void check_config(const ServiceConfig& c) {
  if (!c.allow_nonlocal && !c.skip_bind_check && !is_loopback_address(c.bind_address)) {
    fail(Errc::InvalidArgument,
         "refusing to bind " + c.bind_address + ": only loopback addresses are allowed without --allow-nonlocal");
  }
  if (c.queue_depth == 0) fail(Errc::InvalidArgument, "queue depth must be at least 1");
}

ApiError to_api_error(const std::exception& e) {
  if (const auto* err = dynamic_cast<const Error*>(&e)) {
    switch (err->code()) {
      case Errc::EmptyInput: return {422, "EMPTY_INPUT", err->what()};
      case Errc::ContextOverflow: return {413, "CONTEXT_OVERFLOW", err->what()};
      case Errc::BusyTimeout: return {503, "BUSY_TIMEOUT", err->what()};
      case Errc::InvalidArgument: return {400, "INVALID_REQUEST", err->what()};
      default: return {500, "INTERNAL", err->what()};
    }
  }
  if (dynamic_cast<const json::exception*>(&e)) return {400, "INVALID_REQUEST", e.what()};
  return {500, "INTERNAL", e.what()};
}

json error_json(const ApiError& e) { return {{"error", {{"code", e.code}, {"message", e.message}}}}; }

ApiTranslateRequest parse_translate_request(std::string_view body, pipeline::Direction default_direction) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::exception& e) {
    fail(Errc::InvalidArgument, std::string("request body is not JSON: ") + e.what());
  }
  if (!j.is_object()) fail(Errc::InvalidArgument, "request body must be a JSON object");
  ApiTranslateRequest req;
  req.direction = default_direction;
  const auto text = j.find("text");
  if (text == j.end() || !text->is_string()) fail(Errc::InvalidArgument, "field 'text' must be a string");
  req.text = text->get<std::string>();
  if (const auto dir = j.find("direction"); dir != j.end() && !dir->is_null()) {
    if (!dir->is_string()) fail(Errc::InvalidArgument, "field 'direction' must be a string");
    req.direction = pipeline::parse_direction(dir->get<std::string>());
  }
  return req;
}

json health_json(const pipeline::Session& session) {
  const auto& m = session.model();
  return {{"status", "ok"},
          {"model", m.name},
          {"quant_type", m.quant_label()},
          {"offline", true}};
}

json translate_response_json(const pipeline::TranslationTurn& t) {
  return {{"translation", t.output_text},
          {"direction", pipeline::direction_code(t.direction)},
          {"timing_ms", t.total_ms},
          {"prompt_tokens", t.prompt_tokens},
          {"generated_tokens", t.generated_tokens},
          {"truncated", t.truncated}};
}

json token_event_json(const pipeline::StreamEvent& ev) {
  return {{"type", "token"}, {"text", ev.text}, {"id", ev.id}, {"index", ev.index}};
}

json done_event_json(const pipeline::TranslationTurn& t) {
  return {{"type", "done"}, {"response", translate_response_json(t)}};
}

json error_event_json(const ApiError& e) {
  json j = error_json(e);
  j["type"] = "error";
  return j;
}

Gate::Pass Gate::acquire() {
  std::unique_lock lock(m_);
  if (busy_) {
    if (waiting_ >= depth_) fail(Errc::BusyTimeout, "translation queue is full");
    ++waiting_;
    const bool ok = cv_.wait_for(lock, timeout_, [&] { return !busy_; });
    --waiting_;
    if (!ok) fail(Errc::BusyTimeout, "timed out waiting for the model");
  }
  busy_ = true;
  return Pass(*this);
}

void Gate::release() {
  {
    std::lock_guard lock(m_);
    busy_ = false;
  }
  cv_.notify_one();
}

}  // namespace omt::service
