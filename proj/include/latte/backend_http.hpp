#pragma once

// HTTP transport for the backend protocol: a client that talks to any
// conforming model server, and a server that exposes any Backend (used by
// `latte serve-mock`).

#include "latte/backend.hpp"

#include <httplib.h>

#include <chrono>
#include <memory>
#include <string>

namespace latte {

class HttpBackend final : public Backend {
 public:
  /// `base_url` like "http://127.0.0.1:8080".
  explicit HttpBackend(std::string base_url, std::chrono::seconds timeout = std::chrono::seconds(120))
      : base_url_(std::move(base_url)), timeout_(timeout) {}

  const std::string& base_url() const { return base_url_; }

 protected:
  BackendResponse dispatch(const BackendRequest& req) override {
    // httplib::Client is not safe for concurrent use; one per call.
    httplib::Client client(base_url_);
    if (!client.is_valid()) throw BackendError(BackendError::Kind::Transport, "invalid backend URL " + base_url_);
    client.set_connection_timeout(timeout_);
    client.set_read_timeout(timeout_);
    client.set_write_timeout(timeout_);
    const std::string body = request_to_json(req).dump();
    auto res = client.Post(std::string(endpoint(req.role)), body, "application/json");
    if (!res) {
      throw BackendError(BackendError::Kind::Transport,
                         "POST " + base_url_ + std::string(endpoint(req.role)) + " failed: " + httplib::to_string(res.error()));
    }
    if (res->status != 200) throw error_from_json(res->body);
    nlohmann::json j = nlohmann::json::parse(res->body, nullptr, false);
    if (j.is_discarded()) throw protocol_error("response body is not JSON");
    return response_from_json(req.role, j);
  }

 private:
  std::string base_url_;
  std::chrono::seconds timeout_;
};

/// Installs the three protocol endpoints on `server`, forwarding to
/// `backend`. `backend` must outlive the server.
inline void mount_protocol(httplib::Server& server, Backend& backend) {
  for (Role role : {Role::Generate, Role::Localize, Role::Refine}) {
    server.Post(std::string(endpoint(role)), [&backend, role](const httplib::Request& http_req, httplib::Response& res) {
      try {
        nlohmann::json j = nlohmann::json::parse(http_req.body, nullptr, false);
        if (j.is_discarded()) throw protocol_error("request body is not JSON");
        const BackendResponse resp = backend.call(request_from_json(role, j));
        res.status = 200;
        res.set_content(response_to_json(resp).dump(), "application/json");
      } catch (const BackendError& e) {
        res.status = http_status(e.kind());
        res.set_content(error_to_json(e).dump(), "application/json");
      } catch (const std::exception& e) {
        const BackendError wrapped(BackendError::Kind::Model, e.what());
        res.status = 500;
        res.set_content(error_to_json(wrapped).dump(), "application/json");
      }
    });
  }
}

}  // namespace latte
