#pragma once

// Protocol for the three model roles (generate, localize, refine), its JSON
// wire encoding, and a fixture-driven mock backend.
//
// Wire contract (JSON bodies, POST):
//   /v1/generate  {image_png_base64}                 -> {latex}
//   /v1/localize  {image_png_base64, tokens[]}       -> {index}
//   /v1/refine    {image_png_base64, prompt_tokens[]} -> {completion_tokens[]}
// Failures: non-200 status with {"error": {"kind", "message"}}.

#include "latte/raster.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace latte {

enum class Role { Generate, Localize, Refine };

inline constexpr std::string_view to_string(Role r) {
  switch (r) {
    case Role::Generate: return "generate";
    case Role::Localize: return "localize";
    case Role::Refine: return "refine";
  }
  return "?";
}

inline std::optional<Role> parse_role(std::string_view s) {
  if (s == "generate") return Role::Generate;
  if (s == "localize") return Role::Localize;
  if (s == "refine") return Role::Refine;
  return std::nullopt;
}

class BackendError : public Error {
 public:
  enum class Kind { Transport, Protocol, Model, Unscripted };

  BackendError(Kind kind, const std::string& message) : Error(message), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

inline constexpr std::string_view to_string(BackendError::Kind k) {
  switch (k) {
    case BackendError::Kind::Transport: return "transport";
    case BackendError::Kind::Protocol: return "protocol";
    case BackendError::Kind::Model: return "model";
    case BackendError::Kind::Unscripted: return "unscripted";
  }
  return "?";
}

inline BackendError protocol_error(const std::string& msg) { return {BackendError::Kind::Protocol, msg}; }

struct BackendRequest {
  Role role;
  PixelGrid image;  // target image for generate, composed delta view otherwise
  std::optional<std::vector<std::string>> tokens;

  static BackendRequest generate(PixelGrid image) { return {Role::Generate, std::move(image), std::nullopt}; }
  static BackendRequest localize(PixelGrid view, std::vector<std::string> script) {
    return {Role::Localize, std::move(view), std::move(script)};
  }
  static BackendRequest refine(PixelGrid view, std::vector<std::string> prompt) {
    return {Role::Refine, std::move(view), std::move(prompt)};
  }
};

struct BackendResponse {
  Role role;
  std::string latex;                           // generate
  std::size_t index = 0;                       // localize, 0-based
  std::vector<std::string> completion_tokens;  // refine

  static BackendResponse generated(std::string latex) { return {Role::Generate, std::move(latex), 0, {}}; }
  static BackendResponse localized(std::size_t index) { return {Role::Localize, {}, index, {}}; }
  static BackendResponse refined(std::vector<std::string> completion) {
    return {Role::Refine, {}, 0, std::move(completion)};
  }

  friend bool operator==(const BackendResponse&, const BackendResponse&) = default;
};

inline void validate_request(const BackendRequest& req) {
  if (req.role == Role::Generate && req.tokens.has_value()) throw protocol_error("generate request carries tokens");
  if (req.role != Role::Generate && !req.tokens.has_value()) {
    throw protocol_error(std::string(to_string(req.role)) + " request is missing tokens");
  }
}

inline void validate_response(const BackendRequest& req, const BackendResponse& resp) {
  if (resp.role != req.role) {
    throw protocol_error("response role " + std::string(to_string(resp.role)) + " does not match request role " +
                         std::string(to_string(req.role)));
  }
  if (req.role == Role::Localize && resp.index > req.tokens->size()) {
    throw protocol_error("fault index " + std::to_string(resp.index) + " outside [0, " +
                         std::to_string(req.tokens->size()) + "]");
  }
}

// ---------------------------------------------------------------------------
// Wire encoding

inline std::string base64_encode(std::span<const std::uint8_t> data) {
  static constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((data.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 3 <= data.size(); i += 3) {
    const std::uint32_t v = (std::uint32_t{data[i]} << 16) | (std::uint32_t{data[i + 1]} << 8) | data[i + 2];
    out.push_back(kAlphabet[(v >> 18) & 63]);
    out.push_back(kAlphabet[(v >> 12) & 63]);
    out.push_back(kAlphabet[(v >> 6) & 63]);
    out.push_back(kAlphabet[v & 63]);
  }
  if (const std::size_t rest = data.size() - i; rest > 0) {
    std::uint32_t v = std::uint32_t{data[i]} << 16;
    if (rest == 2) v |= std::uint32_t{data[i + 1]} << 8;
    out.push_back(kAlphabet[(v >> 18) & 63]);
    out.push_back(kAlphabet[(v >> 12) & 63]);
    out.push_back(rest == 2 ? kAlphabet[(v >> 6) & 63] : '=');
    out.push_back('=');
  }
  return out;
}

inline std::vector<std::uint8_t> base64_decode(std::string_view text) {
  auto value = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  if (text.size() % 4 != 0) throw protocol_error("base64 length is not a multiple of 4");
  std::vector<std::uint8_t> out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    const bool last = i + 4 == text.size();
    std::array<int, 4> v{};
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      const char c = text[i + k];
      if (c == '=' && last && k >= 2) {
        ++pad;
        v[k] = 0;
        continue;
      }
      if (pad > 0 || (v[k] = value(c)) < 0) throw protocol_error("invalid base64 data");
    }
    const std::uint32_t n = (std::uint32_t(v[0]) << 18) | (std::uint32_t(v[1]) << 12) | (std::uint32_t(v[2]) << 6) |
                            std::uint32_t(v[3]);
    out.push_back(static_cast<std::uint8_t>(n >> 16));
    if (pad < 2) out.push_back(static_cast<std::uint8_t>(n >> 8));
    if (pad < 1) out.push_back(static_cast<std::uint8_t>(n));
  }
  return out;
}

inline std::string_view endpoint(Role r) {
  switch (r) {
    case Role::Generate: return "/v1/generate";
    case Role::Localize: return "/v1/localize";
    case Role::Refine: return "/v1/refine";
  }
  return "";
}

inline std::string_view token_field(Role r) { return r == Role::Refine ? "prompt_tokens" : "tokens"; }

inline nlohmann::json request_to_json(const BackendRequest& req) {
  nlohmann::json j;
  j["image_png_base64"] = base64_encode(encode_png(req.image));
  if (req.tokens) j[std::string(token_field(req.role))] = *req.tokens;
  return j;
}

namespace detail {

inline std::vector<std::string> string_array(const nlohmann::json& j, std::string_view field) {
  const auto it = j.find(field);
  if (it == j.end() || !it->is_array()) throw protocol_error("field '" + std::string(field) + "' must be an array");
  std::vector<std::string> out;
  out.reserve(it->size());
  for (const auto& e : *it) {
    if (!e.is_string()) throw protocol_error("field '" + std::string(field) + "' must contain only strings");
    out.push_back(e.get<std::string>());
  }
  return out;
}

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<std::string_view> allowed) {
  for (const auto& [key, _] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw protocol_error("unexpected field '" + key + "'");
    }
  }
}

}  // namespace detail

inline BackendRequest request_from_json(Role role, const nlohmann::json& j) {
  if (!j.is_object()) throw protocol_error("request body must be a JSON object");
  const auto img = j.find("image_png_base64");
  if (img == j.end() || !img->is_string()) throw protocol_error("field 'image_png_base64' must be a string");
  std::optional<PixelGrid> image;
  try {
    image = decode_png(base64_decode(img->get<std::string>()));
  } catch (const ImageError& e) {
    throw protocol_error(std::string("image_png_base64 is not a PNG: ") + e.what());
  }
  if (role == Role::Generate) {
    detail::reject_unknown(j, {"image_png_base64"});
    return BackendRequest::generate(std::move(*image));
  }
  detail::reject_unknown(j, {"image_png_base64", token_field(role)});
  return {role, std::move(*image), detail::string_array(j, token_field(role))};
}

inline nlohmann::json response_to_json(const BackendResponse& resp) {
  switch (resp.role) {
    case Role::Generate: return {{"latex", resp.latex}};
    case Role::Localize: return {{"index", resp.index}};
    case Role::Refine: return {{"completion_tokens", resp.completion_tokens}};
  }
  return {};
}

inline BackendResponse response_from_json(Role role, const nlohmann::json& j) {
  if (!j.is_object()) throw protocol_error("response body must be a JSON object");
  switch (role) {
    case Role::Generate: {
      detail::reject_unknown(j, {"latex"});
      const auto it = j.find("latex");
      if (it == j.end() || !it->is_string()) throw protocol_error("field 'latex' must be a string");
      return BackendResponse::generated(it->get<std::string>());
    }
    case Role::Localize: {
      detail::reject_unknown(j, {"index"});
      const auto it = j.find("index");
      if (it == j.end() || !it->is_number_integer() || it->get<std::int64_t>() < 0) {
        throw protocol_error("field 'index' must be a non-negative integer");
      }
      return BackendResponse::localized(it->get<std::size_t>());
    }
    case Role::Refine:
      detail::reject_unknown(j, {"completion_tokens"});
      return BackendResponse::refined(detail::string_array(j, "completion_tokens"));
  }
  throw protocol_error("unknown role");
}

inline nlohmann::json error_to_json(const BackendError& e) {
  return {{"error", {{"kind", std::string(to_string(e.kind()))}, {"message", e.what()}}}};
}

inline int http_status(BackendError::Kind k) {
  switch (k) {
    case BackendError::Kind::Protocol: return 400;
    case BackendError::Kind::Unscripted: return 404;
    case BackendError::Kind::Model: return 500;
    case BackendError::Kind::Transport: return 502;
  }
  return 500;
}

/// Rebuilds a BackendError from an error body; anything unrecognizable is a
/// protocol violation.
inline BackendError error_from_json(std::string_view body) {
  nlohmann::json j = nlohmann::json::parse(body, nullptr, false);
  if (j.is_object() && j.contains("error") && j["error"].is_object()) {
    const auto& e = j["error"];
    const std::string kind = e.value("kind", "");
    const std::string msg = e.value("message", "");
    if (kind == "model") return {BackendError::Kind::Model, msg};
    if (kind == "unscripted") return {BackendError::Kind::Unscripted, msg};
    if (kind == "protocol") return {BackendError::Kind::Protocol, msg};
  }
  return protocol_error("unrecognized error body: " + std::string(body.substr(0, 200)));
}

// ---------------------------------------------------------------------------
// Backend interface

class Backend {
 public:
  virtual ~Backend() = default;

  /// Validates the request, dispatches it, and checks the reply against the
  /// request (role, index bounds).
  BackendResponse call(const BackendRequest& req) {
    validate_request(req);
    BackendResponse resp = dispatch(req);
    validate_response(req, resp);
    return resp;
  }

 protected:
  virtual BackendResponse dispatch(const BackendRequest& req) = 0;
};

// ---------------------------------------------------------------------------
// Mock backend
//
// Fixture: JSONL, one object per line
//   {"role": "generate"|"localize"|"refine",
//    "match": "<image digest>" | <n> | "*",
//    "response": {<role payload>} | {"error": "<message>"}}
// A request matches, in order: its image digest, then n == the 1-based count
// of calls seen so far for that role (including this one), then "*".

class FixtureError : public Error {
 public:
  using Error::Error;
};

class MockBackend final : public Backend {
 public:
  struct Entry {
    std::optional<BackendResponse> response;
    std::optional<std::string> error;
  };

  static MockBackend from_jsonl(std::string_view text) {
    MockBackend mock;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        mock.add_line(nlohmann::json::parse(line));
      } catch (const nlohmann::json::exception& e) {
        throw FixtureError("fixture line " + std::to_string(lineno) + ": " + e.what());
      } catch (const Error& e) {
        throw FixtureError("fixture line " + std::to_string(lineno) + ": " + e.what());
      }
    }
    return mock;
  }

  static MockBackend from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FixtureError("cannot open fixture " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return from_jsonl(ss.str());
  }

  MockBackend() = default;
  MockBackend(MockBackend&& other) noexcept : scripted_(std::move(other.scripted_)), seen_(other.seen_) {}

  std::size_t calls(Role r) const {
    std::lock_guard lock(mu_);
    return seen_[static_cast<std::size_t>(r)];
  }

  std::size_t total_calls() const {
    std::lock_guard lock(mu_);
    return seen_[0] + seen_[1] + seen_[2];
  }

 protected:
  BackendResponse dispatch(const BackendRequest& req) override {
    std::lock_guard lock(mu_);
    const std::size_t n = ++seen_[static_cast<std::size_t>(req.role)];
    const Entry* hit = find(req.role, image_digest(req.image));
    if (hit == nullptr) hit = find(req.role, std::to_string(n));
    if (hit == nullptr) hit = find(req.role, "*");
    if (hit == nullptr) {
      throw BackendError(BackendError::Kind::Unscripted,
                         "unscripted request: " + std::string(to_string(req.role)) + " call #" + std::to_string(n));
    }
    if (hit->error) throw BackendError(BackendError::Kind::Model, *hit->error);
    return *hit->response;
  }

 private:
  using Key = std::pair<Role, std::string>;

  const Entry* find(Role r, const std::string& key) const {
    const auto it = scripted_.find({r, key});
    return it == scripted_.end() ? nullptr : &it->second;
  }

  void add_line(const nlohmann::json& j) {
    if (!j.is_object()) throw FixtureError("entry must be a JSON object");
    detail::reject_unknown(j, {"role", "match", "response"});
    const auto role = j.contains("role") && j["role"].is_string() ? parse_role(j["role"].get<std::string>())
                                                                  : std::nullopt;
    if (!role) throw FixtureError("'role' must be generate, localize or refine");
    if (!j.contains("match")) throw FixtureError("missing 'match'");
    const auto& m = j["match"];
    std::string key;
    if (m.is_number_unsigned() && m.get<std::uint64_t>() >= 1) {
      key = std::to_string(m.get<std::uint64_t>());
    } else if (m.is_string() && (m.get<std::string>() == "*" || m.get<std::string>().starts_with("fnv1a64:"))) {
      key = m.get<std::string>();
    } else {
      throw FixtureError("'match' must be a positive call number, an image digest or \"*\"");
    }
    if (!j.contains("response") || !j["response"].is_object()) throw FixtureError("missing 'response' object");
    const auto& r = j["response"];
    Entry entry;
    if (r.contains("error")) {
      if (!r["error"].is_string() || r.size() != 1) throw FixtureError("error response must be {\"error\": string}");
      entry.error = r["error"].get<std::string>();
    } else {
      entry.response = response_from_json(*role, r);
    }
    if (!scripted_.emplace(Key{*role, key}, std::move(entry)).second) {
      throw FixtureError("duplicate fixture key (" + std::string(to_string(*role)) + ", " + key + ")");
    }
  }

  std::map<Key, Entry> scripted_;
  mutable std::mutex mu_;
  std::array<std::size_t, 3> seen_{};
};

}  // namespace latte
