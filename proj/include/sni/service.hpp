#pragma once

// JSON editing service over one loaded generator.
//
//   POST /session                         {seed?}
//   GET  /session/{id}
//   POST /session/{id}/edit               {target, cells?, scale?, op, args?}
//   POST /session/{id}/interpolate-stream {target, cells?, scale?, other, steps}
//   GET  /session/{id}/undo
//   GET  /checkpoint/info
//
// target: "cells" | "scale:k" | "scale" | "global" | "style" | "all" (stream only)
// op:     "resample" {seed?} | "set" {values} | "interp" {other, t}
// other:  {"seed": n} | {"latent": <latent json>}
//
// Images are base64 PNG. Rendering uses a fixed noise seed, so an image is a
// function of the checkpoint and the latent alone.

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stop_token>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sni/checkpoint.hpp"
#include "sni/latent.hpp"

namespace sni {

struct ServiceOptions {
  std::size_t history_limit = 100;
  std::uint64_t noise_seed = 0;
  int max_stream_steps = 256;
};

struct ServiceResponse {
  int status = 200;
  nlohmann::json body;
};

class EditService {
 public:
  /// `snapshot` may be empty; every endpoint then answers 503.
  explicit EditService(std::shared_ptr<const GeneratorSnapshot> snapshot, ServiceOptions options = {});

  ServiceResponse dispatch(const std::string& method, const std::string& path, const std::string& body);

  std::size_t session_count() const;

 private:
  struct Session {
    std::mutex mutex;
    StructuredLatent latent;
    std::vector<StructuredLatent> history;
  };

  ServiceResponse create_session(const nlohmann::json& body);
  ServiceResponse get_session(Session& s, const std::string& id);
  ServiceResponse edit(Session& s, const nlohmann::json& body);
  ServiceResponse interpolate_stream(Session& s, const nlohmann::json& body);
  ServiceResponse undo(Session& s);
  ServiceResponse info() const;

  nlohmann::json render(const StructuredLatent& latent) const;
  std::shared_ptr<Session> find(const std::string& id) const;

  std::shared_ptr<const GeneratorSnapshot> snapshot_;
  ServiceOptions options_;
  mutable std::mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::uint64_t next_session_ = 1;
};

/// Structure description handed to clients for the grid overlay.
nlohmann::json structure_description(const NoiseStructure& structure);

struct HttpOptions {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  bool cors = false;
  /// Called with the bound port before requests are accepted.
  std::function<void(int port)> on_listening;
};

/// Blocks serving `service` over HTTP until `stop` is requested (or forever
/// without a stop source). Returns false when the socket cannot be bound.
bool serve_http(EditService& service, const HttpOptions& options, std::stop_token stop = {});

}  // namespace sni
