#pragma once

// Engine configuration: a JSON file with sections gateway, vad, scheduler,
// backend and trace. Every field is optional and falls back to the default
// below. DUPLEX_CONFIG names the config file when --config is absent and
// DUPLEX_PORT overrides gateway.port.

#include <array>
#include <filesystem>
#include <optional>
#include <string>

#include "duplex/backend.hpp"
#include "duplex/vad.hpp"

namespace duplex {

struct GatewayConfig {
  std::string host = "127.0.0.1";
  int port = 8765;
  int max_sessions = 64;
  Micros hello_timeout{10'000'000};
  Micros drain_timeout{5'000'000};  // per session, after Bye or disconnect
};

struct SchedulerConfig {
  std::size_t queue_cap = 4;
};

enum class BackendMode { Mock, Remote };

struct BackendConfig {
  BackendMode mode = BackendMode::Mock;
  /// Remote endpoints for slots A and B ("host:port"). One entry serves both.
  std::vector<std::string> endpoints;
  Micros timeout{30'000'000};
  backend::LabelMap labels;
  backend::MockOptions mock;
};

struct TraceConfig {
  bool enabled = false;
  std::filesystem::path directory = "traces";
};

struct Config {
  GatewayConfig gateway;
  vad::VadConfig vad;
  SchedulerConfig scheduler;
  BackendConfig backend;
  TraceConfig trace;
};

/// Throws PreconditionError on invalid values or unknown backend modes.
Config config_from_json(const Json& j);
Json to_json(const Config& c);
/// Reads and parses a config file. Throws PreconditionError on I/O or parse failure.
Config load_config(const std::filesystem::path& path);

/// Applies DUPLEX_PORT if set. Throws PreconditionError when it is not a port number.
void apply_env_overrides(Config& config);
/// `explicit_path` if given, else DUPLEX_CONFIG, else nothing.
std::optional<std::filesystem::path> resolve_config_path(const std::optional<std::string>& explicit_path);

/// Label map from a JSON object {"key": {"state_token": "<1>", "answer": "...", ...}}.
backend::LabelMap labels_from_json(const Json& j);

}  // namespace duplex
