#include "duplex/config.hpp"

#include <cstdlib>
#include <fstream>

namespace duplex {

namespace {

Micros millis(const Json& j, const char* key, Micros fallback) {
  if (!j.contains(key)) return fallback;
  const double ms = j.at(key).get<double>();
  if (!(ms >= 0)) throw PreconditionError(std::string(key) + " must be non-negative");
  return Micros(static_cast<std::int64_t>(ms * 1000.0));
}

double to_ms(Micros m) { return static_cast<double>(m.count()) / 1000.0; }

}  // namespace

backend::LabelMap labels_from_json(const Json& j) {
  if (!j.is_object()) throw PreconditionError("labels must be an object");
  backend::LabelMap labels;
  for (const auto& [key, value] : j.items()) labels[key] = value.get<backend::MockLabel>();
  return labels;
}

Config config_from_json(const Json& j) {
  if (!j.is_object()) throw PreconditionError("config must be a JSON object");
  Config c;
  try {
    if (j.contains("gateway")) {
      const Json& g = j["gateway"];
      c.gateway.host = g.value("host", c.gateway.host);
      c.gateway.port = g.value("port", c.gateway.port);
      c.gateway.max_sessions = g.value("max_sessions", c.gateway.max_sessions);
      c.gateway.hello_timeout = millis(g, "hello_timeout_ms", c.gateway.hello_timeout);
      c.gateway.drain_timeout = millis(g, "drain_timeout_ms", c.gateway.drain_timeout);
    }
    if (j.contains("vad")) c.vad = j["vad"].get<vad::VadConfig>();
    if (j.contains("scheduler")) {
      const auto cap = j["scheduler"].value("queue_cap", static_cast<std::int64_t>(c.scheduler.queue_cap));
      if (cap < 1) throw PreconditionError("scheduler.queue_cap must be at least 1");
      c.scheduler.queue_cap = static_cast<std::size_t>(cap);
    }
    if (j.contains("backend")) {
      const Json& b = j["backend"];
      const std::string mode = b.value("mode", std::string("mock"));
      if (mode == "mock") {
        c.backend.mode = BackendMode::Mock;
      } else if (mode == "remote") {
        c.backend.mode = BackendMode::Remote;
      } else {
        throw PreconditionError("backend.mode must be 'mock' or 'remote', got '" + mode + "'");
      }
      if (b.contains("endpoint")) c.backend.endpoints = {b["endpoint"].get<std::string>()};
      if (b.contains("endpoints")) c.backend.endpoints = b["endpoints"].get<std::vector<std::string>>();
      c.backend.timeout = millis(b, "timeout_ms", c.backend.timeout);
      if (b.contains("labels")) c.backend.labels = labels_from_json(b["labels"]);
      c.backend.mock.classify_latency = millis(b, "classify_latency_ms", c.backend.mock.classify_latency);
      if (b.contains("fallback") && !b["fallback"].is_null()) {
        c.backend.mock.fallback = b["fallback"].get<backend::MockLabel>();
      }
    }
    if (j.contains("trace")) {
      c.trace.enabled = j["trace"].value("enabled", c.trace.enabled);
      c.trace.directory = j["trace"].value("directory", c.trace.directory.string());
    }
  } catch (const Json::exception& e) {
    throw PreconditionError(std::string("config: ") + e.what());
  }

  if (c.gateway.port < 0 || c.gateway.port > 65535) throw PreconditionError("gateway.port out of range");
  if (c.gateway.max_sessions < 1) throw PreconditionError("gateway.max_sessions must be at least 1");
  if (c.backend.mode == BackendMode::Remote && (c.backend.endpoints.empty() || c.backend.endpoints.size() > 2)) {
    throw PreconditionError("remote backend needs one or two endpoints");
  }
  return c;
}

Json to_json(const Config& c) {
  Json labels = Json::object();
  for (const auto& [key, label] : c.backend.labels) labels[key] = label;
  Json backend{{"mode", c.backend.mode == BackendMode::Mock ? "mock" : "remote"},
               {"endpoints", c.backend.endpoints},
               {"timeout_ms", to_ms(c.backend.timeout)},
               {"classify_latency_ms", to_ms(c.backend.mock.classify_latency)},
               {"labels", labels}};
  backend["fallback"] = c.backend.mock.fallback ? Json(*c.backend.mock.fallback) : Json(nullptr);
  return Json{{"gateway",
               {{"host", c.gateway.host},
                {"port", c.gateway.port},
                {"max_sessions", c.gateway.max_sessions},
                {"hello_timeout_ms", to_ms(c.gateway.hello_timeout)},
                {"drain_timeout_ms", to_ms(c.gateway.drain_timeout)}}},
              {"vad", c.vad},
              {"scheduler", {{"queue_cap", c.scheduler.queue_cap}}},
              {"backend", backend},
              {"trace", {{"enabled", c.trace.enabled}, {"directory", c.trace.directory.string()}}}};
}

Config load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw PreconditionError("cannot open config " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::exception& e) {
    throw PreconditionError("config " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

void apply_env_overrides(Config& config) {
  if (const char* port = std::getenv("DUPLEX_PORT"); port && *port) {
    char* end = nullptr;
    const long value = std::strtol(port, &end, 10);
    if (*end != '\0' || value < 0 || value > 65535) {
      throw PreconditionError(std::string("DUPLEX_PORT is not a port number: ") + port);
    }
    config.gateway.port = static_cast<int>(value);
  }
}

std::optional<std::filesystem::path> resolve_config_path(const std::optional<std::string>& explicit_path) {
  if (explicit_path && !explicit_path->empty()) return std::filesystem::path(*explicit_path);
  if (const char* env = std::getenv("DUPLEX_CONFIG"); env && *env) return std::filesystem::path(env);
  return std::nullopt;
}

}  // namespace duplex
