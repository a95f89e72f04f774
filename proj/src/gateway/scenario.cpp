#include "duplex/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "duplex/driver.hpp"

namespace duplex {

namespace {

InjectKind parse_inject_kind(const std::string& s) {
  if (s == "audio") return InjectKind::Audio;
  if (s == "noise") return InjectKind::Noise;
  if (s == "text") return InjectKind::Text;
  throw PreconditionError("unknown timeline action '" + s + "'");
}

std::uint32_t le32(const char* p) {
  const auto* u = reinterpret_cast<const unsigned char*>(p);
  return u[0] | (u[1] << 8) | (u[2] << 16) | (static_cast<std::uint32_t>(u[3]) << 24);
}

std::uint16_t le16(const char* p) {
  const auto* u = reinterpret_cast<const unsigned char*>(p);
  return static_cast<std::uint16_t>(u[0] | (u[1] << 8));
}

struct LabeledRange {
  std::int64_t begin;
  std::int64_t end;
  std::string label;
};

}  // namespace

std::vector<vad::Sample> synthesize_tone(double duration_s, double frequency_hz, double amplitude, int sample_rate) {
  if (!(duration_s >= 0)) throw PreconditionError("tone duration must be non-negative");
  const auto n = static_cast<std::size_t>(std::llround(duration_s * sample_rate));
  const double peak = std::clamp(amplitude, 0.0, 1.0) * 32767.0;
  std::vector<vad::Sample> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double v = peak * std::sin(2.0 * std::numbers::pi * frequency_hz * static_cast<double>(i) / sample_rate);
    out[i] = static_cast<vad::Sample>(std::lround(v));
  }
  return out;
}

std::vector<vad::Sample> read_wav(const std::filesystem::path& path, int expected_rate) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PreconditionError("cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = path.string() + ": ";
  if (bytes.size() < 12 || bytes.compare(0, 4, "RIFF") != 0 || bytes.compare(8, 4, "WAVE") != 0) {
    throw PreconditionError(where + "not a RIFF/WAVE file");
  }
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::string id = bytes.substr(pos, 4);
    const std::uint32_t size = le32(bytes.data() + pos + 4);
    const std::size_t body = pos + 8;
    if (body + size > bytes.size()) throw PreconditionError(where + "truncated chunk '" + id + "'");
    if (id == "fmt ") {
      if (size < 16) throw PreconditionError(where + "short fmt chunk");
      const auto format = le16(bytes.data() + body);
      const auto channels = le16(bytes.data() + body + 2);
      const auto rate = le32(bytes.data() + body + 4);
      const auto bits = le16(bytes.data() + body + 14);
      if (format != 1 || channels != 1 || bits != 16) throw PreconditionError(where + "expected 16-bit mono PCM");
      if (static_cast<int>(rate) != expected_rate) {
        throw PreconditionError(where + "sample rate " + std::to_string(rate) + ", expected " +
                                std::to_string(expected_rate));
      }
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw PreconditionError(where + "data before fmt");
      return vad::decode_pcm16le(std::string_view(bytes).substr(body, size & ~1u));
    }
    pos = body + size + (size & 1u);
  }
  throw PreconditionError(where + "no data chunk");
}

Scenario parse_scenario(const Json& j, const std::filesystem::path& base_dir) {
  if (!j.is_object()) throw PreconditionError("scenario must be a JSON object");
  Scenario s;
  try {
    s.name = j.value("name", s.name);
    const std::string clock = j.value("clock", std::string("virtual"));
    if (clock != "virtual" && clock != "real") throw PreconditionError("clock must be 'virtual' or 'real'");
    s.virtual_clock = clock == "virtual";
    s.chunk_ms = j.value("chunk_ms", s.chunk_ms);
    s.tail_s = j.value("tail_s", s.tail_s);
    if (s.chunk_ms <= 0) throw PreconditionError("chunk_ms must be positive");
    if (!(s.tail_s >= 0)) throw PreconditionError("tail_s must be non-negative");
    if (j.contains("config")) s.config = config_from_json(j["config"]);
    if (j.contains("labels")) {
      for (auto& [key, label] : labels_from_json(j["labels"])) s.config.backend.labels[key] = label;
    }

    double last_at = 0.0;
    int auto_noise = 0;
    for (const Json& e : j.value("timeline", Json::array())) {
      TimelineEntry entry;
      entry.at = e.at("at").get<double>();
      if (!(entry.at >= 0)) throw PreconditionError("timeline 'at' must be non-negative");
      if (entry.at < last_at) throw PreconditionError("timeline is not sorted by 'at'");
      last_at = entry.at;
      entry.kind = parse_inject_kind(e.at("action").get<std::string>());
      entry.label = e.value("label", std::string{});
      entry.text = e.value("text", std::string{});
      entry.duration = e.value("duration", entry.duration);
      entry.frequency = e.value("frequency", entry.frequency);
      entry.amplitude = e.value("amplitude", entry.amplitude);
      if (e.contains("file")) {
        std::filesystem::path file = e["file"].get<std::string>();
        entry.file = file.is_absolute() ? file : base_dir / file;
      }
      if (!(entry.duration > 0)) throw PreconditionError("timeline duration must be positive");
      if (entry.kind == InjectKind::Noise && entry.label.empty()) entry.label = "noise-" + std::to_string(++auto_noise);
      if (entry.kind == InjectKind::Noise && !s.config.backend.labels.contains(entry.label)) {
        s.config.backend.labels[entry.label] = backend::MockLabel{StateToken::NoisyAudio, "", 10.0};
      }
      if (entry.kind == InjectKind::Audio && entry.label.empty()) {
        throw PreconditionError("audio injection at " + std::to_string(entry.at) + "s has no label");
      }
      if (entry.kind == InjectKind::Text && entry.text.empty()) throw PreconditionError("text injection without text");
      s.timeline.push_back(std::move(entry));
    }

    if (s.config.backend.mode == BackendMode::Mock && !s.config.backend.mock.fallback) {
      for (const auto& entry : s.timeline) {
        const std::string& key = entry.kind == InjectKind::Text ? entry.text : entry.label;
        if (!s.config.backend.labels.contains(key)) throw PreconditionError("no label for injection '" + key + "'");
      }
    }

    if (j.contains("expect")) {
      const Json& x = j["expect"];
      auto opt = [&](const char* key) -> std::optional<std::int64_t> {
        if (!x.contains(key)) return std::nullopt;
        return x[key].get<std::int64_t>();
      };
      s.expect.answered = opt("answered");
      s.expect.suppressed = opt("suppressed");
      s.expect.interrupts = opt("interrupts");
      s.expect.completed = opt("completed");
      if (x.contains("answered_turn_ids")) s.expect.answered_turn_ids = x["answered_turn_ids"].get<std::vector<TurnId>>();
    }
  } catch (const Json::exception& e) {
    throw PreconditionError("scenario: " + std::string(e.what()));
  }
  return s;
}

Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw PreconditionError("cannot open scenario " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::exception& e) {
    throw PreconditionError("scenario " + path.string() + ": " + e.what());
  }
  return parse_scenario(j, path.parent_path());
}

Json ScenarioReport::to_json() const {
  return Json{{"name", name},
              {"passed", passed()},
              {"answered", stats.answered},
              {"suppressed", stats.suppressed},
              {"interrupts", stats.interrupts},
              {"completed", stats.completed},
              {"stats", scheduler::to_json(stats)},
              {"history", history},
              {"violations", violations},
              {"diffs", diffs}};
}

namespace {

template <class Exec>
void schedule_timeline(Exec& executor, DuplexSession& session, const Scenario& scenario,
                       const std::vector<vad::Sample>& pcm, const std::vector<LabeledRange>& ranges, int rate,
                       bool& ended) {
  executor.schedule_at(Micros(0), [&session] { session.start(); });

  const auto chunk = static_cast<std::int64_t>(rate) * scenario.chunk_ms / 1000;
  const auto total = static_cast<std::int64_t>(pcm.size());
  std::size_t next_text = 0;
  std::vector<const TimelineEntry*> texts;
  for (const auto& e : scenario.timeline) {
    if (e.kind == InjectKind::Text) texts.push_back(&e);
  }

  auto schedule_texts_until = [&](Micros limit) {
    while (next_text < texts.size()) {
      const Micros at(std::llround(texts[next_text]->at * 1e6));
      if (at > limit) break;
      const std::string text = texts[next_text]->text;
      executor.schedule_at(at, [&session, text] { session.push_text(text); });
      ++next_text;
    }
  };

  Micros end_time(0);
  for (std::int64_t begin = 0; begin < total; begin += chunk) {
    const std::int64_t end = std::min(begin + chunk, total);
    const Micros at(end * 1'000'000 / rate);
    schedule_texts_until(at - Micros(1));
    // Split at label boundaries so every piece carries a single label.
    std::vector<std::int64_t> cuts{begin, end};
    for (const auto& r : ranges) {
      if (r.begin > begin && r.begin < end) cuts.push_back(r.begin);
      if (r.end > begin && r.end < end) cuts.push_back(r.end);
    }
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
    std::vector<std::pair<std::span<const vad::Sample>, std::string>> pieces;
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
      std::string label;
      for (const auto& r : ranges) {
        if (r.begin <= cuts[i] && cuts[i] < r.end) {
          label = r.label;
          break;
        }
      }
      pieces.emplace_back(std::span<const vad::Sample>(pcm).subspan(cuts[i], cuts[i + 1] - cuts[i]), label);
    }
    executor.schedule_at(at, [&session, pieces = std::move(pieces)] {
      for (const auto& [span, label] : pieces) session.push_audio(span, label);
    });
    end_time = at;
  }
  schedule_texts_until(Micros::max());
  executor.schedule_at(end_time, [&session, &ended] {
    session.flush_audio();
    ended = true;
  });
}

}  // namespace

ScenarioReport run_scenario(const Scenario& scenario, const RunOptions& options) {
  const bool virtual_clock = options.virtual_clock.value_or(scenario.virtual_clock);
  if (virtual_clock && scenario.config.backend.mode != BackendMode::Mock) {
    throw PreconditionError("the virtual clock needs the mock backend");
  }
  const int rate = scenario.config.vad.sample_rate;

  // Lay the injections out on one continuous PCM track.
  double horizon = 0.0;
  for (const auto& e : scenario.timeline) {
    horizon = std::max(horizon, e.at + (e.kind == InjectKind::Text ? 0.0 : e.duration));
  }
  std::vector<vad::Sample> track(static_cast<std::size_t>(std::ceil((horizon + scenario.tail_s) * rate)), 0);
  std::vector<LabeledRange> ranges;
  for (const auto& e : scenario.timeline) {
    if (e.kind == InjectKind::Text) continue;
    const std::vector<vad::Sample> clip =
        e.file ? read_wav(*e.file, rate) : synthesize_tone(e.duration, e.frequency, e.amplitude, rate);
    const auto offset = static_cast<std::size_t>(std::llround(e.at * rate));
    if (offset + clip.size() > track.size()) track.resize(offset + clip.size() + static_cast<std::size_t>(scenario.tail_s * rate), 0);
    for (std::size_t i = 0; i < clip.size(); ++i) {
      const int mixed = track[offset + i] + clip[i];
      track[offset + i] = static_cast<vad::Sample>(std::clamp(mixed, -32768, 32767));
    }
    ranges.push_back({static_cast<std::int64_t>(offset), static_cast<std::int64_t>(offset + clip.size()), e.label});
  }

  ScenarioReport report;
  report.name = scenario.name;
  SessionHooks hooks;
  hooks.on_message = [&report](const ServerMessage& m) { report.messages.push_back(m); };
  hooks.on_trace = [&report](const Json& record) { report.trace.push_back(record.dump()); };
  bool ended = false;

  auto finish = [&](const DuplexSession& session) {
    report.stats = session.scheduler().stats();
    report.history = session.scheduler().history();
    report.violations = session.violations();
    if (!session.quiescent()) report.violations.push_back("session did not settle");
  };

  if (virtual_clock) {
    VirtualExecutor executor;
    DuplexSession session(executor, "sim", scenario.config, make_backends(scenario.config, executor), hooks);
    schedule_timeline(executor, session, scenario, track, ranges, rate, ended);
    executor.run();
    finish(session);
  } else {
    RealExecutor executor;
    DuplexSession session(executor, "sim", scenario.config, make_backends(scenario.config, executor), hooks);
    schedule_timeline(executor, session, scenario, track, ranges, rate, ended);
    executor.run_until_idle([&] { return ended && session.quiescent(); });
    finish(session);
  }

  auto compare = [&](const char* key, const std::optional<std::int64_t>& expected, std::int64_t observed) {
    if (expected && *expected != observed) {
      report.diffs.push_back(std::string(key) + ": expected " + std::to_string(*expected) + ", observed " +
                             std::to_string(observed));
    }
  };
  compare("answered", scenario.expect.answered, report.stats.answered);
  compare("suppressed", scenario.expect.suppressed, report.stats.suppressed);
  compare("interrupts", scenario.expect.interrupts, report.stats.interrupts);
  compare("completed", scenario.expect.completed, report.stats.completed);
  if (scenario.expect.answered_turn_ids && *scenario.expect.answered_turn_ids != report.stats.answered_turn_ids) {
    report.diffs.push_back("answered_turn_ids: expected " + Json(*scenario.expect.answered_turn_ids).dump() +
                           ", observed " + Json(report.stats.answered_turn_ids).dump());
  }
  return report;
}

}  // namespace duplex
