#pragma once

// Scripted sessions: a timeline of audio, noise and text injections played
// into a fresh DuplexSession, under the virtual or the wall clock.
//
// Scenario file (JSON):
//   {
//     "name": "barge-in",
//     "clock": "virtual",                      // or "real"
//     "chunk_ms": 100,                          // audio pacing
//     "labels": {"q1": {"state_token": "<1>", "answer": "...", "tokens_per_second": 10}},
//     "config": { ... engine config sections ... },
//     "timeline": [
//       {"at": 0.5, "action": "audio", "label": "q1", "duration": 1.0},
//       {"at": 2.0, "action": "noise", "label": "n1", "duration": 0.6},
//       {"at": 3.0, "action": "text", "text": "what time is it"}
//     ],
//     "expect": {"answered": 2, "suppressed": 1, "interrupts": 1}
//   }
// Audio entries synthesize a tone unless "file" names a 16-bit mono WAV.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "duplex/config.hpp"
#include "duplex/messages.hpp"
#include "duplex/scheduler.hpp"

namespace duplex {

enum class InjectKind { Audio, Noise, Text };

struct TimelineEntry {
  double at = 0.0;  // seconds
  InjectKind kind = InjectKind::Audio;
  std::string label;  // audio/noise: label key; text: unused
  std::string text;
  std::optional<std::filesystem::path> file;
  double duration = 1.0;
  double frequency = 440.0;
  double amplitude = 0.3;  // fraction of full scale
};

struct Expectations {
  std::optional<std::int64_t> answered;
  std::optional<std::int64_t> suppressed;
  std::optional<std::int64_t> interrupts;
  std::optional<std::int64_t> completed;
  std::optional<std::vector<TurnId>> answered_turn_ids;
};

struct Scenario {
  std::string name = "scenario";
  bool virtual_clock = true;
  int chunk_ms = 100;
  double tail_s = 1.0;  // silence after the last injection
  Config config;        // backend.labels holds the merged label map
  std::vector<TimelineEntry> timeline;
  Expectations expect;
};

/// Throws PreconditionError on malformed scenarios, unsorted timelines and
/// audio injections without a label.
Scenario parse_scenario(const Json& j, const std::filesystem::path& base_dir = {});
Scenario load_scenario(const std::filesystem::path& path);

struct ScenarioReport {
  std::string name;
  scheduler::SchedulerStats stats;
  ConversationHistory history;
  std::vector<ServerMessage> messages;
  std::vector<std::string> trace;       // JSON lines
  std::vector<std::string> violations;  // invariants and stream contiguity
  std::vector<std::string> diffs;       // unmet expectations, "key: expected X, observed Y"

  bool passed() const { return violations.empty() && diffs.empty(); }
  Json to_json() const;
};

struct RunOptions {
  std::optional<bool> virtual_clock;  // overrides the scenario's clock
};

ScenarioReport run_scenario(const Scenario& scenario, const RunOptions& options = {});

/// Sine tone, `amplitude` in [0, 1] of full scale.
std::vector<vad::Sample> synthesize_tone(double duration_s, double frequency_hz, double amplitude, int sample_rate);
/// Reads a PCM16 mono WAV file. Throws PreconditionError on other formats or
/// a sample rate different from `expected_rate`.
std::vector<vad::Sample> read_wav(const std::filesystem::path& path, int expected_rate);

}  // namespace duplex
