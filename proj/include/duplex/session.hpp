#pragma once

// Conversation domain types shared by every engine component: state tokens,
// turns, conversation history and the per-modality system prompts.

#include <cstdint>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace duplex {

using Json = nlohmann::json;
using TurnId = std::int64_t;
/// Microseconds since session start. Virtual or wall, depending on the clock in use.
using Timestamp = std::int64_t;

/// Thrown when an operation's input violates its documented precondition.
class PreconditionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Query-type prefix emitted by the model ahead of an answer.
enum class StateToken {
  QueryAudio,  // "<1>": audio directed at the assistant
  NoisyAudio,  // "<2>": audio that must not be answered; doubles as end-of-sequence
  QueryText,   // "<3>": typed question
};

std::string_view render(StateToken token);
/// Inverse of render(). Throws PreconditionError on anything but "<1>", "<2>", "<3>".
StateToken parse_state_token(std::string_view text);
inline bool is_query(StateToken t) { return t != StateToken::NoisyAudio; }

enum class Modality { Image, Video, Audio, Text };
std::string_view to_string(Modality m);
Modality parse_modality(std::string_view text);

enum class TurnSource { User, Assistant };
std::string_view to_string(TurnSource s);
TurnSource parse_turn_source(std::string_view text);

/// Marker appended to the text of an answer that was cut off by a newer query.
inline constexpr std::string_view kInterruptedMarker = " [interrupted]";

struct Turn {
  TurnId turn_id = 0;
  TurnSource source = TurnSource::User;
  std::optional<StateToken> state_token;  // user turns only
  std::vector<std::string> content;       // opaque token pieces; text is their concatenation
  std::set<Modality> modalities;
  bool completed = true;
  Timestamp wall_time = 0;

  std::string text() const;
  bool operator==(const Turn&) const = default;
};

struct ConversationHistory {
  std::vector<Turn> turns;
  std::string system_prompt;

  std::size_t size() const { return turns.size(); }
  bool empty() const { return turns.empty(); }
  TurnId last_turn_id() const { return turns.empty() ? 0 : turns.back().turn_id; }
  bool operator==(const ConversationHistory&) const = default;
};

enum class PromptKind { ImageData, VideoData, TextData };
std::string_view to_string(PromptKind k);

struct PromptTemplate {
  PromptKind modality_key = PromptKind::TextData;
  std::string_view body;
};

/// Picks the system prompt for a turn's modality set. Image and Video may not
/// both be present.
PromptTemplate select_system_prompt(const std::set<Modality>& modalities);

/// Returns `history` with `turn` appended. turn_id must exceed every existing id.
ConversationHistory append_turn(ConversationHistory history, Turn turn);

/// Records the partial output of an interrupted answer as an incomplete
/// Assistant turn with id `turn_id`. An empty partial leaves the history
/// unchanged. Any earlier incomplete turn is sealed first (see seal_incomplete).
ConversationHistory consolidate(ConversationHistory history,
                                const std::vector<std::string>& interrupted_partial,
                                TurnId turn_id, Timestamp wall_time = 0);
/// Overload that assigns the next free turn id.
ConversationHistory consolidate(ConversationHistory history,
                                const std::vector<std::string>& interrupted_partial);

/// Folds the "[interrupted]" marker into the content of the pending incomplete
/// turn, if any, and marks it completed. Rendering is unchanged by sealing.
void seal_incomplete(ConversationHistory& history);

/// Empty string when well-formed, otherwise a description of the first violation.
std::string validate(const ConversationHistory& history);

/// Plain-text prompt for a backend: system prompt, prior turns, then `query`.
std::string render_prompt(const ConversationHistory& history, const Turn* query = nullptr);

void to_json(Json& j, StateToken t);
void from_json(const Json& j, StateToken& t);
void to_json(Json& j, Modality m);
void from_json(const Json& j, Modality& m);
void to_json(Json& j, TurnSource s);
void from_json(const Json& j, TurnSource& s);
void to_json(Json& j, const Turn& t);
void from_json(const Json& j, Turn& t);
void to_json(Json& j, const ConversationHistory& h);
void from_json(const Json& j, ConversationHistory& h);
void to_json(Json& j, const PromptTemplate& p);

}  // namespace duplex
