#pragma once

// Client <-> server wire messages (newline-delimited JSON) and the stream
// checker that enforces per-turn answer contiguity.

#include <array>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "duplex/session.hpp"
#include "duplex/vad.hpp"

namespace duplex {

enum class SlotId { A = 0, B = 1 };
enum class SlotRole { Generator, Monitor };
std::string_view to_string(SlotId s);
std::string_view to_string(SlotRole r);
SlotId parse_slot_id(std::string_view text);
SlotRole parse_slot_role(std::string_view text);
inline SlotId other(SlotId s) { return s == SlotId::A ? SlotId::B : SlotId::A; }

// --- server -> client ------------------------------------------------------

enum class ClientState { Listening, Classifying, Generating, Suppressed, Interrupted, Swap };
std::string_view to_string(ClientState s);
ClientState parse_client_state(std::string_view text);

struct StateEvent {
  ClientState state = ClientState::Listening;
  std::optional<TurnId> turn_id;           // generating, interrupted
  std::optional<std::array<SlotRole, 2>> roles;  // swap: roles of A and B after the swap
  std::optional<std::string> channel;      // generating: "speech" or "text"
  std::optional<std::string> utterance;    // classifying, suppressed
  bool operator==(const StateEvent&) const = default;
};

struct AnswerToken {
  std::string text;
  TurnId turn_id = 0;
  bool operator==(const AnswerToken&) const = default;
};

struct AnswerDone {
  TurnId turn_id = 0;
  bool operator==(const AnswerDone&) const = default;
};

struct ErrorMessage {
  std::string code;
  std::string message;
  bool operator==(const ErrorMessage&) const = default;
};

using ServerMessage = std::variant<StateEvent, AnswerToken, AnswerDone, ErrorMessage>;

Json to_wire(const ServerMessage& msg);
/// Throws PreconditionError on frames that are not server messages.
ServerMessage parse_server_message(const Json& frame);

/// Validates a server->client stream: an answer turn opens with a
/// `generating` state event, its tokens are contiguous, and it ends with
/// exactly one AnswerDone or `interrupted` state event.
class ServerStreamChecker {
 public:
  /// Empty when legal, else the violation.
  std::string check(const ServerMessage& msg);

 private:
  std::optional<TurnId> active_;
  std::set<TurnId> opened_;
  std::set<TurnId> closed_;
};

// --- client -> server ------------------------------------------------------

struct Hello {
  Json config = Json::object();
};
struct AudioChunk {
  std::vector<vad::Sample> pcm;
  int sample_rate = 16000;
  std::string utterance;  // optional label hint for mock backends
};
struct TextQueryMessage {
  std::string text;
};
struct Bye {};

using ClientMessage = std::variant<Hello, AudioChunk, TextQueryMessage, Bye>;

/// Error codes carried by ProtocolError.
inline constexpr std::string_view kBadFrame = "bad_frame";
inline constexpr std::string_view kBadAudio = "bad_audio";

class ProtocolError : public std::runtime_error {
 public:
  ProtocolError(std::string code, const std::string& message) : std::runtime_error(message), code_(std::move(code)) {}
  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

/// Parses one line. Throws ProtocolError(bad_frame | bad_audio).
ClientMessage parse_client_message(std::string_view line);
Json to_wire(const ClientMessage& msg);

}  // namespace duplex
