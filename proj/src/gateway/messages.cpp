#include "duplex/messages.hpp"

#include "duplex/base64.hpp"

namespace duplex {

std::string_view to_string(SlotId s) { return s == SlotId::A ? "A" : "B"; }
std::string_view to_string(SlotRole r) { return r == SlotRole::Generator ? "Generator" : "Monitor"; }

SlotId parse_slot_id(std::string_view text) {
  if (text == "A") return SlotId::A;
  if (text == "B") return SlotId::B;
  throw PreconditionError("unknown slot: " + std::string(text));
}

SlotRole parse_slot_role(std::string_view text) {
  if (text == "Generator") return SlotRole::Generator;
  if (text == "Monitor") return SlotRole::Monitor;
  throw PreconditionError("unknown role: " + std::string(text));
}

std::string_view to_string(ClientState s) {
  switch (s) {
    case ClientState::Listening: return "listening";
    case ClientState::Classifying: return "classifying";
    case ClientState::Generating: return "generating";
    case ClientState::Suppressed: return "suppressed";
    case ClientState::Interrupted: return "interrupted";
    case ClientState::Swap: return "swap";
  }
  return "?";
}

ClientState parse_client_state(std::string_view text) {
  for (auto s : {ClientState::Listening, ClientState::Classifying, ClientState::Generating, ClientState::Suppressed,
                 ClientState::Interrupted, ClientState::Swap}) {
    if (to_string(s) == text) return s;
  }
  throw PreconditionError("unknown state: " + std::string(text));
}

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

}  // namespace

Json to_wire(const ServerMessage& msg) {
  return std::visit(
      Overloaded{
          [](const StateEvent& e) {
            Json j{{"type", "state_event"}, {"state", std::string(to_string(e.state))}};
            if (e.turn_id) j["turn_id"] = *e.turn_id;
            if (e.roles) {
              j["roles"] = Json{{"A", std::string(to_string((*e.roles)[0]))},
                                {"B", std::string(to_string((*e.roles)[1]))}};
            }
            if (e.channel) j["channel"] = *e.channel;
            if (e.utterance) j["utterance"] = *e.utterance;
            return j;
          },
          [](const AnswerToken& t) { return Json{{"type", "answer_token"}, {"text", t.text}, {"turn_id", t.turn_id}}; },
          [](const AnswerDone& d) { return Json{{"type", "answer_done"}, {"turn_id", d.turn_id}}; },
          [](const ErrorMessage& e) { return Json{{"type", "error"}, {"code", e.code}, {"message", e.message}}; },
      },
      msg);
}

ServerMessage parse_server_message(const Json& frame) {
  const auto type = frame.at("type").get<std::string>();
  if (type == "state_event") {
    StateEvent e;
    e.state = parse_client_state(frame.at("state").get<std::string>());
    if (frame.contains("turn_id")) e.turn_id = frame["turn_id"].get<TurnId>();
    if (frame.contains("roles")) {
      e.roles = std::array<SlotRole, 2>{parse_slot_role(frame["roles"].at("A").get<std::string>()),
                                        parse_slot_role(frame["roles"].at("B").get<std::string>())};
    }
    if (frame.contains("channel")) e.channel = frame["channel"].get<std::string>();
    if (frame.contains("utterance")) e.utterance = frame["utterance"].get<std::string>();
    return e;
  }
  if (type == "answer_token") return AnswerToken{frame.at("text").get<std::string>(), frame.at("turn_id").get<TurnId>()};
  if (type == "answer_done") return AnswerDone{frame.at("turn_id").get<TurnId>()};
  if (type == "error") return ErrorMessage{frame.at("code").get<std::string>(), frame.value("message", std::string{})};
  throw PreconditionError("unknown server message type '" + type + "'");
}

std::string ServerStreamChecker::check(const ServerMessage& msg) {
  if (const auto* tok = std::get_if<AnswerToken>(&msg)) {
    const std::string turn = std::to_string(tok->turn_id);
    if (closed_.contains(tok->turn_id)) return "answer token for closed turn " + turn;
    if (!opened_.contains(tok->turn_id)) return "answer token before the generating state event of turn " + turn;
    if (active_ && *active_ != tok->turn_id) {
      return "answer token for turn " + turn + " while turn " + std::to_string(*active_) + " is still streaming";
    }
    active_ = tok->turn_id;
    return {};
  }
  if (const auto* done = std::get_if<AnswerDone>(&msg)) {
    const std::string turn = std::to_string(done->turn_id);
    if (closed_.contains(done->turn_id)) return "turn " + turn + " closed twice";
    if (!opened_.contains(done->turn_id)) return "answer_done before the generating state event of turn " + turn;
    if (active_ && *active_ != done->turn_id) {
      return "answer_done for turn " + turn + " while turn " + std::to_string(*active_) + " is streaming";
    }
    closed_.insert(done->turn_id);
    active_.reset();
    return {};
  }
  const auto* ev = std::get_if<StateEvent>(&msg);
  if (!ev || !ev->turn_id) return {};
  const TurnId id = *ev->turn_id;
  if (ev->state == ClientState::Generating) {
    if (opened_.contains(id)) return "turn " + std::to_string(id) + " opened twice";
    opened_.insert(id);
  } else if (ev->state == ClientState::Interrupted) {
    if (closed_.contains(id)) return "turn " + std::to_string(id) + " closed twice";
    if (!opened_.contains(id)) return "interrupted before the generating state event of turn " + std::to_string(id);
    closed_.insert(id);
    if (active_ == id) active_.reset();
  }
  return {};
}

ClientMessage parse_client_message(std::string_view line) {
  Json frame;
  try {
    frame = Json::parse(line);
  } catch (const Json::exception& e) {
    throw ProtocolError(std::string(kBadFrame), std::string("malformed JSON: ") + e.what());
  }
  if (!frame.is_object() || !frame.contains("type") || !frame["type"].is_string()) {
    throw ProtocolError(std::string(kBadFrame), "frame without a string 'type'");
  }
  const auto type = frame["type"].get<std::string>();
  try {
    if (type == "hello") return Hello{frame.value("config", Json::object())};
    if (type == "bye") return Bye{};
    if (type == "text_query") return TextQueryMessage{frame.at("text").get<std::string>()};
    if (type == "audio_chunk") {
      AudioChunk chunk;
      chunk.sample_rate = frame.value("sample_rate", 16000);
      chunk.utterance = frame.value("utterance", std::string{});
      std::string bytes;
      try {
        bytes = base64_decode(frame.at("pcm").get<std::string>());
        chunk.pcm = vad::decode_pcm16le(bytes);
      } catch (const PreconditionError& e) {
        throw ProtocolError(std::string(kBadAudio), e.what());
      }
      return chunk;
    }
  } catch (const Json::exception& e) {
    throw ProtocolError(std::string(kBadFrame), std::string("bad '") + type + "' frame: " + e.what());
  }
  throw ProtocolError(std::string(kBadFrame), "unknown message type '" + type + "'");
}

Json to_wire(const ClientMessage& msg) {
  return std::visit(Overloaded{
                        [](const Hello& h) { return Json{{"type", "hello"}, {"config", h.config}}; },
                        [](const AudioChunk& a) {
                          Json j{{"type", "audio_chunk"},
                                 {"pcm", base64_encode(vad::encode_pcm16le(a.pcm))},
                                 {"sample_rate", a.sample_rate}};
                          if (!a.utterance.empty()) j["utterance"] = a.utterance;
                          return j;
                        },
                        [](const TextQueryMessage& t) { return Json{{"type", "text_query"}, {"text", t.text}}; },
                        [](const Bye&) { return Json{{"type", "bye"}}; },
                    },
                    msg);
}

}  // namespace duplex
