#include "duplex/session.hpp"

#include <algorithm>
#include <sstream>

namespace duplex {

namespace {

constexpr std::string_view kImagePrompt =
    "You are an AI robot and your name is VITA.\n"
    "You are a multimodal large language model developed by the open-source community. "
    "Your aim is to be helpful, honest, and harmless.\n"
    "You support the ability to communicate fluently and answer user questions in multiple "
    "languages of the user's choice.\n"
    "If the user corrects the wrong answer you generated, you will apologize and discuss the "
    "correct answer with the user.\n"
    "You must answer the question strictly according to the content of the image given by the "
    "user, and it is strictly forbidden to answer the question without the content of the image. "
    "Please note that you are seeing the image, not the video.";

constexpr std::string_view kVideoPrompt =
    "You are an AI robot and your name is VITA. \n"
    "You are a multimodal large language model developed by the open-source community. "
    "You aim to be helpful, honest, and harmless.\n"
    "You support the ability to communicate fluently and answer user questions in multiple "
    "languages of the user's choice.\n"
    "If the user corrects the wrong answer you generated, you will apologize and discuss the "
    "correct answer with the user.\n"
    "You must answer the question strictly according to the content of the video given by the "
    "user, and it is strictly forbidden to answer the question without the content of the video. "
    "Please note that you are seeing the video, not the image.";

constexpr std::string_view kTextPrompt =
    "You are an AI robot and your name is VITA.\n"
    "You are a multimodal large language model developed by the open-source community. "
    "Your aim is to be helpful, honest, and harmless.\n"
    "You support the ability to communicate fluently and answer user questions in multiple "
    "languages of the user's choice.\n"
    "If the user corrects the wrong answer you generated, you will apologize and discuss the "
    "correct answer with the user.";

}  // namespace

std::string_view render(StateToken token) {
  switch (token) {
    case StateToken::QueryAudio: return "<1>";
    case StateToken::NoisyAudio: return "<2>";
    case StateToken::QueryText: return "<3>";
  }
  return "<?>";
}

StateToken parse_state_token(std::string_view text) {
  if (text == "<1>") return StateToken::QueryAudio;
  if (text == "<2>") return StateToken::NoisyAudio;
  if (text == "<3>") return StateToken::QueryText;
  throw PreconditionError("unknown state token: " + std::string(text));
}

std::string_view to_string(Modality m) {
  switch (m) {
    case Modality::Image: return "Image";
    case Modality::Video: return "Video";
    case Modality::Audio: return "Audio";
    case Modality::Text: return "Text";
  }
  return "?";
}

Modality parse_modality(std::string_view text) {
  if (text == "Image") return Modality::Image;
  if (text == "Video") return Modality::Video;
  if (text == "Audio") return Modality::Audio;
  if (text == "Text") return Modality::Text;
  throw PreconditionError("unknown modality: " + std::string(text));
}

std::string_view to_string(TurnSource s) { return s == TurnSource::User ? "User" : "Assistant"; }

TurnSource parse_turn_source(std::string_view text) {
  if (text == "User") return TurnSource::User;
  if (text == "Assistant") return TurnSource::Assistant;
  throw PreconditionError("unknown turn source: " + std::string(text));
}

std::string_view to_string(PromptKind k) {
  switch (k) {
    case PromptKind::ImageData: return "ImageData";
    case PromptKind::VideoData: return "VideoData";
    case PromptKind::TextData: return "TextData";
  }
  return "?";
}

std::string Turn::text() const {
  std::string out;
  for (const auto& piece : content) out += piece;
  return out;
}

PromptTemplate select_system_prompt(const std::set<Modality>& modalities) {
  if (modalities.empty()) throw PreconditionError("select_system_prompt: empty modality set");
  const bool image = modalities.contains(Modality::Image);
  const bool video = modalities.contains(Modality::Video);
  if (image && video) {
    throw PreconditionError("select_system_prompt: Image and Video are mutually exclusive");
  }
  if (image) return {PromptKind::ImageData, kImagePrompt};
  if (video) return {PromptKind::VideoData, kVideoPrompt};
  return {PromptKind::TextData, kTextPrompt};
}

void seal_incomplete(ConversationHistory& history) {
  for (auto& turn : history.turns) {
    if (!turn.completed) {
      turn.content.emplace_back(kInterruptedMarker);
      turn.completed = true;
    }
  }
}

ConversationHistory append_turn(ConversationHistory history, Turn turn) {
  if (!history.turns.empty() && turn.turn_id <= history.last_turn_id()) {
    throw PreconditionError("append_turn: turn_id " + std::to_string(turn.turn_id) +
                            " does not exceed " + std::to_string(history.last_turn_id()));
  }
  if (turn.source == TurnSource::User && !turn.state_token) {
    throw PreconditionError("append_turn: user turn without state token");
  }
  if (turn.source == TurnSource::Assistant && turn.state_token) {
    throw PreconditionError("append_turn: assistant turn with state token");
  }
  if (turn.source == TurnSource::User && !turn.completed) {
    throw PreconditionError("append_turn: only assistant turns can be incomplete");
  }
  // A newer assistant turn supersedes the pending interrupted one.
  if (turn.source == TurnSource::Assistant) seal_incomplete(history);
  history.turns.push_back(std::move(turn));
  return history;
}

ConversationHistory consolidate(ConversationHistory history,
                                const std::vector<std::string>& interrupted_partial,
                                TurnId turn_id, Timestamp wall_time) {
  if (interrupted_partial.empty()) return history;
  Turn partial;
  partial.turn_id = turn_id;
  partial.source = TurnSource::Assistant;
  partial.content = interrupted_partial;
  partial.modalities = {Modality::Text};
  partial.completed = false;
  partial.wall_time = wall_time;
  history = append_turn(std::move(history), std::move(partial));
  return history;
}

ConversationHistory consolidate(ConversationHistory history,
                                const std::vector<std::string>& interrupted_partial) {
  const TurnId next = history.last_turn_id() + 1;
  return consolidate(std::move(history), interrupted_partial, next);
}

std::string validate(const ConversationHistory& history) {
  int incomplete = 0;
  std::optional<std::size_t> last_assistant;
  for (std::size_t i = 0; i < history.turns.size(); ++i) {
    const Turn& t = history.turns[i];
    if (i > 0 && t.turn_id <= history.turns[i - 1].turn_id) {
      return "turn ids not strictly increasing at index " + std::to_string(i);
    }
    if (t.source == TurnSource::User) {
      if (!t.state_token) return "user turn " + std::to_string(t.turn_id) + " lacks state token";
      if (!t.completed) return "user turn " + std::to_string(t.turn_id) + " marked incomplete";
    } else {
      if (t.state_token) return "assistant turn " + std::to_string(t.turn_id) + " has state token";
      last_assistant = i;
    }
    if (!t.completed) ++incomplete;
  }
  if (incomplete > 1) return "more than one incomplete turn";
  if (incomplete == 1 && history.turns[*last_assistant].completed) {
    return "incomplete turn is not the most recent assistant turn";
  }
  return {};
}

std::string render_prompt(const ConversationHistory& history, const Turn* query) {
  std::ostringstream out;
  out << "[system]\n" << history.system_prompt << "\n";
  auto emit = [&out](const Turn& t) {
    if (t.source == TurnSource::User) {
      out << "[user]";
      if (t.state_token) out << ' ' << render(*t.state_token);
      out << '\n' << t.text() << '\n';
    } else {
      out << "[assistant]\n" << t.text();
      if (!t.completed) out << kInterruptedMarker;
      out << '\n';
    }
  };
  for (const auto& t : history.turns) emit(t);
  if (query) emit(*query);
  return out.str();
}

void to_json(Json& j, StateToken t) { j = std::string(render(t)); }
void from_json(const Json& j, StateToken& t) { t = parse_state_token(j.get<std::string>()); }
void to_json(Json& j, Modality m) { j = std::string(to_string(m)); }
void from_json(const Json& j, Modality& m) { m = parse_modality(j.get<std::string>()); }
void to_json(Json& j, TurnSource s) { j = std::string(to_string(s)); }
void from_json(const Json& j, TurnSource& s) { s = parse_turn_source(j.get<std::string>()); }

void to_json(Json& j, const Turn& t) {
  j = Json{{"turn_id", t.turn_id},
           {"source", t.source},
           {"state_token", t.state_token ? Json(*t.state_token) : Json(nullptr)},
           {"content", t.content},
           {"modalities", t.modalities},
           {"completed", t.completed},
           {"wall_time", t.wall_time}};
}

void from_json(const Json& j, Turn& t) {
  t.turn_id = j.at("turn_id").get<TurnId>();
  t.source = j.at("source").get<TurnSource>();
  if (auto it = j.find("state_token"); it != j.end() && !it->is_null()) {
    t.state_token = it->get<StateToken>();
  } else {
    t.state_token.reset();
  }
  const Json& content = j.at("content");
  if (content.is_string()) {
    t.content = {content.get<std::string>()};
  } else {
    t.content = content.get<std::vector<std::string>>();
  }
  t.modalities = j.value("modalities", std::set<Modality>{});
  t.completed = j.value("completed", true);
  t.wall_time = j.value("wall_time", Timestamp{0});
}

void to_json(Json& j, const ConversationHistory& h) {
  j = Json{{"turns", h.turns}, {"system_prompt", h.system_prompt}};
}

void from_json(const Json& j, ConversationHistory& h) {
  h.turns = j.at("turns").get<std::vector<Turn>>();
  h.system_prompt = j.value("system_prompt", std::string{});
}

void to_json(Json& j, const PromptTemplate& p) {
  j = Json{{"modality_key", std::string(to_string(p.modality_key))},
           {"body", std::string(p.body)}};
}

}  // namespace duplex
