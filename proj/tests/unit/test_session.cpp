#include <doctest.h>

#include "duplex/session.hpp"

using namespace duplex;

namespace {

Turn user(TurnId id, std::string text, StateToken token = StateToken::QueryAudio) {
  Turn t;
  t.turn_id = id;
  t.source = TurnSource::User;
  t.state_token = token;
  t.content = {std::move(text)};
  t.modalities = {Modality::Audio};
  return t;
}

Turn assistant(TurnId id, std::vector<std::string> pieces) {
  Turn t;
  t.turn_id = id;
  t.source = TurnSource::Assistant;
  t.content = std::move(pieces);
  t.modalities = {Modality::Text};
  return t;
}

}  // namespace

TEST_SUITE("session") {

TEST_CASE("state tokens round-trip through their text form") {
  for (auto t : {StateToken::QueryAudio, StateToken::NoisyAudio, StateToken::QueryText}) {
    CHECK(parse_state_token(render(t)) == t);
  }
  CHECK(render(StateToken::QueryAudio) == "<1>");
  CHECK(render(StateToken::NoisyAudio) == "<2>");
  CHECK(render(StateToken::QueryText) == "<3>");
  CHECK_THROWS_AS(parse_state_token("<4>"), PreconditionError);
  CHECK_FALSE(is_query(StateToken::NoisyAudio));
}

TEST_CASE("system prompt follows the image/video membership") {
  const auto image = select_system_prompt({Modality::Image, Modality::Text});
  CHECK(image.modality_key == PromptKind::ImageData);
  CHECK(image.body.find("you are seeing the image, not the video") != std::string_view::npos);

  const auto video = select_system_prompt({Modality::Video, Modality::Audio});
  CHECK(video.modality_key == PromptKind::VideoData);
  CHECK(video.body.find("you are seeing the video, not the image") != std::string_view::npos);

  CHECK(select_system_prompt({Modality::Text}).modality_key == PromptKind::TextData);
  CHECK(select_system_prompt({Modality::Audio, Modality::Text}).modality_key == PromptKind::TextData);
  CHECK_THROWS_AS(select_system_prompt({Modality::Image, Modality::Video}), PreconditionError);
  CHECK_THROWS_AS(select_system_prompt({}), PreconditionError);

  // Only Image/Video membership matters.
  CHECK(select_system_prompt({Modality::Image}).body == select_system_prompt({Modality::Image, Modality::Audio}).body);
}

TEST_CASE("append_turn keeps ids increasing") {
  ConversationHistory h;
  h = append_turn(h, user(1, "hi"));
  CHECK(h.size() == 1);
  h = append_turn(h, assistant(2, {"hello"}));
  h = append_turn(h, user(3, "again"));
  CHECK(h.size() == 3);
  CHECK(h.turns[2].turn_id == 3);
  CHECK_THROWS_AS(append_turn(append_turn({}, user(1, "a")), user(1, "b")), PreconditionError);

  ConversationHistory two = append_turn(append_turn({}, user(1, "a")), assistant(2, {"b"}));
  CHECK_THROWS_AS(append_turn(two, user(2, "dup")), PreconditionError);
  CHECK(validate(h).empty());
}

TEST_CASE("append_turn rejects malformed turns") {
  Turn no_token = user(1, "x");
  no_token.state_token.reset();
  CHECK_THROWS_AS(append_turn({}, no_token), PreconditionError);

  Turn tagged = assistant(1, {"x"});
  tagged.state_token = StateToken::QueryText;
  CHECK_THROWS_AS(append_turn({}, tagged), PreconditionError);
}

TEST_CASE("consolidate records the partial answer as incomplete") {
  ConversationHistory h = append_turn({}, user(1, "tell me a story"));
  CHECK(consolidate(h, {}) == h);

  std::vector<std::string> partial;
  for (int i = 0; i < 17; ++i) partial.push_back(i ? " w" + std::to_string(i) : "w0");
  ConversationHistory c = consolidate(h, partial, 2, 5);
  REQUIRE(c.size() == 2);
  CHECK(c.turns[1].source == TurnSource::Assistant);
  CHECK_FALSE(c.turns[1].completed);
  CHECK(c.turns[1].content.size() == 17);
  CHECK(c.turns[1].wall_time == 5);
  CHECK(validate(c).empty());

  const std::string prompt = render_prompt(c);
  CHECK(prompt.find("w16 [interrupted]\n") != std::string::npos);
}

TEST_CASE("consecutive consolidations leave at most one incomplete turn") {
  ConversationHistory h = append_turn({}, user(1, "first"));
  h = consolidate(h, {"a", " b"}, 2);
  h = append_turn(h, user(3, "second"));
  h = consolidate(h, {"c"}, 4);
  CHECK(validate(h).empty());
  int incomplete = 0;
  for (const auto& t : h.turns) incomplete += t.completed ? 0 : 1;
  CHECK(incomplete == 1);
  CHECK_FALSE(h.turns.back().completed);
  // The sealed turn keeps its marker in the content, so rendering is unchanged.
  CHECK(h.turns[1].text() == std::string("a b") + std::string(kInterruptedMarker));
  CHECK(render_prompt(h).find("a b [interrupted]\n") != std::string::npos);
}

TEST_CASE("validate flags broken histories") {
  ConversationHistory h;
  h.turns = {user(2, "a"), user(1, "b")};
  CHECK_FALSE(validate(h).empty());

  Turn partial = assistant(2, {"x"});
  partial.completed = false;
  h.turns = {user(1, "a"), partial, user(3, "b"), assistant(4, {"y"})};
  CHECK_FALSE(validate(h).empty());  // incomplete turn is not the last assistant turn
}

TEST_CASE("render_prompt lays out system, turns and query") {
  ConversationHistory h;
  h.system_prompt = "SYS";
  h = append_turn(h, user(1, "question", StateToken::QueryText));
  h = append_turn(h, assistant(2, {"Hi", " there"}));
  const Turn q = user(3, "next");
  CHECK(render_prompt(h, &q) == "[system]\nSYS\n[user] <3>\nquestion\n[assistant]\nHi there\n[user] <1>\nnext\n");
}

TEST_CASE("JSON round-trip of turns and histories") {
  ConversationHistory h;
  h.system_prompt = "p";
  h = append_turn(h, user(1, "q"));
  h = consolidate(h, {"a", " b"}, 2, 7);
  const Json j = h;
  CHECK(j["turns"][0]["state_token"] == "<1>");
  CHECK(j["turns"][0]["source"] == "User");
  CHECK(j["turns"][1]["state_token"].is_null());
  CHECK(j["turns"][1]["completed"] == false);
  CHECK(j.get<ConversationHistory>() == h);
}

}  // TEST_SUITE
