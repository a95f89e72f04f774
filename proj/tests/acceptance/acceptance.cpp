// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <chrono>
#include <cstdio>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "duplex/backend.hpp"
#include "duplex/media.hpp"
#include "duplex/packer.hpp"
#include "duplex/scenario.hpp"
#include "duplex/vad.hpp"
#include "oracles.hpp"

using namespace duplex;

namespace {

// Collects the first few failure reasons of one criterion.
struct Check {
  std::vector<std::string> failures;
  std::size_t count = 0;

  void expect(bool ok, const std::string& what) {
    if (ok) return;
    ++count;
    if (failures.size() < 8) failures.push_back(what);
  }
  template <typename A, typename B>
  void eq(const A& a, const B& b, const std::string& what) {
    if (a == b) return;
    std::ostringstream os;
    os << what << ": got " << a << ", want " << b;
    expect(false, os.str());
  }
};

int failed_criteria = 0;

void run_criterion(int number, const std::string& name, double limit_s, const std::function<void(Check&)>& body) {
  Check check;
  const auto start = std::chrono::steady_clock::now();
  try {
    body(check);
  } catch (const std::exception& e) {
    check.expect(false, std::string("exception: ") + e.what());
  }
  const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (elapsed > limit_s) {
    check.expect(false, "took " + std::to_string(elapsed) + " s, limit " + std::to_string(limit_s) + " s");
  }
  const bool pass = check.count == 0;
  if (!pass) ++failed_criteria;
  std::printf("%s criterion %d (%s) in %.2f s\n", pass ? "PASS" : "FAIL", number, name.c_str(), elapsed);
  for (const auto& f : check.failures) std::printf("    %s\n", f.c_str());
  if (check.count > check.failures.size()) std::printf("    ... %zu more\n", check.count - check.failures.size());
  std::fflush(stdout);
}

// --- 1. token arithmetic ------------------------------------------------------

void token_arithmetic(Check& c) {
  c.eq(media::audio_token_count(2.0), 25, "audio tokens for 2.0 s");
  c.eq(media::plan_video_frames(3.0).frame_count, 4, "frames for 3 s");
  c.eq(media::plan_video_frames(10.0).frame_count, 10, "frames for 10 s");
  c.eq(media::plan_video_frames(100.0).frame_count, 16, "frames for 100 s");
  c.eq(media::plan_image_tiles(448, 448).token_count, 256, "tokens for 448x448");
  c.eq(media::plan_video_frames(4.0).frame_count, 4, "frames for 4 s");
  c.eq(media::plan_video_frames(16.0).frame_count, 16, "frames for 16 s");
  c.eq(media::plan_video_frames(std::nextafter(4.0, 0.0)).frame_count, 4, "frames just below 4 s");
  c.eq(media::plan_video_frames(std::nextafter(16.0, 20.0)).frame_count, 16, "frames just above 16 s");
  c.eq(media::plan_video_frames(15.999).frame_count, 15, "frames for 15.999 s");
  c.eq(media::plan_video_frames(4.001).frame_count, 4, "frames for 4.001 s");
  for (double d : {3.0, 4.0, 10.0, 16.0, 100.0}) {
    c.eq(media::plan_video_frames(d).frame_count, oracle::video_frames(d), "oracle frames for " + std::to_string(d));
  }
  c.eq(media::audio_token_count(2.0), static_cast<int>(oracle::audio_tokens_us(2'000'000)), "oracle audio tokens");
}

// --- 2. packer ----------------------------------------------------------------

struct GeneratedSample {
  packer::Sample sample;
  long long oracle_cost = 0;
};

GeneratedSample random_sample(oracle::Rng& rng, int index, long long cap) {
  for (;;) {
    GeneratedSample g;
    auto& s = g.sample;
    s.sample_id = "s" + std::to_string(index);
    s.modality_profile.is_video = oracle::uniform(rng, 0, 9) == 0;
    s.modality_profile.text_tokens = oracle::uniform(rng, 0, 2500);
    long long cost = s.modality_profile.text_tokens;
    for (int i = oracle::uniform(rng, 0, 2); i > 0; --i) {
      const long long w = oracle::uniform(rng, 1, 2000), h = oracle::uniform(rng, 1, 2000);
      const int m = static_cast<int>(oracle::uniform(rng, 1, 12));
      s.modality_profile.image_plans.push_back(media::plan_image_tiles(w, h, m));
      const auto grid = oracle::best_grid(w, h, m);
      const int tiles = grid.rows * grid.cols;
      cost += 256LL * (tiles + (tiles > 1 ? 1 : 0));
    }
    for (int i = oracle::uniform(rng, 0, 2); i > 0; --i) {
      const long long us = oracle::uniform(rng, 0, 120'000'000);
      s.modality_profile.audio_seconds.push_back(static_cast<double>(us) / 1e6);
      cost += oracle::audio_tokens_us(us);
    }
    if (s.modality_profile.is_video) {
      // Frame tokens ride along as text tokens; only the total matters here.
      const long long frames = oracle::uniform(rng, 1000, 20000);
      s.modality_profile.text_tokens += frames;
      cost += frames;
    }
    g.oracle_cost = cost;
    if (cost < 1) continue;
    if (!s.modality_profile.is_video && cost > cap) continue;
    return g;
  }
}

// Exhaustive search over bin assignments (restricted growth strings) that
// keep the first-fit property: an item goes to the first bin with room at
// its arrival, a new bin only when none has room, videos always alone.
// Prefixes that break the property are abandoned, every other branch is
// explored. Returns all complete assignments.
void first_fit_assignments(const std::vector<oracle::Item>& items, long long cap, std::size_t i,
                           std::vector<int>& assign, std::vector<long long>& fill, std::vector<bool>& video_bin,
                           std::vector<std::vector<int>>& out) {
  if (i == items.size()) {
    out.push_back(assign);
    return;
  }
  const int open = static_cast<int>(fill.size());
  for (int b = 0; b <= open; ++b) {
    bool ok;
    if (items[i].video) {
      ok = b == open;
    } else if (b == open) {
      ok = true;
      for (int e = 0; e < open; ++e) ok = ok && (video_bin[e] || fill[e] + items[i].cost > cap);
    } else {
      ok = !video_bin[b] && fill[b] + items[i].cost <= cap;
      for (int e = 0; e < b; ++e) ok = ok && (video_bin[e] || fill[e] + items[i].cost > cap);
    }
    if (!ok) continue;
    assign.push_back(b);
    if (b == open) {
      fill.push_back(items[i].cost);
      video_bin.push_back(items[i].video);
    } else {
      fill[b] += items[i].cost;
    }
    first_fit_assignments(items, cap, i + 1, assign, fill, video_bin, out);
    if (b == open) {
      fill.pop_back();
      video_bin.pop_back();
    } else {
      fill[b] -= items[i].cost;
    }
    assign.pop_back();
  }
}

void packer_properties(Check& c) {
  const long long cap = packer::kDefaultContextCap;
  oracle::Rng rng(2024);
  int brute_forced = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = trial % 2 == 0 ? static_cast<int>(oracle::uniform(rng, 0, 12))
                                 : static_cast<int>(oracle::uniform(rng, 0, 60));
    std::vector<packer::Sample> samples;
    std::vector<oracle::Item> items;
    for (int i = 0; i < n; ++i) {
      GeneratedSample g = random_sample(rng, i, cap);
      c.eq(g.sample.token_cost(), g.oracle_cost, "token cost of a generated sample");
      items.push_back({g.oracle_cost, g.sample.modality_profile.is_video});
      samples.push_back(std::move(g.sample));
    }
    const auto bins = packer::pack(samples, cap);
    const std::string tag = "case " + std::to_string(trial);

    std::multiset<std::string> in, out;
    for (const auto& s : samples) in.insert(s.sample_id);
    for (std::size_t b = 0; b < bins.size(); ++b) {
      long long total = 0;
      bool has_video = false;
      for (const auto& m : bins[b].members) {
        out.insert(m.sample_id);
        total += m.token_cost();
        has_video = has_video || m.modality_profile.is_video;
      }
      c.eq(bins[b].total_tokens, total, tag + " bin total");
      c.eq(bins[b].bin_id, static_cast<std::int64_t>(b), tag + " bin id");
      if (has_video) {
        c.eq(bins[b].members.size(), std::size_t{1}, tag + " video bin size");
      } else {
        c.expect(total <= cap, tag + " bin over cap");
      }
    }
    c.expect(in == out, tag + " multiset of samples not conserved");

    std::vector<std::vector<int>> got;
    for (const auto& b : bins) {
      got.emplace_back();
      for (const auto& m : b.members) got.back().push_back(std::stoi(m.sample_id.substr(1)));
    }
    c.expect(got == oracle::first_fit(items, cap), tag + " differs from the first-fit simulation");

    if (n <= 12) {
      ++brute_forced;
      std::vector<std::vector<int>> found;
      std::vector<int> assign;
      std::vector<long long> fill;
      std::vector<bool> video_bin;
      first_fit_assignments(items, cap, 0, assign, fill, video_bin, found);
      c.eq(found.size(), std::size_t{1}, tag + " first-fit assignments found by search");
      if (found.size() == 1) {
        std::vector<std::vector<int>> expect;
        for (int i = 0; i < n; ++i) {
          const auto b = static_cast<std::size_t>(found[0][static_cast<std::size_t>(i)]);
          if (expect.size() <= b) expect.resize(b + 1);
          expect[b].push_back(i);
        }
        c.expect(got == expect, tag + " differs from the exhaustive search");
      }
    }
  }
  c.expect(brute_forced >= 400, "too few exhaustively checked cases");
}

// --- 3. noise sampler -----------------------------------------------------------

void noise_sampler(Check& c) {
  oracle::Rng rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<int> reference(static_cast<std::size_t>(oracle::uniform(rng, 1, 80)));
    for (int& l : reference) l = static_cast<int>(oracle::uniform(rng, 1, 30));
    const long long k = oracle::uniform(rng, 0, 120);
    const auto quota = oracle::largest_remainder(reference, k);

    // Enough supply in every bucket, plus distractor buckets.
    std::vector<std::string> corpus;
    for (const auto& [bucket, q] : quota) {
      const long long supply = q + oracle::uniform(rng, 0, 20);
      for (long long i = 0; i < supply; ++i) {
        corpus.push_back(oracle::words(bucket * 5 + static_cast<int>(oracle::uniform(rng, bucket == 0 ? 1 : 0, 4)), rng));
      }
    }
    for (int i = oracle::uniform(rng, 0, 30); i > 0; --i) {
      corpus.push_back(oracle::words(static_cast<int>(oracle::uniform(rng, 31, 60)), rng));
    }
    std::shuffle(corpus.begin(), corpus.end(), rng);
    if (corpus.empty()) corpus.push_back(oracle::words(40, rng));

    const std::uint64_t seed = rng();
    const auto a = packer::sample_noise_corpus(corpus, reference, k, seed);
    const auto b = packer::sample_noise_corpus(corpus, reference, k, seed);
    const std::string tag = "case " + std::to_string(trial);
    c.expect(a == b, tag + " same seed gave different output");
    c.eq(static_cast<long long>(a.size()), k, tag + " sample count");

    std::map<int, long long> hist;
    for (const auto& s : a) {
      std::istringstream in(s);
      int words = 0;
      for (std::string w; in >> w;) ++words;
      ++hist[words / 5];
    }
    std::set<int> buckets;
    for (const auto& [bucket, q] : quota) buckets.insert(bucket);
    for (const auto& [bucket, n] : hist) buckets.insert(bucket);
    for (int bucket : buckets) {
      const long long want = quota.contains(bucket) ? quota.at(bucket) : 0;
      const long long got = hist.contains(bucket) ? hist.at(bucket) : 0;
      c.expect(std::llabs(got - want) <= 1, tag + " bucket " + std::to_string(bucket) + ": got " +
                                                std::to_string(got) + ", target " + std::to_string(want));
    }
  }
}

// --- 4. VAD chunking invariance ------------------------------------------------------

std::string describe(const std::vector<vad::VadEvent>& events) {
  std::ostringstream os;
  for (const auto& e : events) {
    if (const auto* s = std::get_if<vad::SpeechStart>(&e)) {
      os << "S" << s->time << ';';
    } else {
      const auto& end = std::get<vad::SpeechEnd>(e);
      std::uint64_t h = 1469598103934665603ULL;
      for (auto v : end.segment.pcm) h = (h ^ static_cast<std::uint16_t>(v)) * 1099511628211ULL;
      os << "E" << end.time << '#' << end.segment.segment_id << '[' << end.segment.start_time << ','
         << end.segment.end_time << ']' << end.segment.pcm.size() << ':' << h << ';';
    }
  }
  return os.str();
}

std::string run_vad(const std::vector<vad::Sample>& x, oracle::Rng* rng, std::size_t fixed) {
  vad::VadStream stream;
  std::vector<vad::VadEvent> all;
  std::size_t pos = 0;
  while (pos < x.size()) {
    const std::size_t want = rng ? static_cast<std::size_t>(oracle::uniform(*rng, 1, 3000)) : fixed;
    const std::size_t n = std::min(want, x.size() - pos);
    auto ev = stream.process_chunk(std::span(x).subspan(pos, n));
    all.insert(all.end(), ev.begin(), ev.end());
    pos += n;
  }
  auto tail = stream.flush();
  all.insert(all.end(), tail.begin(), tail.end());
  return describe(all);
}

void vad_invariance(Check& c) {
  oracle::Rng rng(99);
  int with_speech = 0;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<vad::Sample> x;
    for (int p = static_cast<int>(oracle::uniform(rng, 1, 6)); p > 0; --p) {
      x.resize(x.size() + static_cast<std::size_t>(oracle::uniform(rng, 0, 12000)), 0);
      const auto kind = oracle::uniform(rng, 0, 2);
      const auto len = static_cast<std::size_t>(oracle::uniform(rng, 100, 16000));
      const double amp = oracle::uniform_real(rng, 0.0, 0.6);
      const double freq = oracle::uniform_real(rng, 80.0, 4000.0);
      for (std::size_t i = 0; i < len; ++i) {
        double v = 0.0;
        if (kind == 0) v = amp * std::sin(2.0 * 3.141592653589793 * freq * static_cast<double>(i) / 16000.0);
        if (kind == 1) v = oracle::uniform_real(rng, -amp, amp);
        if (kind == 2) v = (i / 200) % 2 ? amp : -amp;
        x.push_back(static_cast<vad::Sample>(std::lround(v * 32767.0)));
      }
    }
    const std::string whole = run_vad(x, nullptr, x.size() + 1);
    if (whole.find('E') != std::string::npos) ++with_speech;
    const std::string tag = "signal " + std::to_string(trial);
    c.expect(run_vad(x, &rng, 0) == whole, tag + " random chunks changed the events");
    c.expect(run_vad(x, nullptr, 1) == whole, tag + " one-sample chunks changed the events");
    c.expect(run_vad(x, nullptr, 479) == whole, tag + " 479-sample chunks changed the events");
  }
  c.expect(with_speech >= 100, "too few signals with detected speech: " + std::to_string(with_speech));
}

// --- 5. randomized duplex scenarios -------------------------------------------------

struct Generated {
  Scenario scenario;
  std::vector<std::string> queries;  // label keys of effective queries (speech and text)
  std::vector<std::string> noises;
};

Generated random_scenario(oracle::Rng& rng, int index) {
  Generated g;
  Scenario& s = g.scenario;
  s.name = "random-" + std::to_string(index);
  s.virtual_clock = true;
  s.chunk_ms = static_cast<int>(oracle::uniform(rng, 20, 200));
  s.tail_s = 1.0;
  s.config.backend.mock.classify_latency = Micros(oracle::uniform(rng, 30'000, 400'000));

  double t = oracle::uniform_real(rng, 0.1, 1.0);
  const int n = static_cast<int>(oracle::uniform(rng, 1, 8));
  for (int i = 0; i < n; ++i) {
    TimelineEntry e;
    e.at = t;
    const auto kind = oracle::uniform(rng, 0, 5);
    const std::string key = "u" + std::to_string(i);
    backend::MockLabel label;
    label.answer = oracle::words(static_cast<int>(oracle::uniform(rng, 1, 40)), rng);
    label.tokens_per_second = oracle::uniform_real(rng, 4.0, 40.0);
    if (kind <= 1) {
      e.kind = InjectKind::Noise;
      e.label = key;
      label.state_token = StateToken::NoisyAudio;
      g.noises.push_back(key);
    } else if (kind <= 3) {
      e.kind = InjectKind::Audio;
      e.label = key;
      label.state_token = StateToken::QueryAudio;
      g.queries.push_back(key);
    } else {
      e.kind = InjectKind::Text;
      e.text = "text " + key;
      label.state_token = StateToken::QueryText;
      g.queries.push_back(e.text);
    }
    e.duration = oracle::uniform_real(rng, 0.3, 1.5);
    e.frequency = oracle::uniform_real(rng, 150.0, 3000.0);
    e.amplitude = oracle::uniform_real(rng, 0.1, 0.5);
    s.config.backend.labels[e.kind == InjectKind::Text ? e.text : key] = label;
    s.timeline.push_back(e);
    // Keep audio injections apart so the detector sees separate utterances.
    const double busy = e.kind == InjectKind::Text ? 0.0 : e.duration;
    t += busy + oracle::uniform_real(rng, 0.7, 3.0);
  }
  return g;
}

void duplex_scenarios(Check& c) {
  oracle::Rng rng(4242);
  std::int64_t interrupts = 0, suppressed = 0, swaps = 0;
  for (int i = 0; i < 500; ++i) {
    const Generated g = random_scenario(rng, i);
    const ScenarioReport first = run_scenario(g.scenario);
    const ScenarioReport second = run_scenario(g.scenario);
    const std::string tag = g.scenario.name;
    // (e) determinism
    c.expect(first.trace == second.trace, tag + ": traces differ between runs");
    c.expect(first.messages == second.messages, tag + ": client streams differ between runs");

    for (const auto& v : first.violations) c.expect(false, tag + ": " + v);
    c.eq(first.stats.dropped_utterances, 0, tag + " dropped inputs");
    interrupts += first.stats.interrupts;
    suppressed += first.stats.suppressed;
    swaps += first.stats.swaps;

    // (b) single generator, checked on every trace record independently.
    for (const auto& line : first.trace) {
      const Json rec = Json::parse(line);
      int generating = 0;
      std::set<std::string> roles;
      for (const auto& slot : rec["after"]) {
        if (slot["phase"] == "Generating") ++generating;
        roles.insert(slot["role"].get<std::string>());
      }
      c.expect(generating <= 1, tag + ": two generating slots at seq " + rec["seq"].dump());
      c.expect(roles.size() == 2, tag + ": roles not distinct at seq " + rec["seq"].dump());
    }

    // (a) every noise injection is suppressed and never reaches the history
    // or the token stream.
    std::map<std::string, int> suppressed_by_key;
    std::set<TurnId> generating_turns;
    std::map<TurnId, int> tokens_after_interrupt;
    std::set<TurnId> interrupted;
    for (const auto& m : first.messages) {
      if (const auto* ev = std::get_if<StateEvent>(&m)) {
        if (ev->state == ClientState::Suppressed && ev->utterance) ++suppressed_by_key[*ev->utterance];
        if (ev->state == ClientState::Generating && ev->turn_id) generating_turns.insert(*ev->turn_id);
        if (ev->state == ClientState::Interrupted && ev->turn_id) interrupted.insert(*ev->turn_id);
      } else if (const auto* tok = std::get_if<AnswerToken>(&m)) {
        // (c) tokens that reach the client after the interrupt of their turn
        if (interrupted.contains(tok->turn_id)) ++tokens_after_interrupt[tok->turn_id];
      }
    }
    for (const auto& key : g.noises) {
      c.eq(suppressed_by_key[key], 1, tag + " suppressed events for " + key);
    }
    std::map<std::string, std::vector<const Turn*>> user_turns;
    for (const auto& t : first.history.turns) {
      if (t.source == TurnSource::User) user_turns[t.text()].push_back(&t);
    }
    for (const auto& key : g.noises) c.expect(!user_turns.contains(key), tag + ": noise " + key + " in history");
    for (const auto& [turn, n] : tokens_after_interrupt) {
      c.expect(n <= 1, tag + ": " + std::to_string(n) + " stale tokens after interrupting turn " +
                           std::to_string(turn));
    }

    // (d) every query is answered to completion, or its partial answer was
    // consolidated and a later query followed it.
    const auto& turns = first.history.turns;
    for (const auto& key : g.queries) {
      const auto it = user_turns.find(key);
      if (it == user_turns.end() || it->second.size() != 1) {
        c.expect(false, tag + ": query " + key + " not committed exactly once");
        continue;
      }
      const Turn& q = *it->second[0];
      const TurnId answer_id = q.turn_id + 1;
      c.expect(generating_turns.contains(answer_id), tag + ": no generation for query " + key);
      const auto ans = std::find_if(turns.begin(), turns.end(), [&](const Turn& t) { return t.turn_id == answer_id; });
      if (interrupted.contains(answer_id)) {
        const bool superseded = std::any_of(turns.begin(), turns.end(), [&](const Turn& t) {
          return t.source == TurnSource::User && t.turn_id > answer_id;
        });
        c.expect(superseded, tag + ": interrupted answer to " + key + " was not superseded");
        // A partial is consolidated into the history unless it is empty.
        const bool any_tokens = std::any_of(first.messages.begin(), first.messages.end(), [&](const ServerMessage& m) {
          const auto* tok = std::get_if<AnswerToken>(&m);
          return tok && tok->turn_id == answer_id;
        });
        if (ans == turns.end()) {
          c.expect(!any_tokens, tag + ": partial answer to " + key + " was streamed but not consolidated");
        } else {
          c.expect(ans->source == TurnSource::Assistant && !ans->content.empty(),
                   tag + ": consolidated answer to " + key + " is malformed");
        }
      } else if (ans == turns.end()) {
        c.expect(false, tag + ": query " + key + " has no answer turn");
      } else {
        c.expect(ans->source == TurnSource::Assistant, tag + ": answer turn of " + key + " is not the assistant's");
        c.expect(ans->completed, tag + ": answer to " + key + " not completed");
      }
    }
    c.eq(first.stats.answered, static_cast<std::int64_t>(g.queries.size()), tag + " answered");
    c.eq(first.stats.suppressed, static_cast<std::int64_t>(g.noises.size()), tag + " suppressed");
  }
  c.expect(interrupts > 50, "random scenarios produced too few interrupts: " + std::to_string(interrupts));
  c.expect(suppressed > 100, "random scenarios produced too few suppressions: " + std::to_string(suppressed));
  c.expect(swaps > 50, "random scenarios produced too few swaps: " + std::to_string(swaps));
}

// --- 6. noise then barge-in reenactment ---------------------------------------------------

void barge_in_reenactment(Check& c) {
  const Scenario s = load_scenario(std::filesystem::path(DUPLEX_SCENARIO_DIR) / "noise_then_barge_in.json");
  const ScenarioReport r = run_scenario(s);
  c.eq(r.stats.answered, 2, "answered");
  c.eq(r.stats.suppressed, 1, "suppressed");
  c.eq(r.stats.interrupts, 1, "interrupts");
  for (const auto& v : r.violations) c.expect(false, v);

  // Ordering in the trace: the interrupting verdict cancels both requests,
  // consolidation waits for the cancellations, then the roles swap and the
  // new answer is submitted.
  long interrupt_seq = -1, consolidate_seq = -1, swap_seq = -1, submit_seq = -1;
  std::set<std::string> cancelled, acknowledged;
  for (const auto& line : r.trace) {
    const Json rec = Json::parse(line);
    const long seq = rec["seq"].get<long>();
    for (const auto& a : rec["actions"]) {
      if (a["action"] == "cancel") cancelled.insert(a["request_id"].get<std::string>());
      if (a["action"] == "notify" && a["message"]["state"] == "interrupted" && interrupt_seq < 0) {
        interrupt_seq = seq;
      }
      if (a["action"] == "notify" && a["message"]["state"] == "swap" && swap_seq < 0) swap_seq = seq;
      if (a["action"] == "submit" && swap_seq >= 0 && submit_seq < 0) submit_seq = seq;
    }
    const Json& ev = rec["event"];
    if (ev["kind"] == "BackendEv" && ev["event"]["kind"] == "Cancelled" && consolidate_seq < 0) {
      acknowledged.insert(ev["request_id"].get<std::string>());
    }
    for (const auto& note : rec["notes"]) {
      if (note.get<std::string>().rfind("consolidate turn", 0) == 0 && consolidate_seq < 0) consolidate_seq = seq;
    }
  }
  c.expect(interrupt_seq >= 0, "no interrupted event in the trace");
  c.eq(cancelled.size(), std::size_t{2}, "requests cancelled by the interrupt");
  c.expect(acknowledged == cancelled, "consolidation ran before both cancellations were acknowledged");
  c.expect(interrupt_seq < consolidate_seq, "consolidation does not follow the interrupt");
  c.expect(consolidate_seq >= 0 && consolidate_seq <= swap_seq, "swap does not follow consolidation");
  c.expect(swap_seq >= 0 && swap_seq <= submit_seq, "no submit after the swap");

  std::printf("    report: {answered: %lld, suppressed: %lld, interrupts: %lld}\n",
              static_cast<long long>(r.stats.answered), static_cast<long long>(r.stats.suppressed),
              static_cast<long long>(r.stats.interrupts));
  for (const auto& line : r.trace) {
    const Json rec = Json::parse(line);
    const long seq = rec["seq"].get<long>();
    if (seq < interrupt_seq || seq > submit_seq) continue;
    std::string summary;
    for (const auto& a : rec["actions"]) {
      summary += " " + a["action"].get<std::string>();
      if (a["action"] == "notify") summary += "(" + a["message"].value("state", a["message"]["type"].get<std::string>()) + ")";
      if (a.contains("request_id")) summary += "(" + a["request_id"].get<std::string>() + ")";
    }
    const Json& ev = rec["event"];
    std::string what = ev["kind"].get<std::string>();
    if (what == "BackendEv") what += " " + ev["slot"].get<std::string>() + " " + ev["event"]["kind"].get<std::string>();
    std::printf("    seq %ld %-22s ->%s\n", seq, what.c_str(), summary.empty() ? " (none)" : summary.c_str());
  }
}

// --- 7. protocol checker ---------------------------------------------------------------------

backend::BackendEvent event_from_trace(const Json& ev) {
  const std::string kind = ev["kind"];
  if (kind == "Classified") return backend::BackendEvent::classified(ev["state_token"].get<StateToken>());
  if (kind == "Token") return backend::BackendEvent::token(ev["text"]);
  if (kind == "Done") return backend::BackendEvent::done();
  if (kind == "Cancelled") return backend::BackendEvent::cancelled();
  return backend::BackendEvent::failed(ev.value("reason", ""));
}

std::string check_backend_stream(const std::vector<backend::BackendEvent>& events) {
  backend::StreamChecker checker;
  for (const auto& e : events) {
    if (auto v = checker.check(e); !v.empty()) return v;
  }
  return {};
}

std::string check_client_stream(const std::vector<ServerMessage>& messages) {
  ServerStreamChecker checker;
  for (const auto& m : messages) {
    if (auto v = checker.check(m); !v.empty()) return v;
  }
  return {};
}

void protocol_checker(Check& c) {
  oracle::Rng rng(7);
  int seeded = 0;
  for (int i = 0; i < 60; ++i) {
    const Generated g = random_scenario(rng, i);
    const ScenarioReport r = run_scenario(g.scenario);
    const std::string tag = g.scenario.name;

    // Backend streams, regrouped per request from the trace.
    std::map<std::string, std::vector<backend::BackendEvent>> streams;
    for (const auto& line : r.trace) {
      const Json rec = Json::parse(line);
      if (rec["event"]["kind"] == "BackendEv") {
        streams[rec["event"]["request_id"]].push_back(event_from_trace(rec["event"]["event"]));
      }
    }
    for (const auto& [rid, events] : streams) {
      const std::string v = check_backend_stream(events);
      c.expect(v.empty(), tag + " " + rid + " rejected: " + v);
      c.expect(!events.empty() && events.back().terminal(), tag + " " + rid + " has no terminal event");

      const auto first_token = std::find_if(events.begin(), events.end(),
                                            [](const auto& e) { return e.kind == backend::EventKind::Token; });
      if (first_token != events.end()) {
        auto moved = events;
        const auto pos = static_cast<std::size_t>(first_token - events.begin());
        std::rotate(moved.begin(), moved.begin() + static_cast<long>(pos), moved.begin() + static_cast<long>(pos) + 1);
        c.eq(check_backend_stream(moved), std::string("protocol: token before state token"),
             tag + " " + rid + " token moved before the state token");
        ++seeded;
      }
      auto doubled = events;
      doubled.push_back(events.back());
      c.eq(check_backend_stream(doubled), std::string("protocol: double terminal"),
           tag + " " + rid + " duplicated terminal");
      ++seeded;
    }

    // Client stream.
    c.expect(check_client_stream(r.messages).empty(), tag + " client stream rejected: " + check_client_stream(r.messages));
    for (std::size_t k = 0; k < r.messages.size(); ++k) {
      const auto* ev = std::get_if<StateEvent>(&r.messages[k]);
      if (!ev || ev->state != ClientState::Generating) continue;
      // Token ahead of the state event that opens its turn.
      auto early = r.messages;
      early.insert(early.begin() + static_cast<long>(k), AnswerToken{"x", *ev->turn_id});
      c.expect(!check_client_stream(early).empty(), tag + " token before generating accepted");
      ++seeded;
    }
    for (std::size_t k = 0; k < r.messages.size(); ++k) {
      const bool terminal = std::holds_alternative<AnswerDone>(r.messages[k]) ||
                            (std::holds_alternative<StateEvent>(r.messages[k]) &&
                             std::get<StateEvent>(r.messages[k]).state == ClientState::Interrupted);
      if (!terminal) continue;
      auto doubled = r.messages;
      doubled.insert(doubled.begin() + static_cast<long>(k) + 1, r.messages[k]);
      c.expect(!check_client_stream(doubled).empty(), tag + " double terminal accepted");
      ++seeded;
    }
  }
  c.expect(seeded > 200, "too few seeded violations: " + std::to_string(seeded));
}

}  // namespace

int main() {
  run_criterion(1, "token arithmetic", 1.0, token_arithmetic);
  run_criterion(2, "packer: 1000 random cases", 30.0, packer_properties);
  run_criterion(3, "noise sampler", 10.0, noise_sampler);
  run_criterion(4, "VAD chunking invariance, 200 signals", 30.0, vad_invariance);
  run_criterion(5, "500 randomized duplex scenarios", 120.0, duplex_scenarios);
  run_criterion(6, "noise then barge-in reenactment", 5.0, barge_in_reenactment);
  run_criterion(7, "protocol checker", 5.0, protocol_checker);
  std::printf("%s: %d criteria failed\n", failed_criteria ? "FAIL" : "PASS", failed_criteria);
  return failed_criteria == 0 ? 0 : 1;
}
