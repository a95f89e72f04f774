#include "duplex/vad.hpp"

#include <cmath>
#include <limits>

namespace duplex::vad {

void VadConfig::check() const {
  if (sample_rate <= 0) throw PreconditionError("vad: sample_rate must be positive");
  if (frame_ms <= 0) throw PreconditionError("vad: frame_ms must be positive");
  if (frame_samples() < 1) throw PreconditionError("vad: frame shorter than one sample");
  if (hangover_frames < 0) throw PreconditionError("vad: hangover_frames must be >= 0");
  if (min_utterance_ms < frame_ms) throw PreconditionError("vad: min_utterance_ms must be >= frame_ms");
}

double frame_level_db(std::span<const Sample> frame) {
  if (frame.empty()) return -std::numeric_limits<double>::infinity();
  double sum_sq = 0.0;
  for (Sample s : frame) sum_sq += static_cast<double>(s) * s;
  const double rms = std::sqrt(sum_sq / static_cast<double>(frame.size()));
  return 20.0 * std::log10(rms / 32768.0);
}

double EnergyClassifier::classify_frame(std::span<const Sample> frame) const {
  return frame_level_db(frame) >= threshold_db_ ? 1.0 : 0.0;
}

VadStream::VadStream(VadConfig config, std::shared_ptr<const FrameClassifier> classifier)
    : config_(config), classifier_(std::move(classifier)) {
  config_.check();
  if (!classifier_) classifier_ = std::make_shared<EnergyClassifier>(config_.energy_threshold_db);
}

double VadStream::frame_time(std::int64_t frame_index) const {
  return static_cast<double>(frame_index * config_.frame_samples()) / config_.sample_rate;
}

std::vector<VadEvent> VadStream::process_chunk(std::span<const Sample> chunk) {
  std::vector<VadEvent> events;
  const auto frame_len = static_cast<std::size_t>(config_.frame_samples());
  samples_seen_ += static_cast<std::int64_t>(chunk.size());

  std::size_t pos = 0;
  if (!pending_.empty()) {
    const std::size_t take = std::min(frame_len - pending_.size(), chunk.size());
    pending_.insert(pending_.end(), chunk.begin(), chunk.begin() + take);
    pos = take;
    if (pending_.size() == frame_len) {
      std::vector<Sample> frame;
      frame.swap(pending_);
      on_frame(frame, events);
    }
  }
  while (chunk.size() - pos >= frame_len) {
    on_frame(chunk.subspan(pos, frame_len), events);
    pos += frame_len;
  }
  pending_.insert(pending_.end(), chunk.begin() + pos, chunk.end());
  return events;
}

void VadStream::on_frame(std::span<const Sample> frame, std::vector<VadEvent>& events) {
  const std::int64_t index = frame_index_++;
  const bool speech = classifier_->classify_frame(frame) >= 0.5;

  if (!in_speech_) {
    if (!speech) return;
    in_speech_ = true;
    confirmed_ = false;
    start_frame_ = index;
    last_speech_frame_ = index;
    silence_run_ = 0;
    segment_pcm_.assign(frame.begin(), frame.end());
  } else {
    if (speech) {
      last_speech_frame_ = index;
      silence_run_ = 0;
    } else {
      ++silence_run_;
    }
    // Frames past the hangover window never belong to the segment.
    if (silence_run_ <= config_.hangover_frames) segment_pcm_.insert(segment_pcm_.end(), frame.begin(), frame.end());
  }

  const std::int64_t speech_frames = last_speech_frame_ - start_frame_ + 1;
  const double speech_ms = static_cast<double>(speech_frames * config_.frame_samples()) * 1000.0 / config_.sample_rate;
  if (!confirmed_ && speech_ms >= config_.min_utterance_ms) {
    confirmed_ = true;
    events.emplace_back(SpeechStart{frame_time(start_frame_)});
  }

  const bool closing = config_.hangover_frames == 0 ? !speech : silence_run_ >= config_.hangover_frames;
  if (closing) close_segment(events);
}

void VadStream::close_segment(std::vector<VadEvent>& events) {
  if (confirmed_) {
    const std::int64_t end_frame = last_speech_frame_ + 1 + std::min(silence_run_, config_.hangover_frames);
    AudioSegment seg;
    seg.segment_id = next_segment_id_++;
    seg.start_time = frame_time(start_frame_);
    seg.end_time = frame_time(end_frame);
    const auto keep = static_cast<std::size_t>((end_frame - start_frame_) * config_.frame_samples());
    if (segment_pcm_.size() > keep) segment_pcm_.resize(keep);
    seg.pcm = std::move(segment_pcm_);
    events.emplace_back(SpeechEnd{seg.end_time, std::move(seg)});
  }
  segment_pcm_.clear();
  in_speech_ = false;
  confirmed_ = false;
  silence_run_ = 0;
}

std::vector<VadEvent> VadStream::flush() {
  std::vector<VadEvent> events;
  pending_.clear();
  if (in_speech_) close_segment(events);
  return events;
}

std::vector<Sample> decode_pcm16le(std::string_view bytes) {
  if (bytes.size() % 2 != 0) {
    throw PreconditionError("pcm: odd byte count " + std::to_string(bytes.size()) + " for 16-bit samples");
  }
  std::vector<Sample> out(bytes.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto lo = static_cast<std::uint8_t>(bytes[2 * i]);
    const auto hi = static_cast<std::uint8_t>(bytes[2 * i + 1]);
    out[i] = static_cast<Sample>(static_cast<std::uint16_t>(lo | (hi << 8)));
  }
  return out;
}

std::string encode_pcm16le(std::span<const Sample> samples) {
  std::string out(samples.size() * 2, '\0');
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto u = static_cast<std::uint16_t>(samples[i]);
    out[2 * i] = static_cast<char>(u & 0xff);
    out[2 * i + 1] = static_cast<char>(u >> 8);
  }
  return out;
}

void to_json(Json& j, const VadConfig& c) {
  j = Json{{"sample_rate", c.sample_rate},
           {"frame_ms", c.frame_ms},
           {"energy_threshold_db", c.energy_threshold_db},
           {"hangover_frames", c.hangover_frames},
           {"min_utterance_ms", c.min_utterance_ms}};
}

void from_json(const Json& j, VadConfig& c) {
  c.sample_rate = j.value("sample_rate", c.sample_rate);
  c.frame_ms = j.value("frame_ms", c.frame_ms);
  c.energy_threshold_db = j.value("energy_threshold_db", c.energy_threshold_db);
  c.hangover_frames = j.value("hangover_frames", c.hangover_frames);
  c.min_utterance_ms = j.value("min_utterance_ms", c.min_utterance_ms);
  c.check();
}

void to_json(Json& j, const AudioSegment& s) {
  j = Json{{"segment_id", s.segment_id},
           {"start_time", s.start_time},
           {"end_time", s.end_time},
           {"samples", s.pcm.size()}};
  if (!s.utterance.empty()) j["utterance"] = s.utterance;
}

}  // namespace duplex::vad
