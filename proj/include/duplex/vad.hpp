#pragma once

// Streaming voice-activity detection and utterance segmentation.

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "duplex/session.hpp"

namespace duplex::vad {

using Sample = std::int16_t;

struct VadConfig {
  int sample_rate = 16000;
  int frame_ms = 30;
  double energy_threshold_db = -40.0;  // dBFS
  int hangover_frames = 10;
  int min_utterance_ms = 200;

  int frame_samples() const { return sample_rate * frame_ms / 1000; }
  /// Throws PreconditionError when the invariants do not hold.
  void check() const;
};

struct AudioSegment {
  std::int64_t segment_id = 0;
  std::vector<Sample> pcm;
  double start_time = 0.0;  // seconds from stream start
  double end_time = 0.0;
  /// Optional key naming the injected utterance this segment carries
  /// (scenario runs and labelled client audio). Empty when unknown.
  std::string utterance;

  double duration() const { return end_time - start_time; }
  bool operator==(const AudioSegment&) const = default;
};

struct SpeechStart {
  double time = 0.0;
};
struct SpeechEnd {
  double time = 0.0;
  AudioSegment segment;
};
using VadEvent = std::variant<SpeechStart, SpeechEnd>;

/// Per-frame speech scorer. Implementations must be stateless.
class FrameClassifier {
 public:
  virtual ~FrameClassifier() = default;
  /// Probability in [0, 1] that the frame contains speech.
  virtual double classify_frame(std::span<const Sample> frame) const = 0;
};

/// RMS level of a frame in dBFS (full scale = 32768). -inf for silence.
double frame_level_db(std::span<const Sample> frame);

/// 1.0 when the frame level reaches the threshold (inclusive), else 0.0.
class EnergyClassifier final : public FrameClassifier {
 public:
  explicit EnergyClassifier(double threshold_db) : threshold_db_(threshold_db) {}
  double classify_frame(std::span<const Sample> frame) const override;

 private:
  double threshold_db_;
};

/// Frame-synchronous detector over one audio stream. Value type: copying it
/// forks the stream state. Chunk boundaries never affect the emitted events.
class VadStream {
 public:
  explicit VadStream(VadConfig config = {}, std::shared_ptr<const FrameClassifier> classifier = nullptr);

  std::vector<VadEvent> process_chunk(std::span<const Sample> chunk);
  /// Ends the stream, closing any open utterance as if silence followed.
  std::vector<VadEvent> flush();

  const VadConfig& config() const { return config_; }
  /// Samples consumed so far, including any partial frame.
  std::int64_t samples_seen() const { return samples_seen_; }
  bool in_speech() const { return in_speech_; }

 private:
  void on_frame(std::span<const Sample> frame, std::vector<VadEvent>& events);
  void close_segment(std::vector<VadEvent>& events);
  double frame_time(std::int64_t frame_index) const;

  VadConfig config_;
  std::shared_ptr<const FrameClassifier> classifier_;
  std::vector<Sample> pending_;       // partial frame carried between chunks
  std::vector<Sample> segment_pcm_;   // samples since segment start
  std::int64_t samples_seen_ = 0;
  std::int64_t frame_index_ = 0;      // index of the next frame to classify
  std::int64_t next_segment_id_ = 1;
  bool in_speech_ = false;
  bool confirmed_ = false;            // SpeechStart already emitted
  std::int64_t start_frame_ = 0;
  std::int64_t last_speech_frame_ = 0;
  int silence_run_ = 0;
};

/// Decodes 16-bit signed little-endian mono PCM. Odd byte counts are rejected.
std::vector<Sample> decode_pcm16le(std::string_view bytes);
std::string encode_pcm16le(std::span<const Sample> samples);

void to_json(Json& j, const VadConfig& c);
void from_json(const Json& j, VadConfig& c);
/// Segment metadata only; PCM is summarized by its sample count.
void to_json(Json& j, const AudioSegment& s);

}  // namespace duplex::vad
