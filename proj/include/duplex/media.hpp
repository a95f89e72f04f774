#pragma once

// Media-to-token budget arithmetic: video frame sampling, image tiling and
// audio feature extraction / token counting.

#include <cstdint>
#include <span>
#include <vector>

#include "duplex/session.hpp"

namespace duplex::media {

inline constexpr int kTokensPerTile = 256;
inline constexpr int kTileSide = 448;
inline constexpr int kDefaultMaxTiles = 12;
inline constexpr int kMinVideoFrames = 4;
inline constexpr int kMaxVideoFrames = 16;

struct FramePlan {
  int frame_count = 0;
  std::vector<double> timestamps;  // seconds, ascending
};

struct TilePlan {
  int rows = 1;
  int cols = 1;
  bool thumbnail = false;
  int token_count = kTokensPerTile;

  int tiles() const { return rows * cols; }
  bool operator==(const TilePlan&) const = default;
};

/// 256 tokens per tile, plus one thumbnail tile when present.
int tile_token_count(int rows, int cols, bool thumbnail);

/// Under 4 s: 4 frames. 4..16 s: one per whole second. Over 16 s: 16 frames.
/// Frames sit at the midpoints of equal-width intervals.
FramePlan plan_video_frames(double duration_s);

/// Aspect-ratio-matched grid with at most max_tiles tiles. Ties prefer fewer
/// tiles, then fewer rows. A thumbnail tile accompanies any multi-tile grid.
TilePlan plan_image_tiles(std::int64_t width, std::int64_t height, int max_tiles = kDefaultMaxTiles);

/// Video frames are never tiled.
TilePlan video_frame_plan();

/// Total visual tokens for a video of the given duration.
int video_token_count(double duration_s);

struct MelConfig {
  double window_s = 0.025;
  double hop_s = 0.010;
  int num_bins = 80;
  double energy_floor = 1e-10;
};

struct MelSpectrogram {
  std::vector<std::vector<double>> frames;  // [num_frames][num_bins] log energies
  double frame_hop = 0.010;
  int sample_rate = 16000;

  std::size_t num_frames() const { return frames.size(); }
};

/// Center-padded framing, Hann window, power spectrum, triangular mel filters
/// over [0, sample_rate / 2] and a floored natural log.
MelSpectrogram mel_features(std::span<const float> pcm, int sample_rate, const MelConfig& config = {});

/// Mel-scale conversions (HTK formula).
double hz_to_mel(double hz);
double mel_to_hz(double mel);
/// Center frequency in Hz of each triangular filter.
std::vector<double> mel_center_frequencies(int sample_rate, int num_bins);

inline constexpr int kAudioHopMicros = 10'000;
inline constexpr int kAudioDownsample = 8;

/// ceil(ceil(duration / 10 ms) / 8): 2 s of audio is 25 tokens. The duration is
/// first rounded to whole microseconds.
int audio_token_count(double duration_s);

/// Token budget of a media manifest. See the `tokenize` CLI.
Json token_budget(const Json& manifest);

void to_json(Json& j, const FramePlan& p);
void to_json(Json& j, const TilePlan& p);
void from_json(const Json& j, TilePlan& p);

}  // namespace duplex::media
