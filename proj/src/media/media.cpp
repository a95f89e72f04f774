#include "duplex/media.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numbers>

#include <fftw3.h>

namespace duplex::media {

int tile_token_count(int rows, int cols, bool thumbnail) {
  return kTokensPerTile * (rows * cols + (thumbnail ? 1 : 0));
}

FramePlan plan_video_frames(double duration_s) {
  if (!(duration_s > 0.0) || !std::isfinite(duration_s)) {
    throw PreconditionError("plan_video_frames: duration must be positive");
  }
  int count;
  if (duration_s < kMinVideoFrames) {
    count = kMinVideoFrames;
  } else if (duration_s <= kMaxVideoFrames) {
    count = static_cast<int>(std::floor(duration_s));
  } else {
    count = kMaxVideoFrames;
  }
  FramePlan plan;
  plan.frame_count = count;
  plan.timestamps.reserve(count);
  for (int i = 0; i < count; ++i) {
    plan.timestamps.push_back((i + 0.5) * duration_s / count);
  }
  return plan;
}

namespace {

// Distortion of grid (rows, cols) against an image, as the exact ratio
// hi/lo >= 1 of c*h and r*w. Smaller is a closer aspect match.
struct Distortion {
  __int128 hi;
  __int128 lo;
};

Distortion distortion(std::int64_t rows, std::int64_t cols, std::int64_t width, std::int64_t height) {
  const __int128 a = static_cast<__int128>(cols) * height;
  const __int128 b = static_cast<__int128>(rows) * width;
  return a >= b ? Distortion{a, b} : Distortion{b, a};
}

// -1 if x < y, 0 if equal, 1 if x > y.
int compare(const Distortion& x, const Distortion& y) {
  const __int128 lhs = x.hi * y.lo;
  const __int128 rhs = y.hi * x.lo;
  return lhs < rhs ? -1 : (lhs > rhs ? 1 : 0);
}

}  // namespace

TilePlan plan_image_tiles(std::int64_t width, std::int64_t height, int max_tiles) {
  if (width < 1 || height < 1) throw PreconditionError("plan_image_tiles: dimensions must be >= 1");
  if (max_tiles < 1) throw PreconditionError("plan_image_tiles: max_tiles must be >= 1");
  constexpr std::int64_t kMaxSide = std::int64_t{1} << 31;
  if (width > kMaxSide || height > kMaxSide) throw PreconditionError("plan_image_tiles: image too large");

  int best_r = 1;
  int best_c = 1;
  Distortion best = distortion(1, 1, width, height);
  for (int r = 1; r <= max_tiles; ++r) {
    for (int c = 1; r * c <= max_tiles; ++c) {
      const Distortion d = distortion(r, c, width, height);
      const int cmp = compare(d, best);
      const bool better =
          cmp < 0 || (cmp == 0 && (r * c < best_r * best_c || (r * c == best_r * best_c && r < best_r)));
      if (better) {
        best = d;
        best_r = r;
        best_c = c;
      }
    }
  }
  TilePlan plan;
  plan.rows = best_r;
  plan.cols = best_c;
  plan.thumbnail = best_r * best_c > 1;
  plan.token_count = tile_token_count(plan.rows, plan.cols, plan.thumbnail);
  return plan;
}

TilePlan video_frame_plan() { return TilePlan{1, 1, false, kTokensPerTile}; }

int video_token_count(double duration_s) {
  return plan_video_frames(duration_s).frame_count * video_frame_plan().token_count;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

namespace {

// num_bins + 2 edge frequencies, equally spaced on the mel scale.
std::vector<double> mel_edges(int sample_rate, int num_bins) {
  const double top = hz_to_mel(sample_rate / 2.0);
  std::vector<double> edges(num_bins + 2);
  for (int i = 0; i < num_bins + 2; ++i) {
    edges[i] = mel_to_hz(top * i / (num_bins + 1));
  }
  return edges;
}

// fftw's planner is not reentrant.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace

std::vector<double> mel_center_frequencies(int sample_rate, int num_bins) {
  auto edges = mel_edges(sample_rate, num_bins);
  return {edges.begin() + 1, edges.end() - 1};
}

MelSpectrogram mel_features(std::span<const float> pcm, int sample_rate, const MelConfig& config) {
  if (sample_rate <= 0) throw PreconditionError("mel_features: sample_rate must be positive");
  if (!(config.hop_s > 0.0) || config.window_s < config.hop_s) {
    throw PreconditionError("mel_features: require window_s >= hop_s > 0");
  }
  if (config.num_bins < 1) throw PreconditionError("mel_features: num_bins must be >= 1");
  if (!(config.energy_floor > 0.0)) throw PreconditionError("mel_features: energy_floor must be positive");

  MelSpectrogram out;
  out.frame_hop = config.hop_s;
  out.sample_rate = sample_rate;
  if (pcm.empty()) return out;

  const auto hop = std::max<std::int64_t>(1, std::llround(config.hop_s * sample_rate));
  const auto win = std::max<std::int64_t>(1, std::llround(config.window_s * sample_rate));
  std::int64_t n_fft = 1;
  while (n_fft < win) n_fft <<= 1;
  const std::int64_t n_bins_fft = n_fft / 2 + 1;
  const auto n = static_cast<std::int64_t>(pcm.size());
  const std::int64_t num_frames = (n + hop - 1) / hop;

  std::vector<double> window(win);
  for (std::int64_t i = 0; i < win; ++i) {
    window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / win);
  }

  // Triangular filters sampled at FFT bin frequencies.
  const auto edges = mel_edges(sample_rate, config.num_bins);
  std::vector<std::vector<double>> weights(config.num_bins, std::vector<double>(n_bins_fft, 0.0));
  for (int m = 0; m < config.num_bins; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    for (std::int64_t k = 0; k < n_bins_fft; ++k) {
      const double f = static_cast<double>(k) * sample_rate / n_fft;
      double w = 0.0;
      if (f > lo && f <= mid) {
        w = (f - lo) / (mid - lo);
      } else if (f > mid && f < hi) {
        w = (hi - f) / (hi - mid);
      }
      weights[m][k] = w;
    }
  }

  double* in = fftw_alloc_real(n_fft);
  fftw_complex* spectrum = fftw_alloc_complex(n_bins_fft);
  fftw_plan plan;
  {
    std::lock_guard lock(planner_mutex());
    plan = fftw_plan_dft_r2c_1d(static_cast<int>(n_fft), in, spectrum, FFTW_ESTIMATE);
  }

  const double log_floor = std::log(config.energy_floor);
  std::vector<double> power(n_bins_fft);
  out.frames.assign(num_frames, std::vector<double>(config.num_bins, log_floor));
  for (std::int64_t t = 0; t < num_frames; ++t) {
    const std::int64_t start = t * hop - win / 2;
    std::fill(in, in + n_fft, 0.0);
    for (std::int64_t i = 0; i < win; ++i) {
      const std::int64_t s = start + i;
      if (s >= 0 && s < n) in[i] = static_cast<double>(pcm[s]) * window[i];
    }
    fftw_execute(plan);
    for (std::int64_t k = 0; k < n_bins_fft; ++k) {
      power[k] = spectrum[k][0] * spectrum[k][0] + spectrum[k][1] * spectrum[k][1];
    }
    auto& row = out.frames[t];
    for (int m = 0; m < config.num_bins; ++m) {
      double e = 0.0;
      for (std::int64_t k = 0; k < n_bins_fft; ++k) e += weights[m][k] * power[k];
      row[m] = std::log(std::max(e, config.energy_floor));
    }
  }

  {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan);
  }
  fftw_free(spectrum);
  fftw_free(in);
  return out;
}

int audio_token_count(double duration_s) {
  if (!(duration_s >= 0.0) || !std::isfinite(duration_s)) {
    throw PreconditionError("audio_token_count: duration must be non-negative");
  }
  const std::int64_t micros = std::llround(duration_s * 1e6);
  const std::int64_t frames = (micros + kAudioHopMicros - 1) / kAudioHopMicros;
  return static_cast<int>((frames + kAudioDownsample - 1) / kAudioDownsample);
}

Json token_budget(const Json& manifest) {
  const int max_tiles = manifest.value("max_tiles", kDefaultMaxTiles);
  Json out;
  long long total = 0;

  const int text_tokens = manifest.value("text_tokens", 0);
  if (text_tokens < 0) throw PreconditionError("tokenize: text_tokens must be non-negative");
  out["text_tokens"] = text_tokens;
  total += text_tokens;

  Json images = Json::array();
  for (const auto& img : manifest.value("images", Json::array())) {
    TilePlan plan = plan_image_tiles(img.at("width").get<std::int64_t>(),
                                     img.at("height").get<std::int64_t>(),
                                     img.value("max_tiles", max_tiles));
    Json entry = plan;
    entry["width"] = img.at("width");
    entry["height"] = img.at("height");
    images.push_back(entry);
    total += plan.token_count;
  }
  out["images"] = images;

  Json videos = Json::array();
  for (const auto& vid : manifest.value("videos", Json::array())) {
    const double d = vid.at("duration").get<double>();
    FramePlan plan = plan_video_frames(d);
    Json entry = plan;
    entry["duration"] = d;
    entry["token_count"] = plan.frame_count * kTokensPerTile;
    videos.push_back(entry);
    total += plan.frame_count * kTokensPerTile;
  }
  out["videos"] = videos;

  Json audio = Json::array();
  for (const auto& clip : manifest.value("audio", Json::array())) {
    const double d = clip.at("duration").get<double>();
    const int tokens = audio_token_count(d);
    audio.push_back(Json{{"duration", d}, {"token_count", tokens}});
    total += tokens;
  }
  out["audio"] = audio;
  out["total"] = total;
  return out;
}

void to_json(Json& j, const FramePlan& p) {
  j = Json{{"frame_count", p.frame_count}, {"timestamps", p.timestamps}};
}

void to_json(Json& j, const TilePlan& p) {
  j = Json{{"rows", p.rows}, {"cols", p.cols}, {"thumbnail", p.thumbnail}, {"token_count", p.token_count}};
}

void from_json(const Json& j, TilePlan& p) {
  p.rows = j.at("rows").get<int>();
  p.cols = j.at("cols").get<int>();
  p.thumbnail = j.value("thumbnail", p.rows * p.cols > 1);
  if (p.rows < 1 || p.cols < 1) throw PreconditionError("TilePlan: rows and cols must be >= 1");
  const int expected = tile_token_count(p.rows, p.cols, p.thumbnail);
  p.token_count = j.value("token_count", expected);
  if (p.token_count != expected) {
    throw PreconditionError("TilePlan: token_count " + std::to_string(p.token_count) +
                            " inconsistent with grid (expected " + std::to_string(expected) + ")");
  }
}

}  // namespace duplex::media
