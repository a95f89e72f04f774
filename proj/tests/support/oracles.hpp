#pragma once

// Independent reference implementations and random generators for tests.
// Nothing here calls the code under test for the value being checked.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <random>
#include <string>
#include <vector>

namespace oracle {

using Rng = std::mt19937_64;

inline long long uniform(Rng& rng, long long lo, long long hi) {
  return std::uniform_int_distribution<long long>(lo, hi)(rng);
}

inline double uniform_real(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

// --- token arithmetic -------------------------------------------------------

/// Frame rule restated: < 4 s -> 4, 4..16 s -> floor(d), > 16 s -> 16.
inline int video_frames(double d) {
  if (d < 4.0) return 4;
  if (d > 16.0) return 16;
  return static_cast<int>(std::floor(d));
}

/// Audio tokens in integer microseconds: ceil(ceil(us / 10000) / 8).
inline long long audio_tokens_us(long long us) {
  const long long frames = (us + 9'999) / 10'000;
  return (frames + 7) / 8;
}

/// Exhaustive grid search with the documented objective and tie-breaks,
/// using doubles (the production code compares exactly).
struct Grid {
  int rows;
  int cols;
};
inline Grid best_grid(long long w, long long h, int max_tiles) {
  Grid best{1, 1};
  double best_err = 1e300;
  const double target = static_cast<double>(w) / static_cast<double>(h);
  for (int r = 1; r <= max_tiles; ++r) {
    for (int c = 1; r * c <= max_tiles; ++c) {
      const double err = std::fabs(std::log((static_cast<double>(c) / r) / target));
      const bool better = err < best_err - 1e-12 ||
                          (std::fabs(err - best_err) <= 1e-12 &&
                           (r * c < best.rows * best.cols || (r * c == best.rows * best.cols && r < best.rows)));
      if (better) {
        best = {r, c};
        best_err = err;
      }
    }
  }
  return best;
}

// --- mel scale --------------------------------------------------------------

inline double mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double inv_mel(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

/// Centers of `bins` triangular filters spread evenly in mel over [0, sr/2].
inline std::vector<double> mel_centers(int sample_rate, int bins) {
  const double top = mel(sample_rate / 2.0);
  std::vector<double> out;
  for (int k = 1; k <= bins; ++k) out.push_back(inv_mel(top * k / (bins + 1)));
  return out;
}

inline std::vector<float> sine(double freq, double seconds, int sample_rate, double amplitude = 0.5) {
  std::vector<float> out(static_cast<std::size_t>(seconds * sample_rate));
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<float>(amplitude * std::sin(2.0 * std::numbers::pi * freq * i / sample_rate));
  }
  return out;
}

// --- packing ----------------------------------------------------------------

struct Item {
  long long cost;
  bool video;
};

/// Bins as lists of item indices. Simulates first-fit literally: every item
/// scans all bins from the first, tracking fill as a running sum of members.
inline std::vector<std::vector<int>> first_fit(const std::vector<Item>& items, long long cap) {
  std::vector<std::vector<int>> bins;
  std::vector<bool> video_bin;
  for (int i = 0; i < static_cast<int>(items.size()); ++i) {
    if (items[i].video) {
      bins.push_back({i});
      video_bin.push_back(true);
      continue;
    }
    bool placed = false;
    for (std::size_t b = 0; b < bins.size() && !placed; ++b) {
      if (video_bin[b]) continue;
      long long fill = 0;
      for (int m : bins[b]) fill += items[m].cost;
      if (fill + items[i].cost <= cap) {
        bins[b].push_back(i);
        placed = true;
      }
    }
    if (!placed) {
      bins.push_back({i});
      video_bin.push_back(false);
    }
  }
  return bins;
}

// --- largest remainder --------------------------------------------------------

/// Quotas per bucket (length / 5) proportional to counts, summing to k.
/// Computed with exact rational arithmetic; remainders compared by
/// cross-multiplication, ties to the lower bucket.
inline std::map<int, long long> largest_remainder(const std::vector<int>& lengths, long long k) {
  std::map<int, long long> counts;
  for (int len : lengths) ++counts[len / 5];
  const long long n = static_cast<long long>(lengths.size());
  std::map<int, long long> quota;
  std::vector<std::pair<long long, int>> rema;  // (remainder numerator over n, bucket)
  long long assigned = 0;
  for (auto [bucket, c] : counts) {
    quota[bucket] = c * k / n;
    assigned += quota[bucket];
    rema.emplace_back(c * k % n, bucket);
  }
  std::stable_sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (long long i = 0; i < k - assigned; ++i) ++quota[rema[static_cast<std::size_t>(i)].second];
  return quota;
}

inline std::string words(int n, Rng& rng) {
  static const char* vocab[] = {"alpha", "bravo", "charlie", "delta", "echo", "fox", "golf", "hotel"};
  std::string s;
  for (int i = 0; i < n; ++i) {
    if (i) s += ' ';
    s += vocab[uniform(rng, 0, 7)];
  }
  return s;
}

}  // namespace oracle
