#pragma once

// Offline data preparation: concatenating training samples into fixed-size
// contexts, and sampling a noise-query corpus whose length distribution
// follows that of real questions.

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "duplex/media.hpp"

namespace duplex::packer {

inline constexpr long long kDefaultContextCap = 6000;
inline constexpr int kLengthBucketWidth = 5;

struct ModalityProfile {
  long long text_tokens = 0;
  std::vector<media::TilePlan> image_plans;
  std::vector<double> audio_seconds;
  bool is_video = false;
};

struct Sample {
  std::string sample_id;
  ModalityProfile modality_profile;
  std::string payload_ref;

  long long token_cost() const;
};

struct PackedBin {
  std::int64_t bin_id = 0;
  std::vector<Sample> members;
  long long total_tokens = 0;
};

/// Raised when a non-video sample cannot fit in any context.
class OversizedSampleError : public std::runtime_error {
 public:
  OversizedSampleError(std::string sample_id, long long cost, long long cap);
  const std::string& sample_id() const { return sample_id_; }

 private:
  std::string sample_id_;
};

/// First-fit in arrival order. Each video becomes its own bin, exempt from the cap.
std::vector<PackedBin> pack(const std::vector<Sample>& samples, long long context_cap = kDefaultContextCap);

/// Raised when a length bucket cannot supply its share of sentences.
class InsufficientSupplyError : public std::runtime_error {
 public:
  InsufficientSupplyError(int bucket, long long required, long long available);
  int bucket() const { return bucket_; }
  long long shortfall() const { return shortfall_; }

 private:
  int bucket_;
  long long shortfall_;
};

/// Whitespace-delimited word count.
int sentence_length(const std::string& sentence);
inline int length_bucket(int length) { return length / kLengthBucketWidth; }

/// Per-bucket quotas proportional to the histogram of `positive_lengths`,
/// rounded by largest remainder (ties to the lower bucket) so they sum to k.
std::map<int, long long> bucket_targets(const std::vector<int>& positive_lengths, long long k);

/// Draws k sentences without replacement so that their bucketed length
/// histogram meets bucket_targets(). Output preserves corpus order and is a
/// pure function of the inputs and seed.
std::vector<std::string> sample_noise_corpus(const std::vector<std::string>& answer_sentences,
                                             const std::vector<int>& positive_lengths, long long k,
                                             std::uint64_t seed);

void to_json(Json& j, const Sample& s);
void from_json(const Json& j, Sample& s);
void to_json(Json& j, const PackedBin& b);
void from_json(const Json& j, PackedBin& b);

}  // namespace duplex::packer
