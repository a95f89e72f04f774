#include "duplex/packer.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

namespace duplex::packer {

long long Sample::token_cost() const {
  long long cost = modality_profile.text_tokens;
  for (const auto& plan : modality_profile.image_plans) cost += plan.token_count;
  for (double d : modality_profile.audio_seconds) cost += media::audio_token_count(d);
  return cost;
}

OversizedSampleError::OversizedSampleError(std::string sample_id, long long cost, long long cap)
    : std::runtime_error("sample '" + sample_id + "' costs " + std::to_string(cost) +
                         " tokens, above the context cap of " + std::to_string(cap)),
      sample_id_(std::move(sample_id)) {}

std::vector<PackedBin> pack(const std::vector<Sample>& samples, long long context_cap) {
  if (context_cap < 1) throw PreconditionError("pack: context_cap must be >= 1");
  std::vector<PackedBin> bins;
  // Indices of bins that accept more samples (videos close theirs immediately).
  std::vector<std::size_t> open;
  for (const auto& sample : samples) {
    const long long cost = sample.token_cost();
    if (cost < 1) {
      throw PreconditionError("pack: sample '" + sample.sample_id + "' has non-positive token cost");
    }
    if (sample.modality_profile.is_video) {
      bins.push_back(PackedBin{static_cast<std::int64_t>(bins.size()), {sample}, cost});
      continue;
    }
    if (cost > context_cap) throw OversizedSampleError(sample.sample_id, cost, context_cap);
    auto fit = std::find_if(open.begin(), open.end(), [&](std::size_t i) {
      return bins[i].total_tokens + cost <= context_cap;
    });
    if (fit != open.end()) {
      bins[*fit].members.push_back(sample);
      bins[*fit].total_tokens += cost;
    } else {
      open.push_back(bins.size());
      bins.push_back(PackedBin{static_cast<std::int64_t>(bins.size()), {sample}, cost});
    }
  }
  return bins;
}

InsufficientSupplyError::InsufficientSupplyError(int bucket, long long required, long long available)
    : std::runtime_error("length bucket [" + std::to_string(bucket * kLengthBucketWidth) + "," +
                         std::to_string(bucket * kLengthBucketWidth + kLengthBucketWidth - 1) + "] needs " +
                         std::to_string(required) + " sentences but only " + std::to_string(available) +
                         " are available (shortfall " + std::to_string(required - available) + ")"),
      bucket_(bucket),
      shortfall_(required - available) {}

int sentence_length(const std::string& sentence) {
  std::istringstream in(sentence);
  int n = 0;
  for (std::string word; in >> word;) ++n;
  return n;
}

std::map<int, long long> bucket_targets(const std::vector<int>& positive_lengths, long long k) {
  if (positive_lengths.empty()) throw PreconditionError("bucket_targets: no positive lengths");
  if (k < 0) throw PreconditionError("bucket_targets: k must be non-negative");
  std::map<int, long long> counts;
  for (int len : positive_lengths) {
    if (len < 0) throw PreconditionError("bucket_targets: negative length");
    ++counts[length_bucket(len)];
  }
  const auto n = static_cast<long long>(positive_lengths.size());

  // Exact integer arithmetic: quota = k * count / n, remainder = k * count % n.
  std::map<int, long long> targets;
  std::vector<std::pair<long long, int>> remainders;
  long long assigned = 0;
  for (const auto& [bucket, count] : counts) {
    const __int128 scaled = static_cast<__int128>(k) * count;
    targets[bucket] = static_cast<long long>(scaled / n);
    assigned += targets[bucket];
    remainders.emplace_back(static_cast<long long>(scaled % n), bucket);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < k; ++i, ++assigned) ++targets[remainders[i].second];
  return targets;
}

namespace {

// Uniform integer in [0, bound) by rejection; libstdc++'s distributions are
// not portable across standard libraries, mt19937_64 itself is.
std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % bound;
}

}  // namespace

std::vector<std::string> sample_noise_corpus(const std::vector<std::string>& answer_sentences,
                                             const std::vector<int>& positive_lengths, long long k,
                                             std::uint64_t seed) {
  if (answer_sentences.empty()) throw PreconditionError("sample_noise_corpus: no answer sentences");
  const auto targets = bucket_targets(positive_lengths, k);

  std::map<int, std::vector<std::size_t>> supply;
  for (std::size_t i = 0; i < answer_sentences.size(); ++i) {
    supply[length_bucket(sentence_length(answer_sentences[i]))].push_back(i);
  }
  for (const auto& [bucket, need] : targets) {
    const auto have = static_cast<long long>(supply.contains(bucket) ? supply[bucket].size() : 0);
    if (need > have) throw InsufficientSupplyError(bucket, need, have);
  }

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> chosen;
  chosen.reserve(static_cast<std::size_t>(k));
  for (const auto& [bucket, need] : targets) {
    auto& pool = supply[bucket];
    // Partial Fisher-Yates: the first `need` slots become the draw.
    for (long long i = 0; i < need; ++i) {
      const auto j = static_cast<std::size_t>(i) + uniform_below(rng, pool.size() - static_cast<std::size_t>(i));
      std::swap(pool[static_cast<std::size_t>(i)], pool[j]);
      chosen.push_back(pool[static_cast<std::size_t>(i)]);
    }
  }
  std::sort(chosen.begin(), chosen.end());
  std::vector<std::string> out;
  out.reserve(chosen.size());
  for (std::size_t i : chosen) out.push_back(answer_sentences[i]);
  return out;
}

void to_json(Json& j, const Sample& s) {
  j = Json{{"sample_id", s.sample_id},
           {"modality_profile",
            {{"text_tokens", s.modality_profile.text_tokens},
             {"image_plans", s.modality_profile.image_plans},
             {"audio_seconds", s.modality_profile.audio_seconds},
             {"is_video", s.modality_profile.is_video}}},
           {"payload_ref", s.payload_ref}};
}

void from_json(const Json& j, Sample& s) {
  s.sample_id = j.at("sample_id").get<std::string>();
  const Json& p = j.at("modality_profile");
  s.modality_profile.text_tokens = p.value("text_tokens", 0LL);
  s.modality_profile.image_plans = p.value("image_plans", std::vector<media::TilePlan>{});
  s.modality_profile.audio_seconds = p.value("audio_seconds", std::vector<double>{});
  s.modality_profile.is_video = p.value("is_video", false);
  s.payload_ref = j.value("payload_ref", std::string{});
  if (s.modality_profile.text_tokens < 0) {
    throw PreconditionError("sample '" + s.sample_id + "': negative text_tokens");
  }
}

void to_json(Json& j, const PackedBin& b) {
  j = Json{{"bin_id", b.bin_id}, {"members", b.members}, {"total_tokens", b.total_tokens}};
}

void from_json(const Json& j, PackedBin& b) {
  b.bin_id = j.at("bin_id").get<std::int64_t>();
  b.members = j.at("members").get<std::vector<Sample>>();
  b.total_tokens = j.at("total_tokens").get<long long>();
}

}  // namespace duplex::packer
