#pragma once

#include <cstdint>
#include <cmath>
#include <vector>

namespace lastshot {

/// Counter-based random stream. The generator state is (key, counter); every
/// draw hashes the pair, so streams derived from distinct (seed, id) tuples
/// can be handed to parallel workers and replayed independently of thread
/// schedule. Not cryptographic.
class RngStream {
 public:
  RngStream() = default;
  explicit RngStream(std::uint64_t key) : key_(key) {}

  /// Derives a stream key from a seed and up to three sub-identifiers
  /// (domain tag, episode index, ...).
  static RngStream from(std::uint64_t seed, std::uint64_t a = 0,
                        std::uint64_t b = 0, std::uint64_t c = 0) {
    std::uint64_t k = mix64(c + 0x9E3779B97F4A7C15ULL);
    k = mix64(b ^ k);
    k = mix64(a ^ k);
    k = mix64(seed ^ k);
    return RngStream(k);
  }

  std::uint64_t next_u64() {
    std::uint64_t z = key_ + (++counter_) * 0x9E3779B97F4A7C15ULL;
    z = mix64(z);
    return mix64(z ^ key_);
  }

  /// Uniform double in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller; the second deviate is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    // u1 in (0,1] so log() is safe.
    double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double t = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(t);
    has_spare_ = true;
    return r * std::cos(t);
  }

  /// Unbiased integer in [0, n) by rejection.
  std::uint64_t below(std::uint64_t n) {
    std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      std::uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  /// k distinct indices drawn from [0, n), in draw order.
  std::vector<std::size_t> sample_without_replacement(std::size_t n,
                                                      std::size_t k) {
    std::vector<std::size_t> pool(n);
    for (std::size_t i = 0; i < n; ++i) pool[i] = i;
    std::vector<std::size_t> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
      std::size_t j = i + static_cast<std::size_t>(below(n - i));
      std::swap(pool[i], pool[j]);
      out.push_back(pool[i]);
    }
    return out;
  }

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

 private:
  static std::uint64_t mix64(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ULL;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBULL;
    z ^= z >> 31;
    return z;
  }

  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Stream-domain tags, one per sampling purpose. Keeping them in a single
/// enum avoids accidental stream reuse across modules.
enum class RngDomain : std::uint64_t {
  WorldBuild = 1,
  BasePool = 2,
  PretrainShuffle = 3,
  PretrainValTask = 4,
  ParamInit = 5,
  TrainEpisode = 6,
  ValEpisode = 7,
  EvalEpisode = 8,
  TeacherFit = 9,
  AnchorFit = 10,
  QueryPerturb = 11,
};

inline RngStream domain_stream(std::uint64_t seed, RngDomain domain,
                               std::uint64_t index = 0,
                               std::uint64_t sub = 0) {
  return RngStream::from(seed, static_cast<std::uint64_t>(domain), index, sub);
}

}  // namespace lastshot
