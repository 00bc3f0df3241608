#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <utility>
#include <vector>

namespace univarfl {

// Counter-based generator. Output i of a stream is
//   mix64(key + (i + 1) * G), key = mix64(seed ^ mix64(stream_id + G)), G = 0x9E3779B97F4A7C15
// where mix64 is the SplitMix64 finalizer. The output depends only on
// (seed, stream_id, i), never on the platform's standard library.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed, std::uint64_t stream_id = 0);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_id_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64();
  // Uniform on [0, 1) with 53 bits of resolution.
  double uniform();
  // Uniform on (0, 1].
  double uniform_open0();
  // Uniform integer in [0, n). n must be > 0.
  std::size_t below(std::size_t n);
  // Standard normal via Box-Muller; consumes two draws per call.
  double normal();
  // Logarithm of a Gamma(shape, 1) variate. Stable for tiny shapes, where
  // the variate itself underflows.
  double log_gamma_variate(double shape);

 private:
  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t x);

// Deterministic, order-sensitive child stream. Depends on the root's seed and
// stream id only (not on how many values the root has produced).
RngStream derive_stream(const RngStream& root, std::span<const std::uint64_t> tags);
RngStream derive_stream(const RngStream& root, std::initializer_list<std::uint64_t> tags);

// Fisher-Yates shuffle driven by the stream.
template <typename T>
void shuffle(std::vector<T>& values, RngStream& rng) {
  for (std::size_t i = values.size(); i > 1; --i) {
    const std::size_t j = rng.below(i);
    std::swap(values[i - 1], values[j]);
  }
}

std::vector<std::size_t> random_permutation(std::size_t n, RngStream& rng);

// Proportions drawn from Dirichlet(alpha * 1_k).
std::vector<double> dirichlet(std::size_t k, double alpha, RngStream& rng);

// Purpose tags used when deriving per-run streams.
namespace stream_tag {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kPartition = 2;
inline constexpr std::uint64_t kBatches = 3;
inline constexpr std::uint64_t kParticipation = 4;
inline constexpr std::uint64_t kData = 5;
inline constexpr std::uint64_t kSplit = 6;
inline constexpr std::uint64_t kShift = 7;
}  // namespace stream_tag

}  // namespace univarfl
