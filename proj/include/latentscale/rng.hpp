#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <utility>
#include <vector>

namespace latentscale::num {

/// Counter-based random stream (Philox4x32-10). The key is the seed and the
/// upper 64 counter bits are the stream id, so two streams with the same seed
/// and different ids never share a counter block.
class RngStream {
 public:
  RngStream() = default;
  RngStream(std::uint64_t seed, std::uint64_t stream_id) : seed_(seed), stream_id_(stream_id) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_id_; }
  /// Number of 64-bit words consumed so far.
  std::uint64_t position() const { return position_; }

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 bits of precision.
  double uniform();
  /// Standard normal via Box-Muller (one value per call).
  double normal();
  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);
  /// Uniform integer in [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

  /// Child stream keyed by `child`; independent of this stream's position.
  RngStream split(std::uint64_t child) const;
  /// Child stream keyed by a path such as (phase, problem, sample).
  RngStream split(std::initializer_list<std::uint64_t> path) const;

  template <class T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[below(i)]);
    }
  }

  /// "seed:stream:position" in hex; enough to replay the stream exactly.
  std::string fingerprint() const;

 private:
  void refill();

  std::uint64_t seed_ = 0;
  std::uint64_t stream_id_ = 0;
  std::uint64_t position_ = 0;
  std::uint64_t block_[2] = {0, 0};
};

/// 64-bit finalizer from SplitMix64; used to derive child stream ids.
std::uint64_t mix64(std::uint64_t x);

}  // namespace latentscale::num
