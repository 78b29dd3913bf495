#pragma once

// Counter-based random streams.
//
// The block function is Philox4x32-10 (Salmon, Moraes, Dror, Shaw; SC'11),
// bit-compatible with the Random123 reference. A Stream is identified by a
// 64-bit key (the seed) and a 64-bit stream id; the remaining 64 counter bits
// index 128-bit blocks within the stream. Splitting derives a child stream id
// by hashing (parent id, tag) with SplitMix64, so child streams are disjoint
// from their parent with overwhelming probability and never share state.
//
// Gaussian variates use the Box-Muller transform on two 53-bit uniforms; each
// pair of uniforms yields two normals and the second one is cached.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace clipgrad::rng {

using Block = std::array<std::uint32_t, 4>;
using Key = std::array<std::uint32_t, 2>;

namespace detail {

constexpr std::uint32_t kMul0 = 0xD2511F53u;
constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

constexpr void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi,
                       std::uint32_t& lo) noexcept {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

constexpr Block philox_round(const Block& c, const Key& k) noexcept {
  std::uint32_t hi0 = 0, lo0 = 0, hi1 = 0, lo1 = 0;
  mulhilo(kMul0, c[0], hi0, lo0);
  mulhilo(kMul1, c[2], hi1, lo1);
  return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
}

}  // namespace detail

/// Philox4x32 with 10 rounds.
constexpr Block philox4x32_10(Block counter, Key key) noexcept {
  counter = detail::philox_round(counter, key);
  for (int r = 1; r < 10; ++r) {
    key[0] += detail::kWeyl0;
    key[1] += detail::kWeyl1;
    counter = detail::philox_round(counter, key);
  }
  return counter;
}

/// SplitMix64 finalizer, used only for deriving stream ids.
constexpr std::uint64_t splitmix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

class Stream {
 public:
  explicit Stream(std::uint64_t seed, std::uint64_t stream_id = 0) noexcept
      : seed_(seed), id_(stream_id) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t id() const noexcept { return id_; }
  std::uint64_t blocks_consumed() const noexcept { return position_; }

  /// Independent child stream. Does not advance this stream.
  Stream split(std::uint64_t tag) const noexcept {
    return Stream(seed_, splitmix64(id_ ^ splitmix64(tag + 0x632be59bd9b4e019ull)));
  }

  std::uint32_t next_u32() noexcept {
    if (lane_ == 4) refill();
    return buffer_[lane_++];
  }

  std::uint64_t next_u64() noexcept {
    const std::uint64_t hi = next_u32();
    return (hi << 32) | next_u32();
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform integer in [0, n), unbiased (Lemire's multiply-shift rejection).
  std::uint64_t index(std::uint64_t n) noexcept {
    std::uint64_t x = next_u64();
    __uint128_t m = static_cast<__uint128_t>(x) * n;
    auto low = static_cast<std::uint64_t>(m);
    if (low < n) {
      const std::uint64_t threshold = (0 - n) % n;
      while (low < threshold) {
        x = next_u64();
        m = static_cast<__uint128_t>(x) * n;
        low = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  /// Standard normal via Box-Muller.
  double normal() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  bool operator==(const Stream&) const = default;

 private:
  void refill() noexcept {
    const Block ctr{static_cast<std::uint32_t>(position_),
                    static_cast<std::uint32_t>(position_ >> 32),
                    static_cast<std::uint32_t>(id_),
                    static_cast<std::uint32_t>(id_ >> 32)};
    const Key key{static_cast<std::uint32_t>(seed_),
                  static_cast<std::uint32_t>(seed_ >> 32)};
    buffer_ = philox4x32_10(ctr, key);
    ++position_;
    lane_ = 0;
  }

  std::uint64_t seed_;
  std::uint64_t id_;
  std::uint64_t position_ = 0;
  Block buffer_{};
  int lane_ = 4;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Well-known split tags used by the experiment driver.
namespace tags {
inline constexpr std::uint64_t data = 0x64617461;      // "data"
inline constexpr std::uint64_t trial = 0x747269616c;   // "trial"
inline constexpr std::uint64_t init = 0x696e6974;      // "init"
inline constexpr std::uint64_t sample = 0x73616d70;    // "samp"
inline constexpr std::uint64_t kstar = 0x6b73746172;   // "kstar"
}  // namespace tags

}  // namespace clipgrad::rng
