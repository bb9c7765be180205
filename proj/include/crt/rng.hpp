#pragma once

#include <array>
#include <cstdint>
#include <limits>

namespace crt {

// Philox4x32-10 counter-based generator. A stream is identified by a 64-bit
// key and the upper 64 bits of the counter; the lower 64 bits index draws
// within the stream. Distinct (key, stream) pairs give independent sequences,
// so any replicate/cluster can be regenerated without touching the others.
class Philox4x32 {
 public:
  using result_type = std::uint32_t;

  Philox4x32() : Philox4x32(0, 0) {}
  Philox4x32(std::uint64_t key, std::uint64_t stream) noexcept
      : key_{static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32)},
        stream_(stream) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept {
    if (lane_ == 4) {
      block_ = generate(counter_++);
      lane_ = 0;
    }
    return block_[lane_++];
  }

  // Raw block for a given position; exposed for tests of the counter property.
  std::array<std::uint32_t, 4> generate(std::uint64_t position) const noexcept;

 private:
  std::array<std::uint32_t, 2> key_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
  std::array<std::uint32_t, 4> block_{};
  int lane_ = 4;
};

std::uint64_t splitmix64(std::uint64_t x) noexcept;

// Derives a stream id from up to three indices and a tag.
std::uint64_t stream_id(std::uint64_t a, std::uint64_t b, std::uint64_t tag) noexcept;

// Uniform double on [0, 1) with 53 random bits.
template <class Engine>
double uniform01(Engine& eng) {
  const std::uint64_t hi = eng();
  const std::uint64_t lo = eng();
  const std::uint64_t bits = ((hi << 32) | lo) >> 11;
  return static_cast<double>(bits) * 0x1.0p-53;
}

}  // namespace crt
