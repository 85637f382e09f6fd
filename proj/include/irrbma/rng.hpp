#ifndef IRRBMA_RNG_HPP
#define IRRBMA_RNG_HPP

// Philox4x32-10 counter-based generator (Salmon et al., SC'11).
//
// A Stream is (key, stream id, position). The key is the 64-bit seed; each
// 128-bit counter block is [position lo, position hi, stream lo, stream hi],
// so distinct stream ids never share a block. substream(i) derives a child
// id by hashing (parent id, i) with splitmix64; a seed plus a path of
// substream indices names a stream uniquely and reproducibly, independent
// of scheduling order.

#include <array>
#include <cstdint>
#include <limits>

#include <gsl/gsl_cdf.h>

namespace irrbma {

namespace detail {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline constexpr std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> ctr,
                                                            std::array<std::uint32_t, 2> key) noexcept {
  constexpr std::uint32_t m0 = 0xD2511F53U, m1 = 0xCD9E8D57U;
  constexpr std::uint32_t w0 = 0x9E3779B9U, w1 = 0xBB67AE85U;
  for (int round = 0; round < 10; ++round) {
    if (round > 0) {
      key[0] += w0;
      key[1] += w1;
    }
    std::uint64_t const p0 = std::uint64_t{m0} * ctr[0];
    std::uint64_t const p1 = std::uint64_t{m1} * ctr[2];
    auto const hi0 = static_cast<std::uint32_t>(p0 >> 32), lo0 = static_cast<std::uint32_t>(p0);
    auto const hi1 = static_cast<std::uint32_t>(p1 >> 32), lo1 = static_cast<std::uint32_t>(p1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
  }
  return ctr;
}

} // namespace detail

class Stream {
public:
  using result_type = std::uint64_t;

  explicit Stream(std::uint64_t seed = 0, std::uint64_t stream_id = 0) noexcept
      : seed_(seed), id_(stream_id) {}

  [[nodiscard]] Stream substream(std::uint64_t index) const noexcept {
    return Stream(seed_, detail::splitmix64(detail::splitmix64(id_) ^ detail::splitmix64(index + 0x632BE59BD9B4E019ULL)));
  }

  [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }
  [[nodiscard]] std::uint64_t id() const noexcept { return id_; }

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept {
    if (buffered_ == 0) refill();
    return buffer_[--buffered_];
  }

  /// Uniform on the open interval (0, 1).
  double uniform() noexcept { return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Standard normal by inversion of the uniform stream.
  double normal() noexcept { return gsl_cdf_ugaussian_Pinv(uniform()); }

  double normal(double mean, double sd) noexcept { return mean + sd * normal(); }

  /// Uniform integer in [0, n).
  std::uint64_t index(std::uint64_t n) noexcept {
    if (n <= 1) return 0;
    std::uint64_t const limit = max() - max() % n;
    std::uint64_t x;
    do x = (*this)();
    while (x >= limit);
    return x % n;
  }

private:
  void refill() noexcept {
    auto const out = detail::philox4x32_10(
        {static_cast<std::uint32_t>(position_), static_cast<std::uint32_t>(position_ >> 32),
         static_cast<std::uint32_t>(id_), static_cast<std::uint32_t>(id_ >> 32)},
        {static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32)});
    ++position_;
    buffer_[1] = (std::uint64_t{out[1]} << 32) | out[0];
    buffer_[0] = (std::uint64_t{out[3]} << 32) | out[2];
    buffered_ = 2;
  }

  std::uint64_t seed_;
  std::uint64_t id_;
  std::uint64_t position_ = 0;
  std::array<std::uint64_t, 2> buffer_{};
  int buffered_ = 0;
};

} // namespace irrbma

#endif // IRRBMA_RNG_HPP
