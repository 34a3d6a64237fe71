#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <span>

namespace drpo {

// Philox4x32-10 counter-based generator (Salmon et al., Random123).
//
// A generator is identified by a 64-bit key (the seed) and a 64-bit stream
// id; the remaining 64 counter bits index blocks within the stream. Two
// generators with distinct (seed, stream) never share output, so per-item
// streams give results that do not depend on evaluation order.
class Philox4x32 {
 public:
  using result_type = std::uint32_t;
  using Block = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  Philox4x32(std::uint64_t seed, std::uint64_t stream) noexcept;

  // The raw bijection: ten rounds applied to `counter` under `key`.
  static Block encrypt(Block counter, Key key) noexcept;

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() noexcept;
  std::uint64_t next_u64() noexcept;

  // Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept;

  // Standard normal via Box-Muller (consumes two uniforms).
  double normal() noexcept;

 private:
  void refill() noexcept;

  Key key_;
  std::uint64_t stream_;
  std::uint64_t block_ = 0;
  Block buffer_{};
  unsigned used_ = 4;
};

// Mixes a base seed with a path of indices into an independent seed.
std::uint64_t derive_seed(std::uint64_t base,
                          std::initializer_list<std::uint64_t> path) noexcept;

// Inverse-CDF draw from `probs` using uniform `u` in [0,1). Cumulative sums
// run in index order; rounding slack falls on the last positive entry.
std::size_t sample_categorical(std::span<const double> probs, double u) noexcept;

}  // namespace drpo
