#ifndef INTROD_RNG_HPP_
#define INTROD_RNG_HPP_

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <utility>

namespace introd {

/// SplitMix64 finalizer (Steele, Lea & Flood 2014).
constexpr std::uint64_t splitmix64_mix(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Counter-based SplitMix64 stream.
///
/// Output i of a stream with key k is mix(k + (i + 1) * gamma), which is the
/// reference SplitMix64 sequence seeded with k. `split(id)` derives an
/// independent child key from (key, id) without touching the parent's
/// counter, so per-sample and per-epoch streams can be built in any order and
/// on any thread. Only integer arithmetic feeds the stream, so outputs are
/// identical on every platform; `normal()` additionally relies on std::log,
/// std::sqrt and std::cos.
class Rng {
 public:
  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

  explicit Rng(std::uint64_t seed) noexcept : key_(seed) {}

  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t counter() const noexcept { return counter_; }

  Rng split(std::uint64_t stream) const noexcept {
    return Rng(splitmix64_mix(key_ ^ splitmix64_mix(stream + kGamma)));
  }

  std::uint64_t next_u64() noexcept {
    ++counter_;
    return splitmix64_mix(key_ + counter_ * kGamma);
  }

  /// Uniform on [0, 1) with 53 bits of resolution.
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Unbiased integer in [0, n). n must be > 0.
  std::uint64_t uniform_int(std::uint64_t n) noexcept {
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      const std::uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  /// Standard normal via Box-Muller; consumes exactly two draws.
  double normal() noexcept {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  template <typename T>
  void shuffle(std::span<T> items) noexcept {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_int(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// Named stream ids so that derived generators never collide by accident.
namespace streams {
inline constexpr std::uint64_t kDataTrain = 0x7472'6169'6e00ULL;
inline constexpr std::uint64_t kDataIdTest = 0x6964'7465'7374ULL;
inline constexpr std::uint64_t kDataOodTest = 0x6f6f'6474'6573ULL;
inline constexpr std::uint64_t kTeacherInit = 0x7465'6163'6869ULL;
inline constexpr std::uint64_t kTeacherTrain = 0x7465'6163'6874ULL;
inline constexpr std::uint64_t kStudentInit = 0x7374'7564'6969ULL;
inline constexpr std::uint64_t kStudentTrain = 0x7374'7564'6974ULL;
}  // namespace streams

}  // namespace introd

#endif  // INTROD_RNG_HPP_
