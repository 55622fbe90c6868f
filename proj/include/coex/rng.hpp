#pragma once

// Counter-based random streams.
//
// A stream is a (key, counter) pair; each draw hashes key + counter through
// the SplitMix64 finalizer. Child streams are derived by hashing the parent
// key with a tag, so any component can be re-run in isolation from the root
// seed alone. All distributions are implemented here (rather than through
// <random> distributions) so sequences are identical across standard
// libraries.

#include <cstdint>
#include <span>
#include <string_view>

namespace coex {

constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t hash_tag(std::string_view tag) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Rng {
 public:
  explicit constexpr Rng(std::uint64_t seed) : key_(mix64(seed ^ 0x6a09e667f3bcc909ULL)) {}

  // Independent child stream. Does not advance this stream.
  [[nodiscard]] constexpr Rng split(std::uint64_t tag) const {
    return Rng(KeyTag{}, mix64(key_ ^ mix64(tag + 0x9e3779b97f4a7c15ULL)));
  }
  [[nodiscard]] constexpr Rng split(std::string_view tag) const { return split(hash_tag(tag)); }
  [[nodiscard]] constexpr Rng split(std::string_view tag, std::uint64_t index) const {
    return split(hash_tag(tag)).split(index);
  }

  constexpr std::uint64_t next_u64() {
    return mix64(key_ + 0x9e3779b97f4a7c15ULL * ++counter_);
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). n must be > 0. Rejection keeps it unbiased.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = (~std::uint64_t{0} / n) * n;
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % n;
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Standard normal via Box-Muller; one draw per call (the pair partner is dropped
  // so the stream position stays a function of the call count).
  double normal();

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  [[nodiscard]] constexpr std::uint64_t key() const { return key_; }
  [[nodiscard]] constexpr std::uint64_t counter() const { return counter_; }

 private:
  struct KeyTag {};
  constexpr Rng(KeyTag, std::uint64_t key) : key_(key) {}

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace coex
