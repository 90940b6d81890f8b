#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace tpsim {

using Engine = std::mt19937_64;

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace detail

/// Immutable descriptor of a random stream: a root seed plus a path of
/// indices (scenario, replicate, stage, ...). Streams are derived by hashing,
/// so any replicate can be regenerated without running the ones before it.
class RngStream {
 public:
  explicit RngStream(std::uint64_t root_seed) : root_seed_(root_seed) {}
  RngStream(std::uint64_t root_seed, std::vector<std::uint64_t> path)
      : root_seed_(root_seed), path_(std::move(path)) {}

  [[nodiscard]] RngStream child(std::uint64_t index) const {
    auto p = path_;
    p.push_back(index);
    return RngStream(root_seed_, std::move(p));
  }

  [[nodiscard]] RngStream child(std::initializer_list<std::uint64_t> indices) const {
    auto p = path_;
    p.insert(p.end(), indices.begin(), indices.end());
    return RngStream(root_seed_, std::move(p));
  }

  [[nodiscard]] std::uint64_t root_seed() const { return root_seed_; }
  [[nodiscard]] const std::vector<std::uint64_t>& path() const { return path_; }

  /// 64-bit seed for this stream; distinct paths give unrelated seeds.
  [[nodiscard]] std::uint64_t seed() const {
    std::uint64_t h = detail::splitmix64(root_seed_);
    for (auto v : path_) h = detail::splitmix64(h ^ detail::splitmix64(v + 0x632be59bd9b4e019ULL));
    return h;
  }

  [[nodiscard]] Engine engine() const {
    const std::uint64_t s = seed();
    std::seed_seq seq{static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(s >> 32),
                      static_cast<std::uint32_t>(path_.size())};
    return Engine(seq);
  }

  friend bool operator==(const RngStream&, const RngStream&) = default;

 private:
  std::uint64_t root_seed_;
  std::vector<std::uint64_t> path_;
};

}  // namespace tpsim
