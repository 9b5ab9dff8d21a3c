// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

namespace layerparti {

/// Counter-based generator: draw n of a stream is splitmix64(seed, n), so the
/// pair (seed, counter) fully determines every future draw on any platform.
/// Distributions are implemented here rather than taken from <random>, whose
/// distribution algorithms are implementation-defined.
class Rng {
  public:
    explicit Rng(std::uint64_t seed = 0, std::uint64_t counter = 0) : seed_(seed), counter_(counter) {}

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t counter() const noexcept { return counter_; }

    std::uint64_t next_u64();

    /// Uniform in [0, 1) with 24 bits of resolution.
    float uniform();
    /// Uniform in [lo, hi).
    float uniform(float lo, float hi);
    /// Standard normal (Box-Muller, evaluated in double).
    float normal();
    /// Uniform integer in [0, n). n must be positive.
    std::uint64_t below(std::uint64_t n);

    /// Independent child stream; advances this stream by one draw.
    Rng fork();

    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

  private:
    std::uint64_t seed_;
    std::uint64_t counter_;
};

}  // namespace layerparti
