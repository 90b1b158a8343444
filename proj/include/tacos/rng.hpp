#pragma once

#include <cstdint>
#include <span>
#include <utility>

namespace tacos::rng {

// SplitMix64 finalizer. Used both as a hash for deriving stream keys and as
// the step function of the generator below.
constexpr std::uint64_t mix64(std::uint64_t z)
{
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

constexpr std::uint64_t combine(std::uint64_t a, std::uint64_t b)
{
    return mix64(a ^ (mix64(b) + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2)));
}

template <typename... Rest> constexpr std::uint64_t key(std::uint64_t first, Rest... rest)
{
    std::uint64_t k = mix64(first);
    ((k = combine(k, static_cast<std::uint64_t>(rest))), ...);
    return k;
}

/// Named streams fanned out from one master seed. Changing how one stream is
/// consumed never shifts the draws of another.
enum class Stream : std::uint64_t {
    weights = 1,
    feedback = 2,
    input = 3,
    label = 4,
    shuffle = 5,
    subset = 6,
    evaluation = 7,
};

constexpr std::uint64_t stream_seed(std::uint64_t master, Stream s)
{
    return key(master, static_cast<std::uint64_t>(s));
}

/// SplitMix64 generator. Satisfies UniformRandomBitGenerator, but the
/// helpers below are used instead of <random> distributions so that draws are
/// identical across standard library implementations.
class SplitMix64 {
  public:
    using result_type = std::uint64_t;

    constexpr explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return ~result_type{0}; }

    constexpr result_type operator()()
    {
        state_ += 0x9e3779b97f4a7c15ULL;
        return mix64(state_);
    }

    /// Uniform double in [0, 1) with 53 random bits.
    constexpr double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

    constexpr double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). Lemire's multiply-shift with rejection.
    std::uint64_t below(std::uint64_t n)
    {
        while (true) {
            const std::uint64_t x = (*this)();
            const auto m = static_cast<unsigned __int128>(x) * n;
            const auto low = static_cast<std::uint64_t>(m);
            if (low >= n || low >= (-n) % n) {
                return static_cast<std::uint64_t>(m >> 64);
            }
        }
    }

    constexpr std::uint64_t state() const { return state_; }

  private:
    std::uint64_t state_;
};

/// Fisher-Yates shuffle with a fixed, portable draw sequence.
template <typename T> void shuffle(std::span<T> items, SplitMix64& gen)
{
    for (std::size_t i = items.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(gen.below(i));
        using std::swap;
        swap(items[i - 1], items[j]);
    }
}

} // namespace tacos::rng
