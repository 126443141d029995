#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace fetalnav {

/// Independent, reproducible stream for (seed, tag...) so that consumers never
/// share generator state.
inline std::mt19937_64 derived_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> tags = {})
{
    std::vector<std::uint32_t> words;
    words.reserve(2 + 2 * tags.size());
    const auto push = [&](std::uint64_t v) {
        words.push_back(static_cast<std::uint32_t>(v));
        words.push_back(static_cast<std::uint32_t>(v >> 32));
    };
    push(seed);
    for (auto t : tags) {
        push(t);
    }
    std::seed_seq seq(words.begin(), words.end());
    return std::mt19937_64(seq);
}

inline std::uint64_t derived_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> tags = {})
{
    return derived_rng(seed, tags)();
}

}  // namespace fetalnav
