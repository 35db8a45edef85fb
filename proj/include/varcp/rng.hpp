#pragma once

#include <cstdint>
#include <random>

namespace varcp {

/// splitmix64 step; used to derive independent per-replication seeds from a
/// master seed so parallel benchmark runs are deterministic in the master seed.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Seed for replication `index` derived from `master`. Stateless helper.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
    std::uint64_t s = master ^ (0x6a09e667f3bcc909ULL + index * 0x9e3779b97f4a7c15ULL);
    splitmix64(s);
    return splitmix64(s);
}

using rng_engine = std::mt19937_64;

}  // namespace varcp
