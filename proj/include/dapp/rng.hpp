#pragma once

#include <cstdint>
#include <random>

namespace dapp {

using Rng = std::mt19937_64;

// splitmix64, used to decorrelate derived seeds.
inline std::uint64_t mix_seed(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Independent stream for (seed, index); sequence i of a dataset uses stream i
// so generation order and worker count never change the draws.
inline Rng make_stream(std::uint64_t seed, std::uint64_t index) {
    return Rng(mix_seed(mix_seed(seed) ^ mix_seed(index + 0x51ed2701ULL)));
}

}  // namespace dapp
