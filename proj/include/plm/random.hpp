#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace plm {

/// Engine used for every stochastic decision outside parameter init
/// (masking, dropout, shuffles, synthetic data).
using Rng = std::mt19937_64;

/// FNV-1a; used to turn tensor names and stream labels into seed material.
constexpr std::uint64_t hash_name(std::string_view name) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : name) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Derive an independent stream seed from a base seed and a list of tags, so
/// that e.g. the masking of batch 17 does not depend on how many draws batch 16
/// consumed.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags) {
    std::seed_seq::result_type words[16];
    std::size_t n = 0;
    words[n++] = static_cast<std::uint32_t>(base);
    words[n++] = static_cast<std::uint32_t>(base >> 32);
    for (auto t : tags) {
        if (n + 2 > std::size(words)) break;
        words[n++] = static_cast<std::uint32_t>(t);
        words[n++] = static_cast<std::uint32_t>(t >> 32);
    }
    std::seed_seq seq(words, words + n);
    std::uint32_t out[2];
    seq.generate(out, out + 2);
    return (static_cast<std::uint64_t>(out[1]) << 32) | out[0];
}

inline Rng make_rng(std::uint64_t base, std::initializer_list<std::uint64_t> tags) {
    return Rng(derive_seed(base, tags));
}

/// Uniform draw in [0, 1).
inline double uniform01(Rng& rng) {
    return std::generate_canonical<double, 53>(rng);
}

}  // namespace plm
