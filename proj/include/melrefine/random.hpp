#pragma once

#include <cstdint>
#include <random>

namespace melrefine {

/// Independent generator for a (seed, stream, index) triple.
std::mt19937_64 derived_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index);

}  // namespace melrefine
