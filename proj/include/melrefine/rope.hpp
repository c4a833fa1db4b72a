#pragma once

#include <cstddef>
#include <span>

namespace melrefine {

/// Rotates coordinate pairs (2i, 2i+1) of one head vector by position * base^(-2i/head_dim).
/// `inverse` applies the opposite rotation.
void rope_rotate(std::span<double> head, double position, double base, bool inverse = false);

}  // namespace melrefine
