#include "melrefine/rope.hpp"

#include <cmath>
#include <stdexcept>

namespace melrefine {

void rope_rotate(std::span<double> head, double position, double base, bool inverse) {
    const std::size_t head_dim = head.size();
    if (head_dim % 2 != 0) throw std::invalid_argument("rope: head dimension must be even");
    if (position == 0.0) return;
    const double sign = inverse ? -1.0 : 1.0;
    for (std::size_t i = 0; i < head_dim / 2; ++i) {
        const double theta = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(head_dim));
        const double angle = sign * position * theta;
        const double c = std::cos(angle);
        const double s = std::sin(angle);
        const double a = head[2 * i];
        const double b = head[2 * i + 1];
        head[2 * i] = a * c - b * s;
        head[2 * i + 1] = a * s + b * c;
    }
}

}  // namespace melrefine
