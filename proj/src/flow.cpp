#include "melrefine/flow.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace melrefine {

void FlowConfig::validate() const {
    if (!(sigma_min >= 0.0 && sigma_min < 1.0)) {
        throw std::invalid_argument("flow config: sigma_min must lie in [0, 1)");
    }
    if (n_steps == 0) throw std::invalid_argument("flow config: n_steps must be >= 1");
}

Tensor sample_prior(const Shape& shape, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Tensor out(shape);
    for (double& v : out.values()) v = normal(rng);
    return out;
}

Tensor phi_t(const Tensor& x0, const Tensor& x1, double t, double sigma_min) {
    require_same_shape(x0, x1, "phi_t");
    if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("phi_t: t outside [0, 1]");
    const double keep = 1.0 - (1.0 - sigma_min) * t;
    Tensor out(x0.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = keep * x0[i] + t * x1[i];
    return out;
}

Tensor target_field(const Tensor& x0, const Tensor& x1, double sigma_min) {
    require_same_shape(x0, x1, "target_field");
    const double decay = 1.0 - sigma_min;
    Tensor out(x0.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x1[i] - decay * x0[i];
    return out;
}

double cfm_loss(const Tensor& predicted, const Tensor& target, const Tensor& frame_mask) {
    require_same_shape(predicted, target, "cfm_loss");
    const std::size_t rank = predicted.rank();
    if (rank < 2 || frame_mask.rank() != rank - 1 ||
        !std::equal(frame_mask.shape().begin(), frame_mask.shape().end(), predicted.shape().begin())) {
        throw std::invalid_argument("cfm_loss: mask " + shape_string(frame_mask.shape()) +
                                    " does not cover frames of " + shape_string(predicted.shape()));
    }
    const std::size_t width = predicted.shape().back();
    double sum = 0.0;
    std::size_t cells = 0;
    for (std::size_t r = 0; r < frame_mask.size(); ++r) {
        if (frame_mask[r] == 0.0) continue;
        cells += width;
        for (std::size_t j = 0; j < width; ++j) {
            const double d = predicted[r * width + j] - target[r * width + j];
            sum += d * d;
        }
    }
    if (cells == 0) throw std::invalid_argument("cfm_loss: mask selects no frames");
    return sum / static_cast<double>(cells);
}

Tensor euler_integrate(const FieldFn& field, const Tensor& x0, const Tensor& cond, std::size_t n_steps) {
    if (n_steps == 0) throw std::invalid_argument("euler_integrate: n_steps must be >= 1");
    const double dt = 1.0 / static_cast<double>(n_steps);
    Tensor x = x0;
    for (std::size_t k = 0; k < n_steps; ++k) {
        const double t = static_cast<double>(k) * dt;
        const Tensor v = field(x, t, cond);
        require_same_shape(v, x, "euler_integrate");
        for (std::size_t i = 0; i < x.size(); ++i) x[i] += dt * v[i];
        if (!x.all_finite()) {
            throw NonFiniteTrajectory(k, "euler_integrate: non-finite state at step " + std::to_string(k));
        }
    }
    return x;
}

}  // namespace melrefine
