#pragma once

// Optimal-transport conditional flow matching.
//
// Straight-line path from a prior draw x0 to a data point x1:
//   phi_t  = (1 - (1 - sigma_min) t) x0 + t x1
//   u      = d/dt phi_t = x1 - (1 - sigma_min) x0
// Sampling integrates a learned field from t = 0 to t = 1 with forward Euler.

#include <cstddef>
#include <functional>
#include <random>
#include <stdexcept>

#include "melrefine/tensor.hpp"

namespace melrefine {

struct FlowConfig {
    double sigma_min = 0.0;
    std::size_t n_steps = 64;

    void validate() const;
    friend bool operator==(const FlowConfig&, const FlowConfig&) = default;
};

/// Raised when an integration step produces a non-finite state.
class NonFiniteTrajectory : public std::runtime_error {
public:
    NonFiniteTrajectory(std::size_t step, const std::string& what)
        : std::runtime_error(what), step_(step) {}
    std::size_t step() const noexcept { return step_; }

private:
    std::size_t step_;
};

/// I.i.d. standard normal entries drawn from `rng`.
Tensor sample_prior(const Shape& shape, std::mt19937_64& rng);

Tensor phi_t(const Tensor& x0, const Tensor& x1, double t, double sigma_min = 0.0);
Tensor target_field(const Tensor& x0, const Tensor& x1, double sigma_min = 0.0);

/// Mean of (predicted - target)^2 over cells whose frame is valid.
/// Arrays are (N, T, W) with a (N, T) mask, or (T, W) with a (T) mask.
double cfm_loss(const Tensor& predicted, const Tensor& target, const Tensor& frame_mask);

using FieldFn = std::function<Tensor(const Tensor& x, double t, const Tensor& cond)>;

/// x_{k+1} = x_k + field(x_k, k/n, cond) / n for k = 0..n-1; returns x_n.
Tensor euler_integrate(const FieldFn& field, const Tensor& x0, const Tensor& cond, std::size_t n_steps);

}  // namespace melrefine
