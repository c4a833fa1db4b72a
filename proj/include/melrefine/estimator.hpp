#pragma once

// Conformer-based vector-field estimator.
//
// Forward pass for a batch (N items, D1 frames, D2 mel bins):
//   1. per-frame fusion: [x_t | c | time embedding] -> linear -> model_dim
//   2. n_blocks conformer blocks (half FF, RoPE self-attention, conv module, half FF, LayerNorm)
//   3. linear back to D2, stacked with x_t and c as a 3-channel D1 x D2 image
//   4. Conv2D, then two residual 2-D blocks with LeakyReLU
//   5. final convolution to one channel -> (N, D1, D2)

#include <algorithm>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "melrefine/autograd.hpp"
#include "melrefine/tensor.hpp"

namespace melrefine {

struct EstimatorConfig {
    std::size_t n_blocks = 2;
    std::size_t model_dim = 128;
    std::size_t n_heads = 4;
    std::size_t conv_kernel = 7;
    std::size_t time_embed_dim = 64;
    std::size_t n_mels = 128;
    std::size_t head_channels = 32;
    std::size_t head_kernel = 3;
    std::size_t ff_mult = 4;
    double leaky_slope = 0.01;
    double rope_base = 10000.0;
    double time_embed_max_freq = 1000.0;

    /// Throws std::invalid_argument describing the first violated constraint.
    void validate() const;
    /// Canonical text of every field; equal configs give equal strings.
    std::string canonical() const;
    std::uint64_t fingerprint() const;

    friend bool operator==(const EstimatorConfig&, const EstimatorConfig&) = default;
};

struct NamedTensor {
    std::string name;
    Tensor value;
};

/// Learnable weights of the estimator, in a fixed creation order.
class EstimatorParams {
public:
    EstimatorParams() = default;

    /// Fan-in uniform weights, zero biases, unit norm gains, zero final convolution.
    static EstimatorParams initialize(const EstimatorConfig& config, std::uint64_t seed);

    std::vector<NamedTensor>& entries() noexcept { return entries_; }
    const std::vector<NamedTensor>& entries() const noexcept { return entries_; }
    std::size_t size() const noexcept { return entries_.size(); }
    std::size_t scalar_count() const noexcept;

    const Tensor& at(const std::string& name) const;
    Tensor& at(const std::string& name);
    void add(std::string name, Tensor value);

    bool all_finite() const noexcept;

    friend bool operator==(const EstimatorParams& a, const EstimatorParams& b) {
        return a.entries_.size() == b.entries_.size() &&
               std::equal(a.entries_.begin(), a.entries_.end(), b.entries_.begin(),
                          [](const NamedTensor& x, const NamedTensor& y) {
                              return x.name == y.name && x.value == y.value;
                          });
    }

private:
    std::vector<NamedTensor> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Parameters placed on a tape, looked up by name during graph construction.
class BoundParams {
public:
    BoundParams(ad::Tape& tape, const EstimatorParams& params, bool trainable);

    const ad::Var& operator[](const std::string& name) const;
    /// Vars in the same order as EstimatorParams::entries().
    const std::vector<ad::Var>& vars() const noexcept { return vars_; }

private:
    std::vector<ad::Var> vars_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Sinusoidal embedding [sin(t w_1) .. sin(t w_h), cos(t w_1) .. cos(t w_h)], h = dim / 2,
/// with w_i geometric from 1 to `max_freq`.
std::vector<double> time_embed(double t, std::size_t dim, double max_freq = 1000.0);

/// Rotary embedding of q laid out (heads, frames, head_dim); frame f uses positions[f].
Tensor rope_apply(const Tensor& q, std::span<const double> positions, double base = 10000.0);

/// Item-batched estimator input. values is (N, D1, D2); frame_mask is (N, D1).
struct BatchTensor {
    Tensor values;
    Tensor frame_mask;
};

/// One conformer block on x of shape (N, T, model_dim); `block` selects its weights.
ad::Var conformer_block_forward(const ad::Var& x, const Tensor& frame_mask,
                                const BoundParams& params, std::size_t block,
                                const EstimatorConfig& config);

/// Vector-field prediction, one time per batch item. Returns (N, D1, D2).
ad::Var estimator_forward(ad::Tape& tape, const BoundParams& params, const Tensor& xt,
                          const Tensor& cond, const Tensor& frame_mask,
                          std::span<const double> times, const EstimatorConfig& config);

/// Graph-free evaluation with a single shared time; values only.
Tensor estimator_evaluate(const EstimatorParams& params, const EstimatorConfig& config,
                          const BatchTensor& xt, const BatchTensor& cond, double t);

}  // namespace melrefine
