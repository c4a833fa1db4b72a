#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "melrefine/estimator.hpp"
#include "melrefine/flow.hpp"
#include "melrefine/mel.hpp"
#include "melrefine/random.hpp"

namespace melrefine {

struct AdamWConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double weight_decay = 0.01;
    double eps = 1e-8;

    void validate() const;
    friend bool operator==(const AdamWConfig&, const AdamWConfig&) = default;
};

/// First and second moments per parameter tensor, in parameter order.
struct OptimizerState {
    AdamWConfig config;
    std::uint64_t step = 0;
    std::vector<Tensor> m;
    std::vector<Tensor> v;

    static OptimizerState fresh(const EstimatorParams& params, const AdamWConfig& config);
    friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

class NonFiniteGradient : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// One AdamW step with decoupled decay: w <- w (1 - lr wd) - lr m_hat / (sqrt(v_hat) + eps).
void adamw_update(EstimatorParams& params, const std::vector<Tensor>& grads, OptimizerState& state);

/// Global affine map applied to every mel before it enters the model.
struct MelNormalization {
    double shift = 0.0;
    double scale = 1.0;

    /// Mean and standard deviation over all cells of the given mels.
    static MelNormalization fit(const std::vector<const MelSpectrogram*>& mels);
    Tensor apply(const Tensor& values) const;
    Tensor invert(const Tensor& values) const;

    friend bool operator==(const MelNormalization&, const MelNormalization&) = default;
};

/// Clean target x1 and distorted condition c, both (frames, n_mels) and normalized.
struct TrainingPair {
    Tensor clean;
    Tensor distorted;
};

struct TrainingBatch {
    Tensor x0;      // (N, D1, D2) prior draw, zero on padding
    Tensor x1;      // clean, zero-padded
    Tensor xt;      // phi_t(x0, x1, t)
    Tensor cond;    // distorted, zero-padded
    Tensor target;  // target_field(x0, x1)
    Tensor mask;    // (N, D1)
    std::vector<double> t;  // one time per item
};

/// Pads to the longest pair, draws t ~ U[0, 1] per item and x0 ~ N(0, I).
TrainingBatch make_training_batch(const std::vector<const TrainingPair*>& pairs, std::mt19937_64& rng,
                                  const FlowConfig& flow);

struct StepResult {
    double loss = 0.0;
};

/// Forward, masked CFM loss, backward and AdamW update.
StepResult training_step(const TrainingBatch& batch, EstimatorParams& params, OptimizerState& state,
                         const EstimatorConfig& config);

/// Loss and parameter gradients without updating anything.
double loss_and_gradients(const TrainingBatch& batch, const EstimatorParams& params, const EstimatorConfig& config,
                          std::vector<Tensor>* grads);

struct TrainConfig {
    std::size_t batch_size = 4;
    std::size_t total_steps = 2000;
    std::uint64_t seed = 0;
    std::size_t checkpoint_interval = 500;
    std::size_t log_interval = 50;
    FlowConfig flow;
    EstimatorConfig model;
    AdamWConfig optim;

    void validate() const;
};

/// Everything needed to run the refiner: architecture, weights and input normalization.
struct TrainedModel {
    EstimatorConfig config;
    EstimatorParams params;
    MelNormalization norm;

    friend bool operator==(const TrainedModel&, const TrainedModel&) = default;
};

/// Deterministic training loop: the batch composition, t and x0 of step k depend
/// only on (seed, k), so a run resumed from a checkpoint matches an uninterrupted one.
class Trainer {
public:
    Trainer(TrainConfig config, std::vector<TrainingPair> pairs, MelNormalization norm);

    /// Continues from a saved state.
    void restore(EstimatorParams params, OptimizerState state, std::uint64_t step);

    /// Runs one step and returns its loss.
    double step();
    /// Runs until total_steps; `on_step(step, loss)` is called after every step.
    void run(const std::function<void(std::uint64_t, double)>& on_step = {});

    std::uint64_t steps_done() const noexcept { return step_; }
    const EstimatorParams& params() const noexcept { return model_.params; }
    const OptimizerState& optimizer() const noexcept { return opt_; }
    const TrainedModel& model() const noexcept { return model_; }
    const TrainConfig& config() const noexcept { return config_; }

    /// Pair indices used at a given step.
    std::vector<std::size_t> batch_indices(std::uint64_t step) const;

private:
    TrainConfig config_;
    std::vector<TrainingPair> pairs_;
    TrainedModel model_;
    OptimizerState opt_;
    std::uint64_t step_ = 0;
};

}  // namespace melrefine
