#include "melrefine/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "melrefine/ops.hpp"

namespace melrefine {

void AdamWConfig::validate() const {
    if (!(lr > 0.0) || !std::isfinite(lr)) throw std::invalid_argument("adamw: lr must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw std::invalid_argument("adamw: betas must lie in [0, 1)");
    }
    if (!(weight_decay >= 0.0) || !(eps > 0.0)) throw std::invalid_argument("adamw: need weight_decay >= 0, eps > 0");
}

OptimizerState OptimizerState::fresh(const EstimatorParams& params, const AdamWConfig& config) {
    config.validate();
    OptimizerState state;
    state.config = config;
    for (const auto& e : params.entries()) {
        state.m.emplace_back(e.value.shape());
        state.v.emplace_back(e.value.shape());
    }
    return state;
}

void adamw_update(EstimatorParams& params, const std::vector<Tensor>& grads, OptimizerState& state) {
    auto& entries = params.entries();
    if (grads.size() != entries.size() || state.m.size() != entries.size() || state.v.size() != entries.size()) {
        throw std::invalid_argument("adamw: gradient/state count does not match parameters");
    }
    for (std::size_t p = 0; p < entries.size(); ++p) {
        require_same_shape(entries[p].value, grads[p], "adamw");
        if (!grads[p].all_finite()) throw NonFiniteGradient("adamw: non-finite gradient for '" + entries[p].name + "'");
    }

    const AdamWConfig& c = state.config;
    state.step += 1;
    const double k = static_cast<double>(state.step);
    const double correction1 = 1.0 - std::pow(c.beta1, k);
    const double correction2 = 1.0 - std::pow(c.beta2, k);
    const double decay = 1.0 - c.lr * c.weight_decay;
    for (std::size_t p = 0; p < entries.size(); ++p) {
        Tensor& w = entries[p].value;
        Tensor& m = state.m[p];
        Tensor& v = state.v[p];
        const Tensor& g = grads[p];
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
            v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
            const double m_hat = m[i] / correction1;
            const double v_hat = v[i] / correction2;
            w[i] = w[i] * decay - c.lr * m_hat / (std::sqrt(v_hat) + c.eps);
        }
    }
}

MelNormalization MelNormalization::fit(const std::vector<const MelSpectrogram*>& mels) {
    double sum = 0.0;
    double count = 0.0;
    for (const auto* m : mels) {
        for (double v : m->values.values()) sum += v;
        count += static_cast<double>(m->values.size());
    }
    if (count == 0.0) throw std::invalid_argument("mel normalization: no data");
    const double mean = sum / count;
    double var = 0.0;
    for (const auto* m : mels) {
        for (double v : m->values.values()) var += (v - mean) * (v - mean);
    }
    var /= count;
    MelNormalization norm;
    norm.shift = mean;
    norm.scale = var > 1e-12 ? std::sqrt(var) : 1.0;
    return norm;
}

Tensor MelNormalization::apply(const Tensor& values) const {
    Tensor out = values;
    for (double& v : out.values()) v = (v - shift) / scale;
    return out;
}

Tensor MelNormalization::invert(const Tensor& values) const {
    Tensor out = values;
    for (double& v : out.values()) v = v * scale + shift;
    return out;
}

TrainingBatch make_training_batch(const std::vector<const TrainingPair*>& pairs, std::mt19937_64& rng,
                                  const FlowConfig& flow) {
    flow.validate();
    if (pairs.empty()) throw std::invalid_argument("training batch: empty pair list");
    std::size_t frames = 0;
    const std::size_t mels = pairs.front()->clean.rank() == 2 ? pairs.front()->clean.dim(1) : 0;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const TrainingPair& p = *pairs[i];
        if (p.clean.rank() != 2 || p.clean.dim(1) != mels || p.clean.dim(0) == 0) {
            throw std::invalid_argument("training batch: pair " + std::to_string(i) + " clean mel has shape " +
                                        shape_string(p.clean.shape()));
        }
        if (p.distorted.shape() != p.clean.shape()) {
            throw std::invalid_argument("training batch: pair " + std::to_string(i) +
                                        " clean/distorted frame count mismatch " + shape_string(p.clean.shape()) +
                                        " vs " + shape_string(p.distorted.shape()));
        }
        frames = std::max(frames, p.clean.dim(0));
    }

    const std::size_t n = pairs.size();
    TrainingBatch batch;
    const Shape shape{n, frames, mels};
    batch.x0 = Tensor(shape);
    batch.x1 = Tensor(shape);
    batch.cond = Tensor(shape);
    batch.mask = Tensor(Shape{n, frames});
    batch.t.resize(n);

    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t b = 0; b < n; ++b) {
        const TrainingPair& p = *pairs[b];
        const std::size_t valid = p.clean.dim(0);
        batch.t[b] = uniform(rng);
        const std::size_t offset = b * frames * mels;
        std::copy_n(p.clean.data(), valid * mels, batch.x1.data() + offset);
        std::copy_n(p.distorted.data(), valid * mels, batch.cond.data() + offset);
        for (std::size_t i = 0; i < valid * mels; ++i) batch.x0[offset + i] = normal(rng);
        std::fill_n(batch.mask.data() + b * frames, valid, 1.0);
    }

    batch.target = target_field(batch.x0, batch.x1, flow.sigma_min);
    batch.xt = Tensor(shape);
    const double decay = 1.0 - flow.sigma_min;
    for (std::size_t b = 0; b < n; ++b) {
        const double t = batch.t[b];
        const double keep = 1.0 - decay * t;
        for (std::size_t i = b * frames * mels; i < (b + 1) * frames * mels; ++i) {
            batch.xt[i] = keep * batch.x0[i] + t * batch.x1[i];
        }
    }
    return batch;
}

double loss_and_gradients(const TrainingBatch& batch, const EstimatorParams& params, const EstimatorConfig& config,
                          std::vector<Tensor>* grads) {
    ad::Tape tape;
    BoundParams bound(tape, params, grads != nullptr);
    ad::Var out = estimator_forward(tape, bound, batch.xt, batch.cond, batch.mask, batch.t, config);
    ad::Var loss = ad::masked_mse(out, batch.target, batch.mask);
    const double value = loss.value()[0];
    if (grads) {
        tape.backward(loss);
        grads->clear();
        for (const ad::Var& v : bound.vars()) grads->push_back(tape.grad(v));
    }
    return value;
}

StepResult training_step(const TrainingBatch& batch, EstimatorParams& params, OptimizerState& state,
                         const EstimatorConfig& config) {
    std::vector<Tensor> grads;
    const double loss = loss_and_gradients(batch, params, config, &grads);
    if (!std::isfinite(loss)) throw NonFiniteGradient("training step: non-finite loss");
    adamw_update(params, grads, state);
    return StepResult{loss};
}

void TrainConfig::validate() const {
    if (batch_size == 0) throw std::invalid_argument("train config: batch_size must be >= 1");
    if (total_steps == 0) throw std::invalid_argument("train config: total_steps must be >= 1");
    flow.validate();
    model.validate();
    optim.validate();
}

Trainer::Trainer(TrainConfig config, std::vector<TrainingPair> pairs, MelNormalization norm)
    : config_(std::move(config)), pairs_(std::move(pairs)) {
    config_.validate();
    if (pairs_.empty()) throw std::invalid_argument("trainer: no training pairs");
    for (const auto& p : pairs_) {
        if (p.clean.rank() != 2 || p.clean.dim(1) != config_.model.n_mels) {
            throw std::invalid_argument("trainer: pair mel width differs from model n_mels");
        }
    }
    model_.config = config_.model;
    model_.norm = norm;
    model_.params = EstimatorParams::initialize(config_.model, derived_rng(config_.seed, 0, 0)());
    opt_ = OptimizerState::fresh(model_.params, config_.optim);
}

void Trainer::restore(EstimatorParams params, OptimizerState state, std::uint64_t step) {
    if (params.size() != model_.params.size()) throw std::invalid_argument("trainer: restored parameters differ");
    model_.params = std::move(params);
    opt_ = std::move(state);
    step_ = step;
}

std::vector<std::size_t> Trainer::batch_indices(std::uint64_t step) const {
    const std::size_t n = pairs_.size();
    const std::size_t bs = config_.batch_size;
    std::vector<std::size_t> out;
    out.reserve(bs);
    std::uint64_t cached_epoch = ~std::uint64_t{0};
    std::vector<std::size_t> order(n);
    for (std::size_t j = 0; j < bs; ++j) {
        const std::uint64_t position = step * bs + j;
        const std::uint64_t epoch = position / n;
        if (epoch != cached_epoch) {
            std::iota(order.begin(), order.end(), std::size_t{0});
            auto rng = derived_rng(config_.seed, 1, epoch);
            std::shuffle(order.begin(), order.end(), rng);
            cached_epoch = epoch;
        }
        out.push_back(order[position % n]);
    }
    return out;
}

double Trainer::step() {
    const std::vector<std::size_t> indices = batch_indices(step_);
    std::vector<const TrainingPair*> chosen;
    for (std::size_t i : indices) chosen.push_back(&pairs_[i]);
    auto rng = derived_rng(config_.seed, 2, step_);
    const TrainingBatch batch = make_training_batch(chosen, rng, config_.flow);
    StepResult result;
    try {
        result = training_step(batch, model_.params, opt_, config_.model);
    } catch (const NonFiniteGradient& e) {
        throw NonFiniteGradient(std::string(e.what()) + " at step " + std::to_string(step_));
    }
    ++step_;
    return result.loss;
}

void Trainer::run(const std::function<void(std::uint64_t, double)>& on_step) {
    while (step_ < config_.total_steps) {
        const double loss = step();
        if (on_step) on_step(step_, loss);
    }
}

}  // namespace melrefine
