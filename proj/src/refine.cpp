#include "melrefine/refine.hpp"

#include <stdexcept>
#include <string>

#include "melrefine/simulate.hpp"

namespace melrefine {

PhaseInit parse_phase_init(const std::string& name) {
    if (name == "input") return PhaseInit::input;
    if (name == "zero") return PhaseInit::zero;
    throw std::invalid_argument("unknown phase init '" + name + "' (expected input or zero)");
}

const char* to_string(PhaseInit init) {
    return init == PhaseInit::input ? "input" : "zero";
}

void RefineOptions::validate() const {
    if (n_steps == 0) throw std::invalid_argument("refine: n_steps must be >= 1");
    if (max_frames == 0) throw std::invalid_argument("refine: max_frames must be >= 1");
}

MelSpectrogram refine_mel(const TrainedModel& model, const MelSpectrogram& condition, std::mt19937_64& rng,
                          const RefineOptions& options) {
    options.validate();
    const Tensor& c = condition.values;
    if (c.rank() != 2 || c.dim(1) != model.config.n_mels || c.dim(0) == 0) {
        throw std::invalid_argument("refine: condition has shape " + shape_string(c.shape()) + ", model expects (T, " +
                                    std::to_string(model.config.n_mels) + ")");
    }
    if (c.dim(0) > options.max_frames) {
        throw std::invalid_argument("refine: condition has " + std::to_string(c.dim(0)) +
                                    " frames, more than max_frames " + std::to_string(options.max_frames));
    }
    if (!c.all_finite()) throw std::invalid_argument("refine: condition contains non-finite values");

    const std::size_t frames = c.dim(0);
    const std::size_t mels = c.dim(1);
    const Tensor cond_norm = model.norm.apply(c).reshaped(Shape{1, frames, mels});
    const Tensor mask(Shape{1, frames}, 1.0);
    const Tensor x0 = sample_prior(Shape{1, frames, mels}, rng);
    const FieldFn field = [&](const Tensor& x, double t, const Tensor& cond) {
        return estimator_evaluate(model.params, model.config, BatchTensor{x, mask}, BatchTensor{cond, mask}, t);
    };
    const Tensor x1 = euler_integrate(field, x0, cond_norm, options.n_steps);

    MelSpectrogram out;
    out.frame_rate = condition.frame_rate;
    out.values = model.norm.invert(x1).reshaped(Shape{frames, mels});
    return out;
}

namespace {

GriffinLimOptions effective_options(const VocoderSettings& s) {
    GriffinLimOptions o = s.griffin_lim;
    if (s.phase_init == PhaseInit::input) o.momentum = s.warm_start_momentum;
    return o;
}

}  // namespace

Refiner::Refiner(TrainedModel model, MelFilterbank fb, StftConfig stft_config, VocoderSettings vocoder)
    : model_(std::move(model)),
      fb_(fb),
      stft_(stft_config),
      settings_(vocoder),
      vocoder_(std::move(fb), effective_options(vocoder), stft_config) {
    if (fb_.n_mels() != model_.config.n_mels) {
        throw std::invalid_argument("refiner: filterbank has " + std::to_string(fb_.n_mels()) +
                                    " bins, model expects " + std::to_string(model_.config.n_mels));
    }
}

MelSpectrogram Refiner::condition(const AudioBuffer& audio, std::size_t smear_frames) const {
    const AudioBuffer at_rate = resample(audio, fb_.sample_rate);
    return spectral_smear(audio_to_logmel(at_rate, fb_, stft_, settings_.log_floor), smear_frames);
}

AudioBuffer Refiner::refine_wav(const AudioBuffer& distorted, const RefineOptions& options,
                                std::size_t smear_frames) const {
    const AudioBuffer at_rate = resample(distorted, fb_.sample_rate);
    const MelSpectrogram cond = spectral_smear(audio_to_logmel(at_rate, fb_, stft_, settings_.log_floor), smear_frames);
    std::mt19937_64 rng(options.seed);
    const MelSpectrogram refined = refine_mel(model_, cond, rng, options);
    if (settings_.phase_init == PhaseInit::input) return vocoder_.synthesize_from(refined, stft(at_rate, stft_), at_rate.size());
    return vocoder_.synthesize(refined, at_rate.size());
}

}  // namespace melrefine
