#pragma once

#include <cstdint>
#include <random>

#include "melrefine/audio.hpp"
#include "melrefine/flow.hpp"
#include "melrefine/mel.hpp"
#include "melrefine/stft.hpp"
#include "melrefine/train.hpp"

namespace melrefine {

/// How Griffin-Lim picks its starting phase when vocoding a refined mel.
enum class PhaseInit { input, zero };

PhaseInit parse_phase_init(const std::string& name);
const char* to_string(PhaseInit init);

struct RefineOptions {
    std::size_t n_steps = 64;
    std::uint64_t seed = 0;
    /// Longer conditions are rejected instead of chunked.
    std::size_t max_frames = 4096;

    void validate() const;
};

/// Samples x0 ~ N(0, I) shaped like the condition and integrates the learned field
/// from t = 0 to 1. The condition is normalized on the way in and the result
/// mapped back to log-mel units.
MelSpectrogram refine_mel(const TrainedModel& model, const MelSpectrogram& condition, std::mt19937_64& rng,
                          const RefineOptions& options = {});

struct VocoderSettings {
    GriffinLimOptions griffin_lim;
    PhaseInit phase_init = PhaseInit::input;
    /// Momentum used instead of griffin_lim.momentum when starting from the input phase.
    double warm_start_momentum = 0.0;
    double log_floor = kLogFloor;
};

/// Waveform front end and Griffin-Lim back end around refine_mel.
class Refiner {
public:
    Refiner(TrainedModel model, MelFilterbank fb, StftConfig stft_config = {}, VocoderSettings vocoder = {});

    /// Resamples to the filterbank rate, applies `smear_frames` of temporal blur to the
    /// condition, refines and vocodes. Output length equals the (resampled) input length.
    /// With PhaseInit::input, Griffin-Lim starts from the phase of the distorted input.
    AudioBuffer refine_wav(const AudioBuffer& distorted, const RefineOptions& options,
                           std::size_t smear_frames = 0) const;

    /// The conditioning mel for a waveform.
    MelSpectrogram condition(const AudioBuffer& audio, std::size_t smear_frames = 0) const;

    const TrainedModel& model() const noexcept { return model_; }
    const MelFilterbank& filterbank() const noexcept { return fb_; }
    const StftConfig& stft_config() const noexcept { return stft_; }

private:
    TrainedModel model_;
    MelFilterbank fb_;
    StftConfig stft_;
    VocoderSettings settings_;
    GriffinLimVocoder vocoder_;
};

}  // namespace melrefine
