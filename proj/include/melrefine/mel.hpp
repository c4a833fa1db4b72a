#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <string>

#include "melrefine/audio.hpp"
#include "melrefine/stft.hpp"
#include "melrefine/tensor.hpp"

namespace melrefine {

inline constexpr double kLogFloor = 1e-5;

enum class MelScale { htk, slaney };

MelScale parse_mel_scale(const std::string& name);
const char* to_string(MelScale scale);

double hz_to_mel(double hz, MelScale scale);
double mel_to_hz(double mel, MelScale scale);

/// Triangular filters; weights is (n_mels, n_fft / 2 + 1). Slaney filters are
/// area-normalized, HTK filters peak at 1.
struct MelFilterbank {
    Tensor weights;
    double f_min = 0.0;
    double f_max = 0.0;
    MelScale scale = MelScale::slaney;
    int sample_rate = kSampleRate;
    std::size_t n_fft = 1024;

    std::size_t n_mels() const { return weights.dim(0); }
    std::size_t bins() const { return weights.dim(1); }
    /// Center frequency of each filter in Hz.
    std::vector<double> center_frequencies() const;
};

MelFilterbank build_mel_filterbank(std::size_t n_mels = 128, std::size_t n_fft = 1024, int sample_rate = kSampleRate,
                                   double f_min = 0.0, double f_max = kSampleRate / 2.0,
                                   MelScale scale = MelScale::slaney);

/// Log-compressed mel energies; values is (frames, n_mels).
struct MelSpectrogram {
    Tensor values;
    double frame_rate = static_cast<double>(kSampleRate) / 256.0;

    std::size_t frames() const { return values.dim(0); }
    std::size_t n_mels() const { return values.dim(1); }

    friend bool operator==(const MelSpectrogram&, const MelSpectrogram&) = default;
};

/// log(max(fb . |stft(x)|, floor)).
MelSpectrogram audio_to_logmel(const AudioBuffer& audio, const MelFilterbank& fb, const StftConfig& stft_config = {},
                               double floor = kLogFloor);

/// Turns a log-mel spectrogram back into audio.
class Vocoder {
public:
    virtual ~Vocoder() = default;
    /// `length` defaults to (frames - 1) * hop samples.
    virtual AudioBuffer synthesize(const MelSpectrogram& mel, std::optional<std::size_t> length = {}) const = 0;
};

struct GriffinLimOptions {
    std::size_t iterations = 32;
    double momentum = 0.99;
};

/// Mel inversion through the clamped pseudo-inverse of the filterbank, then
/// fast Griffin-Lim phase retrieval from zero phase.
class GriffinLimVocoder final : public Vocoder {
public:
    GriffinLimVocoder(MelFilterbank fb, GriffinLimOptions options = {}, StftConfig stft_config = {});

    AudioBuffer synthesize(const MelSpectrogram& mel, std::optional<std::size_t> length = {}) const override;

    /// Starts the phase iteration from the phases of `initial_phase` instead of zero.
    AudioBuffer synthesize_from(const MelSpectrogram& mel, const ComplexSpectrogram& initial_phase,
                                std::optional<std::size_t> length = {}) const;

    /// Linear-magnitude estimate (frames x bins) for a log-mel input.
    Tensor magnitude_estimate(const MelSpectrogram& mel) const;

private:
    AudioBuffer run(const MelSpectrogram& mel, const ComplexSpectrogram* initial_phase,
                    std::optional<std::size_t> length) const;

    MelFilterbank fb_;
    GriffinLimOptions options_;
    StftConfig stft_;
    Tensor pseudo_inverse_;  // (bins, n_mels)
};

AudioBuffer logmel_to_audio(const MelSpectrogram& mel, const MelFilterbank& fb, std::size_t iterations = 32);

}  // namespace melrefine
