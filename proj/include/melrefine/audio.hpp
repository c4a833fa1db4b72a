#pragma once

#include <filesystem>
#include <stdexcept>
#include <vector>

namespace melrefine {

inline constexpr int kSampleRate = 24000;

/// Mono waveform with amplitudes nominally in [-1, 1].
struct AudioBuffer {
    std::vector<double> samples;
    int sample_rate = kSampleRate;

    std::size_t size() const noexcept { return samples.size(); }
    double duration() const noexcept { return static_cast<double>(samples.size()) / sample_rate; }

    /// Throws std::invalid_argument on a non-positive rate or non-finite samples.
    void validate() const;

    friend bool operator==(const AudioBuffer&, const AudioBuffer&) = default;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Reads 16-bit PCM or 32-bit float RIFF/WAVE; channels are averaged to mono.
AudioBuffer load_wav(const std::filesystem::path& path);

/// Writes 16-bit PCM mono. Samples are clamped to [-1, 1] before quantization.
void save_wav(const AudioBuffer& audio, const std::filesystem::path& path);

/// Kaiser-windowed sinc interpolation; output length is round(len * target / source).
AudioBuffer resample(const AudioBuffer& audio, int target_rate);

double rms(const std::vector<double>& samples);
double energy(const std::vector<double>& samples);

}  // namespace melrefine
