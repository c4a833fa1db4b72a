#pragma once

#include <complex>
#include <cstddef>
#include <vector>

#include "melrefine/audio.hpp"

namespace melrefine {

/// Analysis geometry. Frames are centered: the signal is reflect-padded by n_fft / 2.
struct StftConfig {
    std::size_t n_fft = 1024;
    std::size_t hop = 256;

    std::size_t bins() const noexcept { return n_fft / 2 + 1; }
    /// floor(len / hop) + 1
    std::size_t frame_count(std::size_t length) const noexcept { return length / hop + 1; }
    void validate() const;

    friend bool operator==(const StftConfig&, const StftConfig&) = default;
};

/// Periodic Hann window of length n.
std::vector<double> hann_window(std::size_t n);

/// frames x bins complex values, row-major.
struct ComplexSpectrogram {
    std::size_t frames = 0;
    std::size_t bins = 0;
    std::vector<std::complex<double>> values;
    StftConfig geometry;

    std::complex<double>& at(std::size_t frame, std::size_t bin) { return values[frame * bins + bin]; }
    const std::complex<double>& at(std::size_t frame, std::size_t bin) const { return values[frame * bins + bin]; }
};

ComplexSpectrogram stft(const AudioBuffer& audio, const StftConfig& config = {});

/// Windowed overlap-add inverse of stft(), trimmed to `length` samples.
AudioBuffer istft(const ComplexSpectrogram& spec, std::size_t length, int sample_rate = kSampleRate,
                  const StftConfig& config = {});

}  // namespace melrefine
