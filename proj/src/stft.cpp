#include "melrefine/stft.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "fft.hpp"

namespace melrefine {
namespace {

// Mirror index into [0, len) without repeating the edge sample.
std::size_t reflect_index(std::ptrdiff_t i, std::size_t len) {
    if (len == 1) return 0;
    const auto period = static_cast<std::ptrdiff_t>(2 * (len - 1));
    std::ptrdiff_t m = i % period;
    if (m < 0) m += period;
    if (m >= static_cast<std::ptrdiff_t>(len)) m = period - m;
    return static_cast<std::size_t>(m);
}

}  // namespace

void StftConfig::validate() const {
    if (n_fft < 2 || n_fft % 2 != 0) throw std::invalid_argument("stft: n_fft must be even and >= 2");
    if (hop == 0 || hop > n_fft) throw std::invalid_argument("stft: hop must lie in [1, n_fft]");
}

std::vector<double> hann_window(std::size_t n) {
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i) {
        w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
    }
    return w;
}

ComplexSpectrogram stft(const AudioBuffer& audio, const StftConfig& config) {
    config.validate();
    if (audio.samples.empty()) throw std::invalid_argument("stft: empty buffer");
    const std::size_t len = audio.samples.size();
    const std::size_t n_fft = config.n_fft;
    const auto pad = static_cast<std::ptrdiff_t>(n_fft / 2);
    const std::vector<double> window = hann_window(n_fft);

    ComplexSpectrogram spec;
    spec.geometry = config;
    spec.frames = config.frame_count(len);
    spec.bins = config.bins();
    spec.values.resize(spec.frames * spec.bins);

    detail::RealFft fft(n_fft);
    std::vector<double> frame(n_fft);
    for (std::size_t f = 0; f < spec.frames; ++f) {
        const auto start = static_cast<std::ptrdiff_t>(f * config.hop) - pad;
        for (std::size_t i = 0; i < n_fft; ++i) {
            frame[i] = audio.samples[reflect_index(start + static_cast<std::ptrdiff_t>(i), len)] * window[i];
        }
        fft.forward(frame, std::span(spec.values).subspan(f * spec.bins, spec.bins));
    }
    return spec;
}

AudioBuffer istft(const ComplexSpectrogram& spec, std::size_t length, int sample_rate, const StftConfig& config) {
    config.validate();
    if (spec.bins != config.bins() || spec.geometry != config) {
        throw std::invalid_argument("istft: spectrogram geometry (n_fft " + std::to_string(spec.geometry.n_fft) +
                                    ", hop " + std::to_string(spec.geometry.hop) + ", " +
                                    std::to_string(spec.bins) + " bins) does not match the synthesis geometry");
    }
    if (spec.values.size() != spec.frames * spec.bins) throw std::invalid_argument("istft: malformed spectrogram");

    const std::size_t n_fft = config.n_fft;
    const std::size_t pad = n_fft / 2;
    const std::vector<double> window = hann_window(n_fft);
    const std::size_t total = spec.frames == 0 ? 0 : n_fft + config.hop * (spec.frames - 1);
    std::vector<double> sum(total, 0.0);
    std::vector<double> weight(total, 0.0);

    detail::RealFft fft(n_fft);
    std::vector<double> frame(n_fft);
    for (std::size_t f = 0; f < spec.frames; ++f) {
        fft.inverse(std::span(spec.values).subspan(f * spec.bins, spec.bins), frame);
        const std::size_t start = f * config.hop;
        for (std::size_t i = 0; i < n_fft; ++i) {
            sum[start + i] += frame[i] * window[i];
            weight[start + i] += window[i] * window[i];
        }
    }

    AudioBuffer out;
    out.sample_rate = sample_rate;
    out.samples.assign(length, 0.0);
    for (std::size_t i = 0; i < length && i + pad < total; ++i) {
        const double w = weight[i + pad];
        out.samples[i] = w > 1e-11 ? sum[i + pad] / w : 0.0;
    }
    return out;
}

}  // namespace melrefine
