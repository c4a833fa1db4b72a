#include "melrefine/mel.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "fft.hpp"

namespace melrefine {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

constexpr double kSlaneyLinearStep = 200.0 / 3.0;
constexpr double kSlaneyLogStartHz = 1000.0;
constexpr double kSlaneyLogStartMel = kSlaneyLogStartHz / kSlaneyLinearStep;
const double kSlaneyLogStep = std::log(6.4) / 27.0;

}  // namespace

MelScale parse_mel_scale(const std::string& name) {
    if (name == "slaney") return MelScale::slaney;
    if (name == "htk") return MelScale::htk;
    throw std::invalid_argument("unknown mel scale '" + name + "' (expected slaney or htk)");
}

const char* to_string(MelScale scale) {
    return scale == MelScale::slaney ? "slaney" : "htk";
}

double hz_to_mel(double hz, MelScale scale) {
    if (scale == MelScale::htk) return 2595.0 * std::log10(1.0 + hz / 700.0);
    if (hz < kSlaneyLogStartHz) return hz / kSlaneyLinearStep;
    return kSlaneyLogStartMel + std::log(hz / kSlaneyLogStartHz) / kSlaneyLogStep;
}

double mel_to_hz(double mel, MelScale scale) {
    if (scale == MelScale::htk) return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
    if (mel < kSlaneyLogStartMel) return mel * kSlaneyLinearStep;
    return kSlaneyLogStartHz * std::exp(kSlaneyLogStep * (mel - kSlaneyLogStartMel));
}

std::vector<double> MelFilterbank::center_frequencies() const {
    const double lo = hz_to_mel(f_min, scale);
    const double hi = hz_to_mel(f_max, scale);
    const std::size_t n = n_mels();
    std::vector<double> centers(n);
    for (std::size_t i = 0; i < n; ++i) {
        centers[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i + 1) / static_cast<double>(n + 1), scale);
    }
    return centers;
}

MelFilterbank build_mel_filterbank(std::size_t n_mels, std::size_t n_fft, int sample_rate, double f_min,
                                   double f_max, MelScale scale) {
    if (sample_rate <= 0) throw std::invalid_argument("mel filterbank: sample rate must be positive");
    if (n_mels == 0 || n_fft < 2) throw std::invalid_argument("mel filterbank: need n_mels >= 1 and n_fft >= 2");
    if (!(f_min >= 0.0 && f_min < f_max && f_max <= sample_rate / 2.0)) {
        throw std::invalid_argument("mel filterbank: require 0 <= f_min < f_max <= sample_rate / 2");
    }
    const std::size_t bins = n_fft / 2 + 1;
    const double lo = hz_to_mel(f_min, scale);
    const double hi = hz_to_mel(f_max, scale);
    std::vector<double> edges(n_mels + 2);
    for (std::size_t i = 0; i < edges.size(); ++i) {
        edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n_mels + 1), scale);
    }

    MelFilterbank fb;
    fb.weights = Tensor(Shape{n_mels, bins});
    fb.f_min = f_min;
    fb.f_max = f_max;
    fb.scale = scale;
    fb.sample_rate = sample_rate;
    fb.n_fft = n_fft;
    const double bin_hz = static_cast<double>(sample_rate) / static_cast<double>(n_fft);
    for (std::size_t m = 0; m < n_mels; ++m) {
        const double left = edges[m];
        const double center = edges[m + 1];
        const double right = edges[m + 2];
        const double area = scale == MelScale::slaney ? 2.0 / (right - left) : 1.0;
        bool any = false;
        for (std::size_t k = 0; k < bins; ++k) {
            const double f = static_cast<double>(k) * bin_hz;
            const double rise = (f - left) / (center - left);
            const double fall = (right - f) / (right - center);
            const double w = std::max(0.0, std::min(rise, fall)) * area;
            fb.weights[m * bins + k] = w;
            any = any || w > 0.0;
        }
        if (!any) {
            throw std::invalid_argument("mel filterbank: filter " + std::to_string(m) +
                                        " covers no FFT bin; n_mels too large for n_fft " + std::to_string(n_fft));
        }
    }
    return fb;
}

MelSpectrogram audio_to_logmel(const AudioBuffer& audio, const MelFilterbank& fb, const StftConfig& stft_config,
                               double floor) {
    if (audio.sample_rate != fb.sample_rate) {
        throw std::invalid_argument("audio_to_logmel: audio at " + std::to_string(audio.sample_rate) +
                                    " Hz, filterbank expects " + std::to_string(fb.sample_rate) + " Hz");
    }
    if (stft_config.n_fft != fb.n_fft) throw std::invalid_argument("audio_to_logmel: n_fft differs from filterbank");
    if (!(floor > 0.0)) throw std::invalid_argument("audio_to_logmel: floor must be positive");
    const ComplexSpectrogram spec = stft(audio, stft_config);

    RowMatrix magnitude(spec.frames, spec.bins);
    for (std::size_t f = 0; f < spec.frames; ++f) {
        for (std::size_t b = 0; b < spec.bins; ++b) magnitude(f, b) = std::abs(spec.at(f, b));
    }
    const auto mels = static_cast<Eigen::Index>(fb.n_mels());
    Eigen::Map<const RowMatrix> weights(fb.weights.data(), mels, static_cast<Eigen::Index>(fb.bins()));

    MelSpectrogram out;
    out.frame_rate = static_cast<double>(audio.sample_rate) / static_cast<double>(stft_config.hop);
    out.values = Tensor(Shape{spec.frames, fb.n_mels()});
    Eigen::Map<RowMatrix> values(out.values.data(), static_cast<Eigen::Index>(spec.frames), mels);
    values.noalias() = magnitude * weights.transpose();
    const double log_floor = std::log(floor);
    for (double& v : out.values.values()) v = v > floor ? std::log(v) : log_floor;
    return out;
}

GriffinLimVocoder::GriffinLimVocoder(MelFilterbank fb, GriffinLimOptions options, StftConfig stft_config)
    : fb_(std::move(fb)), options_(options), stft_(stft_config) {
    stft_.validate();
    if (stft_.n_fft != fb_.n_fft) throw std::invalid_argument("griffin-lim: n_fft differs from filterbank");
    const auto mels = static_cast<Eigen::Index>(fb_.n_mels());
    const auto bins = static_cast<Eigen::Index>(fb_.bins());
    Eigen::Map<const RowMatrix> weights(fb_.weights.data(), mels, bins);
    const RowMatrix pinv = weights.completeOrthogonalDecomposition().pseudoInverse();
    pseudo_inverse_ = Tensor(Shape{fb_.bins(), fb_.n_mels()});
    Eigen::Map<RowMatrix>(pseudo_inverse_.data(), bins, mels) = pinv;
}

Tensor GriffinLimVocoder::magnitude_estimate(const MelSpectrogram& mel) const {
    if (mel.values.rank() != 2 || mel.n_mels() != fb_.n_mels()) {
        throw std::invalid_argument("griffin-lim: mel has " + shape_string(mel.values.shape()) + ", filterbank has " +
                                    std::to_string(fb_.n_mels()) + " bins");
    }
    if (!mel.values.all_finite()) throw std::invalid_argument("griffin-lim: non-finite mel");
    const auto frames = static_cast<Eigen::Index>(mel.frames());
    const auto mels = static_cast<Eigen::Index>(fb_.n_mels());
    const auto bins = static_cast<Eigen::Index>(fb_.bins());
    RowMatrix linear = Eigen::Map<const RowMatrix>(mel.values.data(), frames, mels).array().exp().matrix();
    Tensor out(Shape{mel.frames(), fb_.bins()});
    Eigen::Map<RowMatrix> mag(out.data(), frames, bins);
    mag.noalias() = linear * Eigen::Map<const RowMatrix>(pseudo_inverse_.data(), bins, mels).transpose();
    mag = mag.cwiseMax(0.0);
    return out;
}

AudioBuffer GriffinLimVocoder::synthesize(const MelSpectrogram& mel, std::optional<std::size_t> length) const {
    return run(mel, nullptr, length);
}

AudioBuffer GriffinLimVocoder::synthesize_from(const MelSpectrogram& mel, const ComplexSpectrogram& initial_phase,
                                               std::optional<std::size_t> length) const {
    if (initial_phase.frames != mel.frames() || initial_phase.bins != fb_.bins()) {
        throw std::invalid_argument("griffin-lim: initial phase is " + std::to_string(initial_phase.frames) + "x" +
                                    std::to_string(initial_phase.bins) + ", mel needs " +
                                    std::to_string(mel.frames()) + "x" + std::to_string(fb_.bins()));
    }
    return run(mel, &initial_phase, length);
}

AudioBuffer GriffinLimVocoder::run(const MelSpectrogram& mel, const ComplexSpectrogram* initial_phase,
                                   std::optional<std::size_t> length) const {
    const Tensor magnitude = magnitude_estimate(mel);
    const std::size_t frames = mel.frames();
    const std::size_t bins = fb_.bins();
    const std::size_t out_len = length.value_or(frames > 0 ? (frames - 1) * stft_.hop : 0);

    ComplexSpectrogram spec;
    spec.frames = frames;
    spec.bins = bins;
    spec.geometry = stft_;
    spec.values.assign(frames * bins, {});

    // Zero-phase start unless a reference phase is given.
    std::vector<std::complex<double>> angles(frames * bins, {1.0, 0.0});
    if (initial_phase) {
        for (std::size_t i = 0; i < angles.size(); ++i) {
            const std::complex<double> z = initial_phase->values[i];
            if (std::abs(z) > 0.0) angles[i] = z / std::abs(z);
        }
    }
    std::vector<std::complex<double>> previous(frames * bins, {0.0, 0.0});
    const double carry = options_.momentum / (1.0 + options_.momentum);
    // Each iteration projects onto consistent spectrograms; work at a length covering every frame.
    const std::size_t work_len = std::max<std::size_t>(out_len, (frames > 0 ? frames - 1 : 0) * stft_.hop + 1);

    for (std::size_t it = 0; it < options_.iterations; ++it) {
        for (std::size_t i = 0; i < spec.values.size(); ++i) spec.values[i] = magnitude[i] * angles[i];
        const AudioBuffer inverse = istft(spec, work_len, fb_.sample_rate, stft_);
        const ComplexSpectrogram rebuilt = stft(inverse, stft_);
        for (std::size_t i = 0; i < angles.size(); ++i) {
            const std::size_t f = i / bins;
            const std::complex<double> r = f < rebuilt.frames ? rebuilt.values[i] : std::complex<double>{};
            std::complex<double> a = r - carry * previous[i];
            a /= std::abs(a) + 1e-16;
            angles[i] = a;
            previous[i] = r;
        }
    }
    for (std::size_t i = 0; i < spec.values.size(); ++i) spec.values[i] = magnitude[i] * angles[i];
    AudioBuffer out = istft(spec, out_len, fb_.sample_rate, stft_);
    return out;
}

AudioBuffer logmel_to_audio(const MelSpectrogram& mel, const MelFilterbank& fb, std::size_t iterations) {
    GriffinLimOptions options;
    options.iterations = iterations;
    return GriffinLimVocoder(fb, options).synthesize(mel);
}

}  // namespace melrefine
