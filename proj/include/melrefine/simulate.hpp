#pragma once

// Paired-data simulator: corrupts clean speech with synthetic reverberation,
// additive noise at a calibrated SNR, and (on the mel condition) temporal smearing.

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "melrefine/audio.hpp"
#include "melrefine/mel.hpp"

namespace melrefine {

enum class NoiseColor { white, pink };

NoiseColor parse_noise_color(const std::string& name);
const char* to_string(NoiseColor color);

struct DegradationSpec {
    double snr_db = 5.0;
    double rt60_s = 0.0;
    std::size_t smear_frames = 0;
    std::uint64_t seed = 0;
    NoiseColor noise = NoiseColor::pink;

    void validate() const;
    friend bool operator==(const DegradationSpec&, const DegradationSpec&) = default;
};

struct PairRecord {
    std::string id;
    std::filesystem::path clean_path;
    std::filesystem::path distorted_path;
    DegradationSpec spec;
    /// Optional pre-rendered refinement, used by evaluation instead of running the model.
    std::filesystem::path refined_path;

    friend bool operator==(const PairRecord&, const PairRecord&) = default;
};

struct PairManifest {
    std::vector<PairRecord> records;

    /// One record per line: tab-separated key=value fields.
    void save(const std::filesystem::path& path) const;
    static PairManifest load(const std::filesystem::path& path);
    std::string to_text() const;
    static PairManifest parse(const std::string& text, const std::filesystem::path& base = {});

    friend bool operator==(const PairManifest&, const PairManifest&) = default;
};

AudioBuffer white_noise(std::size_t length, int sample_rate, std::mt19937_64& rng);
/// White noise shaped to a -3 dB/octave spectrum, unit RMS.
AudioBuffer pink_noise(std::size_t length, int sample_rate, std::mt19937_64& rng);

/// Loops/crops `noise` to the clean length from a random offset, scales it so the
/// clean-to-noise energy ratio is `snr_db`, and adds it.
AudioBuffer add_noise_at_snr(const AudioBuffer& clean, const AudioBuffer& noise, double snr_db, std::mt19937_64& rng);

/// Unit impulse followed by exponentially decaying noise whose energy falls 60 dB at rt60_s.
AudioBuffer synth_rir(double rt60_s, int sample_rate, std::mt19937_64& rng);

/// Full convolution truncated to the input length, without level correction.
AudioBuffer convolve_truncated(const AudioBuffer& signal, const AudioBuffer& kernel);
/// convolve_truncated rescaled to the input's peak amplitude.
AudioBuffer apply_reverb(const AudioBuffer& clean, const AudioBuffer& rir);

/// Centered moving average over 2 * smear_frames + 1 frames with reflect padding.
MelSpectrogram spectral_smear(const MelSpectrogram& mel, std::size_t smear_frames);

/// Applies reverb then noise according to `spec`. `noise_bank`, when non-empty,
/// replaces the synthetic noise generator.
AudioBuffer degrade(const AudioBuffer& clean, const DegradationSpec& spec,
                    const std::vector<AudioBuffer>& noise_bank = {});

struct DatasetOptions {
    std::filesystem::path clean_dir;
    std::filesystem::path out_dir;
    std::vector<DegradationSpec> specs;
    std::uint64_t seed = 0;
    std::filesystem::path noise_dir;  // optional
};

/// For every clean WAV (sorted by name) and every spec: writes a 24 kHz clean
/// reference and its distorted version under out_dir, plus manifest.txt.
PairManifest build_dataset(const DatasetOptions& options);

/// 10 log10(E_clean / E_(distorted - clean)).
double measured_snr_db(const AudioBuffer& clean, const AudioBuffer& distorted);

}  // namespace melrefine
