#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "melrefine/audio.hpp"
#include "melrefine/mel.hpp"
#include "melrefine/simulate.hpp"

namespace melrefine {

class Refiner;
struct RefineOptions;

inline constexpr double kSiSnrCap = 100.0;

/// Scale-invariant SNR in dB after removing the mean of both signals; capped at +100 dB.
double si_snr(const AudioBuffer& estimate, const AudioBuffer& reference);

/// Root mean square of the cellwise log-mel difference.
double log_spectral_distance(const MelSpectrogram& a, const MelSpectrogram& b);

/// Mean squared log-mel difference over all cells.
double mel_mse(const MelSpectrogram& a, const MelSpectrogram& b);

/// Grayscale PNG, one pixel per cell: time left to right, low mel bins at the bottom,
/// values min-max normalized (a constant image is mid-gray).
void render_spectrogram_image(const MelSpectrogram& mel, const std::filesystem::path& path);

/// The 8-bit pixel rows render_spectrogram_image would write, top row first.
std::vector<std::vector<unsigned char>> spectrogram_pixels(const MelSpectrogram& mel);

struct EvalRecord {
    std::string id;
    double si_snr_distorted = 0.0;
    double si_snr_refined = 0.0;
    double lsd_distorted = 0.0;
    double lsd_refined = 0.0;
};

/// For each record: scores the distorted file and a refined version against the clean
/// file. The refined audio comes from the record's refined_path when set, otherwise
/// from `refiner` (an error if neither is available).
std::vector<EvalRecord> evaluate_manifest(const PairManifest& manifest, const Refiner* refiner,
                                          const RefineOptions& options, const MelFilterbank& fb);

/// One line per record: id=... si_snr_distorted=... si_snr_refined=... lsd_distorted=... lsd_refined=...
std::string format_report(const std::vector<EvalRecord>& records);

}  // namespace melrefine
