#include "melrefine/eval.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "melrefine/refine.hpp"

namespace melrefine {

double si_snr(const AudioBuffer& estimate, const AudioBuffer& reference) {
    if (estimate.size() != reference.size()) {
        throw std::invalid_argument("si_snr: length mismatch (" + std::to_string(estimate.size()) + " vs " +
                                    std::to_string(reference.size()) + ")");
    }
    const std::size_t n = reference.size();
    if (n == 0) throw std::invalid_argument("si_snr: empty signals");
    double mean_e = 0.0, mean_s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mean_e += estimate.samples[i];
        mean_s += reference.samples[i];
    }
    mean_e /= static_cast<double>(n);
    mean_s /= static_cast<double>(n);
    double dot = 0.0, ref_energy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double s = reference.samples[i] - mean_s;
        dot += (estimate.samples[i] - mean_e) * s;
        ref_energy += s * s;
    }
    if (!(ref_energy > 0.0)) throw std::invalid_argument("si_snr: reference has zero energy");
    const double alpha = dot / ref_energy;
    double target = 0.0, residual = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double st = alpha * (reference.samples[i] - mean_s);
        const double r = (estimate.samples[i] - mean_e) - st;
        target += st * st;
        residual += r * r;
    }
    if (residual <= target * std::pow(10.0, -kSiSnrCap / 10.0)) return kSiSnrCap;
    return 10.0 * std::log10(target / residual);
}

namespace {

void require_same_mel(const MelSpectrogram& a, const MelSpectrogram& b, const char* what) {
    if (a.values.shape() != b.values.shape()) {
        throw std::invalid_argument(std::string(what) + ": shape mismatch " + shape_string(a.values.shape()) +
                                    " vs " + shape_string(b.values.shape()));
    }
    if (a.values.size() == 0) throw std::invalid_argument(std::string(what) + ": empty mel");
}

}  // namespace

double mel_mse(const MelSpectrogram& a, const MelSpectrogram& b) {
    require_same_mel(a, b, "mel_mse");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        const double d = a.values[i] - b.values[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.values.size());
}

double log_spectral_distance(const MelSpectrogram& a, const MelSpectrogram& b) {
    require_same_mel(a, b, "log_spectral_distance");
    return std::sqrt(mel_mse(a, b));
}

std::vector<std::vector<unsigned char>> spectrogram_pixels(const MelSpectrogram& mel) {
    if (mel.values.rank() != 2 || mel.values.size() == 0) throw std::invalid_argument("spectrogram image: empty mel");
    if (!mel.values.all_finite()) throw std::invalid_argument("spectrogram image: non-finite mel");
    const std::size_t frames = mel.frames();
    const std::size_t bins = mel.n_mels();
    const auto [lo_it, hi_it] = std::minmax_element(mel.values.data(), mel.values.data() + mel.values.size());
    const double lo = *lo_it;
    const double range = *hi_it - lo;
    std::vector<std::vector<unsigned char>> rows(bins, std::vector<unsigned char>(frames));
    for (std::size_t y = 0; y < bins; ++y) {
        const std::size_t bin = bins - 1 - y;
        for (std::size_t x = 0; x < frames; ++x) {
            const double u = range > 0.0 ? (mel.values[x * bins + bin] - lo) / range : 0.5;
            rows[y][x] = static_cast<unsigned char>(std::lround(u * 255.0));
        }
    }
    return rows;
}

void render_spectrogram_image(const MelSpectrogram& mel, const std::filesystem::path& path) {
    auto rows = spectrogram_pixels(mel);
    FILE* file = std::fopen(path.string().c_str(), "wb");
    if (!file) throw IoError("cannot write image " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        std::fclose(file);
        throw IoError("libpng initialization failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(file);
        throw IoError("failed writing image " + path.string());
    }
    png_init_io(png, file);
    png_set_IHDR(png, info, static_cast<png_uint_32>(rows.front().size()), static_cast<png_uint_32>(rows.size()), 8,
                 PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (auto& row : rows) png_write_row(png, row.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    if (std::fclose(file) != 0) throw IoError("failed closing image " + path.string());
}

std::vector<EvalRecord> evaluate_manifest(const PairManifest& manifest, const Refiner* refiner,
                                          const RefineOptions& options, const MelFilterbank& fb) {
    std::vector<EvalRecord> out;
    for (const auto& r : manifest.records) {
        const AudioBuffer clean = resample(load_wav(r.clean_path), fb.sample_rate);
        const AudioBuffer distorted = resample(load_wav(r.distorted_path), fb.sample_rate);
        AudioBuffer refined;
        if (!r.refined_path.empty()) {
            refined = resample(load_wav(r.refined_path), fb.sample_rate);
        } else if (refiner) {
            refined = refiner->refine_wav(distorted, options, r.spec.smear_frames);
        } else {
            throw std::invalid_argument("evaluate: record '" + r.id + "' has no refined_path and no model was given");
        }
        if (refined.size() != clean.size()) {
            throw std::invalid_argument("evaluate: record '" + r.id + "' refined length " +
                                        std::to_string(refined.size()) + " differs from clean " +
                                        std::to_string(clean.size()));
        }
        const MelSpectrogram clean_mel = audio_to_logmel(clean, fb);
        EvalRecord e;
        e.id = r.id;
        e.si_snr_distorted = si_snr(distorted, clean);
        e.si_snr_refined = si_snr(refined, clean);
        e.lsd_distorted = log_spectral_distance(audio_to_logmel(distorted, fb), clean_mel);
        e.lsd_refined = log_spectral_distance(audio_to_logmel(refined, fb), clean_mel);
        out.push_back(e);
    }
    return out;
}

std::string format_report(const std::vector<EvalRecord>& records) {
    std::ostringstream os;
    os.precision(6);
    os << std::fixed;
    for (const auto& e : records) {
        os << "id=" << e.id << " si_snr_distorted=" << e.si_snr_distorted << " si_snr_refined=" << e.si_snr_refined
           << " lsd_distorted=" << e.lsd_distorted << " lsd_refined=" << e.lsd_refined << '\n';
    }
    return os.str();
}

}  // namespace melrefine
