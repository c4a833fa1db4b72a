#include <doctest.h>

#include <cmath>
#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "melrefine/audio.hpp"
#include "melrefine/mel.hpp"
#include "melrefine/stft.hpp"

using namespace melrefine;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "melrefine_test_dsp";
    fs::create_directories(dir);
    return dir / name;
}

AudioBuffer sine(double freq, std::size_t n, int rate = kSampleRate, double amp = 1.0) {
    AudioBuffer a;
    a.sample_rate = rate;
    a.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) a.samples[i] = amp * std::sin(2.0 * std::numbers::pi * freq * i / rate);
    return a;
}

AudioBuffer white(std::size_t n, std::uint64_t seed, double scale = 0.3) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, scale);
    AudioBuffer a;
    a.samples.resize(n);
    for (double& s : a.samples) s = normal(rng);
    return a;
}

// Frequency (Hz, 1 Hz grid up to `max_hz`) maximizing |DFT| computed by direct summation.
double dominant_frequency(const std::vector<double>& x, int rate, double max_hz) {
    double best = 0.0;
    double best_mag = -1.0;
    const double duration = static_cast<double>(x.size()) / rate;
    for (double f = 1.0; f <= max_hz; f += 1.0 / duration) {
        double re = 0.0, im = 0.0;
        for (std::size_t n = 0; n < x.size(); ++n) {
            const double ph = 2.0 * std::numbers::pi * f * n / rate;
            re += x[n] * std::cos(ph);
            im -= x[n] * std::sin(ph);
        }
        const double mag = re * re + im * im;
        if (mag > best_mag) {
            best_mag = mag;
            best = f;
        }
    }
    return best;
}

double snr_db(const std::vector<double>& ref, const std::vector<double>& est) {
    double s = 0.0, e = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
        s += ref[i] * ref[i];
        e += (ref[i] - est[i]) * (ref[i] - est[i]);
    }
    return 10.0 * std::log10(s / e);
}

void write_raw_wav(const fs::path& path, std::uint16_t format, std::uint16_t channels, std::uint16_t bits,
                   const std::vector<unsigned char>& payload) {
    std::ofstream f(path, std::ios::binary);
    auto u16 = [&](std::uint16_t v) { f.put(static_cast<char>(v & 0xFF)); f.put(static_cast<char>(v >> 8)); };
    auto u32 = [&](std::uint32_t v) { for (int i = 0; i < 4; ++i) f.put(static_cast<char>((v >> (8 * i)) & 0xFF)); };
    f.write("RIFF", 4);
    u32(36 + static_cast<std::uint32_t>(payload.size()));
    f.write("WAVEfmt ", 8);
    u32(16);
    u16(format);
    u16(channels);
    u32(24000);
    u32(24000u * channels * bits / 8);
    u16(static_cast<std::uint16_t>(channels * bits / 8));
    u16(bits);
    f.write("data", 4);
    u32(static_cast<std::uint32_t>(payload.size()));
    f.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
}

}  // namespace

TEST_CASE("wav: silence, stereo cancellation and quantization round trip") {
    AudioBuffer silence;
    silence.samples.assign(24000, 0.0);
    save_wav(silence, temp_path("silence.wav"));
    const AudioBuffer loaded = load_wav(temp_path("silence.wav"));
    CHECK(loaded.sample_rate == 24000);
    REQUIRE(loaded.size() == 24000);
    for (double s : loaded.samples) CHECK(s == 0.0);

    // L = -R averages to silence.
    std::vector<unsigned char> payload;
    for (int i = 0; i < 50; ++i) {
        const auto l = static_cast<std::int16_t>(1000 + 37 * i);
        const auto r = static_cast<std::int16_t>(-l);
        for (std::int16_t v : {l, r}) {
            payload.push_back(static_cast<unsigned char>(static_cast<std::uint16_t>(v) & 0xFF));
            payload.push_back(static_cast<unsigned char>(static_cast<std::uint16_t>(v) >> 8));
        }
    }
    write_raw_wav(temp_path("stereo.wav"), 1, 2, 16, payload);
    const AudioBuffer mono = load_wav(temp_path("stereo.wav"));
    CHECK(mono.size() == 50);
    for (double s : mono.samples) CHECK(s == 0.0);

    AudioBuffer noise = white(5000, 3, 0.4);
    for (double& s : noise.samples) s = std::clamp(s, -1.0, 1.0);
    save_wav(noise, temp_path("noise.wav"));
    const AudioBuffer back = load_wav(temp_path("noise.wav"));
    REQUIRE(back.size() == noise.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < noise.size(); ++i) worst = std::max(worst, std::abs(back.samples[i] - noise.samples[i]));
    CHECK(worst <= std::ldexp(1.0, -15));
}

TEST_CASE("wav: header contract, clamping and float input") {
    AudioBuffer a;
    a.samples.assign(100, 0.25);
    a.samples[0] = 1.5;
    save_wav(a, temp_path("hundred.wav"));
    std::ifstream f(temp_path("hundred.wav"), std::ios::binary);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    REQUIRE(bytes.size() == 44 + 200);
    const std::uint32_t rate = bytes[24] | (bytes[25] << 8) | (bytes[26] << 16) | (bytes[27] << 24);
    const std::uint32_t data_bytes = bytes[40] | (bytes[41] << 8) | (bytes[42] << 16) | (bytes[43] << 24);
    CHECK(rate == 24000);
    CHECK(data_bytes / 2 == 100);
    const AudioBuffer back = load_wav(temp_path("hundred.wav"));
    CHECK(back.samples[0] == doctest::Approx(1.0).epsilon(std::ldexp(1.0, -15)));

    std::vector<unsigned char> payload;
    for (float v : {0.5f, -0.25f, 2.0f}) {
        std::uint32_t raw;
        std::memcpy(&raw, &v, 4);
        for (int i = 0; i < 4; ++i) payload.push_back(static_cast<unsigned char>((raw >> (8 * i)) & 0xFF));
    }
    write_raw_wav(temp_path("float.wav"), 3, 1, 32, payload);
    const AudioBuffer fl = load_wav(temp_path("float.wav"));
    REQUIRE(fl.size() == 3);
    CHECK(fl.samples[0] == 0.5);
    CHECK(fl.samples[1] == -0.25);
    CHECK(fl.samples[2] == 1.0);
}

TEST_CASE("wav: error paths") {
    CHECK_THROWS_AS(load_wav(temp_path("does_not_exist.wav")), IoError);
    write_raw_wav(temp_path("eight_bit.wav"), 1, 1, 8, {128, 128});
    CHECK_THROWS_AS(load_wav(temp_path("eight_bit.wav")), FormatError);
    write_raw_wav(temp_path("empty.wav"), 1, 1, 16, {});
    CHECK_THROWS_AS(load_wav(temp_path("empty.wav")), FormatError);
    AudioBuffer a;
    a.samples.assign(4, 0.0);
    CHECK_THROWS_AS(save_wav(a, "/nonexistent_dir/x.wav"), IoError);
}

TEST_CASE("resample: identity, length and spectral peak") {
    const AudioBuffer x = white(1000, 4);
    CHECK(resample(x, 24000) == x);

    const AudioBuffer tone = sine(440.0, 48000, 48000, 0.5);
    const AudioBuffer down = resample(tone, 24000);
    CHECK(down.sample_rate == 24000);
    CHECK(down.size() == 24000);
    CHECK(std::abs(dominant_frequency(down.samples, 24000, 2000.0) - 440.0) <= 1.0);

    AudioBuffer odd = white(1001, 5);
    CHECK(resample(odd, 16000).size() == 667);  // round(1001 * 2 / 3)
    CHECK_THROWS_AS(resample(x, 0), std::invalid_argument);
}

TEST_CASE("stft: zeros, linearity and frame geometry") {
    AudioBuffer zeros;
    zeros.samples.assign(3000, 0.0);
    const ComplexSpectrogram z = stft(zeros);
    CHECK(z.frames == 3000 / 256 + 1);
    CHECK(z.bins == 513);
    for (const auto& v : z.values) CHECK(std::abs(v) == 0.0);

    AudioBuffer x = white(4096, 6);
    AudioBuffer y = white(4096, 7);
    AudioBuffer mix = x;
    for (std::size_t i = 0; i < mix.size(); ++i) mix.samples[i] = 2.0 * x.samples[i] - 0.5 * y.samples[i];
    const auto sx = stft(x), sy = stft(y), sm = stft(mix);
    double worst = 0.0, peak = 0.0;
    for (std::size_t i = 0; i < sm.values.size(); ++i) {
        worst = std::max(worst, std::abs(sm.values[i] - (2.0 * sx.values[i] - 0.5 * sy.values[i])));
        peak = std::max(peak, std::abs(sm.values[i]));
    }
    CHECK(worst / peak < 1e-6);

    CHECK_THROWS_AS(stft(AudioBuffer{}), std::invalid_argument);
}

TEST_CASE("stft: 1125 Hz sine peaks at bin 48") {
    const ComplexSpectrogram s = stft(sine(1125.0, 24000));
    for (std::size_t f = 4; f + 4 < s.frames; ++f) {
        std::size_t arg = 0;
        for (std::size_t b = 1; b < s.bins; ++b) {
            if (std::abs(s.at(f, b)) > std::abs(s.at(f, arg))) arg = b;
        }
        CHECK(arg == 48);
    }
}

TEST_CASE("istft: COLA round trip") {
    for (std::uint64_t seed : {11u, 12u}) {
        const AudioBuffer x = white(4096 + 777 * seed, seed);
        const AudioBuffer back = istft(stft(x), x.size());
        CHECK(snr_db(x.samples, back.samples) > 50.0);
    }

    ComplexSpectrogram zero = stft(white(2000, 13));
    for (auto& v : zero.values) v = {};
    for (double s : istft(zero, 2000).samples) CHECK(s == 0.0);

    const AudioBuffer tone = sine(1125.0, 24000);
    const AudioBuffer rec = istft(stft(tone), tone.size());
    double worst = 0.0;
    for (std::size_t i = 1024; i + 1024 < tone.size(); ++i) worst = std::max(worst, std::abs(rec.samples[i] - tone.samples[i]));
    CHECK(worst < 1e-3);

    ComplexSpectrogram bad = stft(tone);
    bad.geometry.hop = 128;
    CHECK_THROWS_AS(istft(bad, tone.size()), std::invalid_argument);
}

TEST_CASE("mel filterbank: shape, coverage and monotone centers") {
    const MelFilterbank fb = build_mel_filterbank();
    REQUIRE(fb.weights.shape() == Shape{128, 513});
    for (std::size_t m = 0; m < 128; ++m) {
        double sum = 0.0;
        for (std::size_t k = 0; k < 513; ++k) {
            CHECK(fb.weights[m * 513 + k] >= 0.0);
            sum += fb.weights[m * 513 + k];
        }
        CHECK(sum > 0.0);
    }
    // Brute-force scan of row argmaxes.
    std::size_t previous = 0;
    for (std::size_t m = 0; m < 128; ++m) {
        std::size_t arg = 0;
        for (std::size_t k = 1; k < 513; ++k) {
            if (fb.weights[m * 513 + k] > fb.weights[m * 513 + arg]) arg = k;
        }
        if (m > 0) CHECK(arg > previous);
        previous = arg;
    }
    // Every bin strictly inside (f_min, f_max) is covered.
    for (std::size_t k = 1; k < 512; ++k) {
        double column = 0.0;
        for (std::size_t m = 0; m < 128; ++m) column += fb.weights[m * 513 + k];
        CHECK(column > 0.0);
    }
    const auto centers = fb.center_frequencies();
    for (std::size_t m = 1; m < centers.size(); ++m) CHECK(centers[m] > centers[m - 1]);

    CHECK_THROWS_AS(build_mel_filterbank(128, 1024, 24000, 5000.0, 4000.0), std::invalid_argument);
    CHECK_THROWS_AS(build_mel_filterbank(128, 1024, 24000, 0.0, 13000.0), std::invalid_argument);
    CHECK_THROWS_AS(build_mel_filterbank(256, 64, 24000), std::invalid_argument);
    const MelFilterbank htk = build_mel_filterbank(40, 512, 16000, 20.0, 8000.0, MelScale::htk);
    CHECK(htk.weights.shape() == Shape{40, 257});
}

TEST_CASE("log-mel: floor, scaling and frame count") {
    const MelFilterbank fb = build_mel_filterbank();
    AudioBuffer silence;
    silence.samples.assign(24000, 0.0);
    const MelSpectrogram quiet = audio_to_logmel(silence, fb);
    CHECK(quiet.frames() == 94);
    CHECK(quiet.n_mels() == 128);
    for (double v : quiet.values.values()) CHECK(v == doctest::Approx(std::log(1e-5)).epsilon(1e-12));
    CHECK(std::log(1e-5) == doctest::Approx(-11.5129).epsilon(1e-5));

    AudioBuffer x = white(24000, 21, 0.05);
    AudioBuffer loud = x;
    for (double& s : loud.samples) s *= 10.0;
    const MelSpectrogram a = audio_to_logmel(x, fb);
    const MelSpectrogram b = audio_to_logmel(loud, fb);
    const double floor = std::log(1e-5);
    std::size_t compared = 0;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        CHECK(a.values[i] >= floor - 1e-9);
        CHECK(b.values[i] >= a.values[i]);
        if (a.values[i] > floor) {
            CHECK(b.values[i] - a.values[i] == doctest::Approx(std::log(10.0)).epsilon(1e-9));
            ++compared;
        }
    }
    CHECK(compared > 0);

    AudioBuffer wrong_rate = x;
    wrong_rate.sample_rate = 16000;
    CHECK_THROWS_AS(audio_to_logmel(wrong_rate, fb), std::invalid_argument);
}

TEST_CASE("log-mel: 1125 Hz sine peaks at the filter covering bin 48") {
    const MelFilterbank fb = build_mel_filterbank();
    const MelSpectrogram mel = audio_to_logmel(sine(1125.0, 24000, kSampleRate, 0.5), fb);
    // Filter with the largest weight at bin 48.
    std::size_t expected = 0;
    for (std::size_t m = 1; m < 128; ++m) {
        if (fb.weights[m * 513 + 48] > fb.weights[expected * 513 + 48]) expected = m;
    }
    for (std::size_t f = 4; f + 4 < mel.frames(); ++f) {
        std::size_t arg = 0;
        for (std::size_t m = 1; m < 128; ++m) {
            if (mel.values[f * 128 + m] > mel.values[f * 128 + arg]) arg = m;
        }
        CHECK(arg == expected);
    }
}

TEST_CASE("griffin-lim: silence, sine recovery and determinism") {
    const MelFilterbank fb = build_mel_filterbank();
    MelSpectrogram floor_mel;
    floor_mel.values = Tensor(Shape{40, 128}, std::log(1e-5));
    CHECK(rms(logmel_to_audio(floor_mel, fb).samples) < 1e-3);

    const AudioBuffer tone = sine(1125.0, 12000, kSampleRate, 0.5);
    const MelSpectrogram mel = audio_to_logmel(tone, fb);
    const AudioBuffer rec = logmel_to_audio(mel, fb);
    CHECK(rec.size() == (mel.frames() - 1) * 256);
    const double bin_hz = 24000.0 / 1024.0;
    CHECK(std::abs(dominant_frequency(rec.samples, 24000, 4000.0) - 1125.0) <= bin_hz);

    const AudioBuffer again = logmel_to_audio(mel, fb);
    CHECK(again == rec);

    MelSpectrogram broken = mel;
    broken.values[5] = std::nan("");
    CHECK_THROWS_AS(logmel_to_audio(broken, fb), std::invalid_argument);
}
