#include "melrefine/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>
#include <string>

namespace melrefine {
namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint16_t read_u16(const unsigned char* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t read_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void put_u16(std::vector<unsigned char>& out, std::uint16_t v) {
    out.push_back(static_cast<unsigned char>(v & 0xFF));
    out.push_back(static_cast<unsigned char>(v >> 8));
}

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
}

void put_tag(std::vector<unsigned char>& out, const char* tag) {
    out.insert(out.end(), tag, tag + 4);
}

double bessel_i0(double x) {
    return std::cyl_bessel_i(0.0, x);
}

}  // namespace

void AudioBuffer::validate() const {
    if (sample_rate <= 0) throw std::invalid_argument("audio: sample rate must be positive");
    for (double s : samples) {
        if (!std::isfinite(s)) throw std::invalid_argument("audio: non-finite sample");
    }
}

AudioBuffer load_wav(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const std::string name = path.string();
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
        std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
        throw FormatError("'" + name + "' is not a RIFF/WAVE file");
    }

    std::uint16_t format = 0;
    std::uint16_t channels = 0;
    std::uint32_t rate = 0;
    std::uint16_t bits = 0;
    const unsigned char* data = nullptr;
    std::size_t data_size = 0;

    std::size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const unsigned char* chunk = bytes.data() + pos;
        const std::size_t size = read_u32(chunk + 4);
        const std::size_t body = pos + 8;
        const std::size_t available = std::min(size, bytes.size() - body);
        if (std::memcmp(chunk, "fmt ", 4) == 0) {
            if (available < 16) throw FormatError("'" + name + "': truncated fmt chunk");
            format = read_u16(chunk + 8);
            channels = read_u16(chunk + 10);
            rate = read_u32(chunk + 12);
            bits = read_u16(chunk + 22);
            if (format == kFormatExtensible) {
                if (available < 26) throw FormatError("'" + name + "': truncated extensible fmt chunk");
                format = read_u16(chunk + 8 + 24);
            }
        } else if (std::memcmp(chunk, "data", 4) == 0) {
            data = chunk + 8;
            data_size = available;
        }
        pos = body + size + (size & 1);
    }

    if (channels == 0 || rate == 0) throw FormatError("'" + name + "': missing or invalid fmt chunk");
    if (!data) throw FormatError("'" + name + "': missing data chunk");
    const bool pcm16 = format == kFormatPcm && bits == 16;
    const bool float32 = format == kFormatFloat && bits == 32;
    if (!pcm16 && !float32) {
        throw FormatError("'" + name + "': unsupported encoding (format " + std::to_string(format) + ", " +
                          std::to_string(bits) + " bits); expected 16-bit PCM or 32-bit float");
    }

    const std::size_t bytes_per_sample = bits / 8;
    const std::size_t frame_bytes = bytes_per_sample * channels;
    const std::size_t frames = data_size / frame_bytes;
    if (frames == 0) throw FormatError("'" + name + "': zero-length audio");

    AudioBuffer out;
    out.sample_rate = static_cast<int>(rate);
    out.samples.resize(frames);
    for (std::size_t f = 0; f < frames; ++f) {
        double sum = 0.0;
        for (std::size_t c = 0; c < channels; ++c) {
            const unsigned char* p = data + f * frame_bytes + c * bytes_per_sample;
            if (pcm16) {
                sum += static_cast<double>(static_cast<std::int16_t>(read_u16(p))) / 32768.0;
            } else {
                const std::uint32_t raw = read_u32(p);
                float v;
                std::memcpy(&v, &raw, sizeof v);
                sum += static_cast<double>(v);
            }
        }
        out.samples[f] = std::clamp(sum / channels, -1.0, 1.0);
    }
    return out;
}

void save_wav(const AudioBuffer& audio, const std::filesystem::path& path) {
    audio.validate();
    const auto frames = static_cast<std::uint32_t>(audio.samples.size());
    std::vector<unsigned char> out;
    out.reserve(44 + 2 * audio.samples.size());
    put_tag(out, "RIFF");
    put_u32(out, 36 + 2 * frames);
    put_tag(out, "WAVE");
    put_tag(out, "fmt ");
    put_u32(out, 16);
    put_u16(out, kFormatPcm);
    put_u16(out, 1);
    put_u32(out, static_cast<std::uint32_t>(audio.sample_rate));
    put_u32(out, static_cast<std::uint32_t>(audio.sample_rate) * 2);
    put_u16(out, 2);
    put_u16(out, 16);
    put_tag(out, "data");
    put_u32(out, 2 * frames);
    for (double s : audio.samples) {
        const double scaled = std::round(std::clamp(s, -1.0, 1.0) * 32768.0);
        const auto q = static_cast<std::int16_t>(std::clamp(scaled, -32768.0, 32767.0));
        put_u16(out, static_cast<std::uint16_t>(q));
    }

    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file) throw IoError("cannot write '" + path.string() + "'");
    file.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!file) throw IoError("write failed for '" + path.string() + "'");
}

AudioBuffer resample(const AudioBuffer& audio, int target_rate) {
    if (target_rate <= 0 || audio.sample_rate <= 0) throw std::invalid_argument("resample: rates must be positive");
    if (target_rate == audio.sample_rate) return audio;

    constexpr double kBeta = 8.0;
    constexpr double kZeroCrossings = 32.0;
    const double ratio = static_cast<double>(target_rate) / audio.sample_rate;
    const double cutoff = std::min(1.0, ratio);
    const double half_width = kZeroCrossings / cutoff;
    const double norm = bessel_i0(kBeta);

    const auto in_len = static_cast<std::int64_t>(audio.samples.size());
    const std::int64_t out_len =
        (in_len * target_rate + audio.sample_rate / 2) / audio.sample_rate;

    AudioBuffer out;
    out.sample_rate = target_rate;
    out.samples.resize(static_cast<std::size_t>(out_len));
    for (std::int64_t n = 0; n < out_len; ++n) {
        const double center = static_cast<double>(n) / ratio;
        const auto lo = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::ceil(center - half_width)));
        const auto hi = std::min<std::int64_t>(in_len - 1, static_cast<std::int64_t>(std::floor(center + half_width)));
        double acc = 0.0;
        for (std::int64_t k = lo; k <= hi; ++k) {
            const double offset = center - static_cast<double>(k);
            const double u = offset / half_width;
            const double window = bessel_i0(kBeta * std::sqrt(std::max(0.0, 1.0 - u * u))) / norm;
            const double arg = std::numbers::pi * cutoff * offset;
            const double sinc = arg == 0.0 ? 1.0 : std::sin(arg) / arg;
            acc += audio.samples[static_cast<std::size_t>(k)] * cutoff * sinc * window;
        }
        out.samples[static_cast<std::size_t>(n)] = acc;
    }
    return out;
}

double energy(const std::vector<double>& samples) {
    double e = 0.0;
    for (double s : samples) e += s * s;
    return e;
}

double rms(const std::vector<double>& samples) {
    return samples.empty() ? 0.0 : std::sqrt(energy(samples) / static_cast<double>(samples.size()));
}

}  // namespace melrefine
