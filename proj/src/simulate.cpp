#include "melrefine/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "fft.hpp"
#include "melrefine/random.hpp"

namespace melrefine {
namespace {

// Tail energy relative to the direct impulse (about 3 dB direct-to-reverberant ratio).
constexpr double kTailEnergy = 0.5;
// RIR length in units of rt60.
constexpr double kRirLengthFactor = 1.5;
// Kernels with at most this many nonzeros are convolved directly.
constexpr std::size_t kSparseKernelLimit = 64;
// Mixtures are scaled below full scale so that 16-bit files never clip.
constexpr double kHeadroomPeak = 0.99;

double peak(const std::vector<double>& x) {
    double p = 0.0;
    for (double v : x) p = std::max(p, std::abs(v));
    return p;
}

std::size_t next_pow2(std::size_t n) {
    std::size_t p = 2;
    while (p < n) p <<= 1;
    return p;
}

std::string format_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

double parse_double(const std::string& s, const std::string& what) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != s.size() || s.empty()) throw std::invalid_argument(what + ": '" + s + "' is not a number");
    return v;
}

std::uint64_t parse_u64(const std::string& s, const std::string& what) {
    std::size_t used = 0;
    std::uint64_t v = 0;
    try {
        v = std::stoull(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != s.size() || s.empty() || s.front() == '-') {
        throw std::invalid_argument(what + ": '" + s + "' is not a non-negative integer");
    }
    return v;
}

}  // namespace

NoiseColor parse_noise_color(const std::string& name) {
    if (name == "pink") return NoiseColor::pink;
    if (name == "white") return NoiseColor::white;
    throw std::invalid_argument("unknown noise color '" + name + "' (expected pink or white)");
}

const char* to_string(NoiseColor color) {
    return color == NoiseColor::pink ? "pink" : "white";
}

void DegradationSpec::validate() const {
    if (!std::isfinite(snr_db)) throw std::invalid_argument("degradation: snr_db must be finite");
    if (!(rt60_s >= 0.0) || !std::isfinite(rt60_s)) throw std::invalid_argument("degradation: rt60_s must be >= 0");
}

std::string PairManifest::to_text() const {
    std::ostringstream os;
    os << "# melrefine pair manifest: one record per line, tab-separated key=value\n";
    for (const auto& r : records) {
        os << "id=" << r.id << "\tclean_path=" << r.clean_path.generic_string()
           << "\tdistorted_path=" << r.distorted_path.generic_string() << "\tsnr_db=" << format_double(r.spec.snr_db)
           << "\trt60_s=" << format_double(r.spec.rt60_s) << "\tsmear_frames=" << r.spec.smear_frames
           << "\tseed=" << r.spec.seed << "\tnoise=" << to_string(r.spec.noise);
        if (!r.refined_path.empty()) os << "\trefined_path=" << r.refined_path.generic_string();
        os << '\n';
    }
    return os.str();
}

PairManifest PairManifest::parse(const std::string& text, const std::filesystem::path& base) {
    PairManifest manifest;
    std::set<std::string> seen;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    auto resolve = [&](const std::string& p) {
        std::filesystem::path path(p);
        return path.is_relative() && !base.empty() ? base / path : path;
    };
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line.front() == '#') continue;
        const std::string where = "manifest line " + std::to_string(line_no);
        std::map<std::string, std::string> fields;
        std::istringstream fs(line);
        std::string field;
        while (std::getline(fs, field, '\t')) {
            if (field.empty()) continue;
            const auto eq = field.find('=');
            if (eq == std::string::npos) throw std::invalid_argument(where + ": field '" + field + "' has no '='");
            const std::string key = field.substr(0, eq);
            if (!fields.emplace(key, field.substr(eq + 1)).second) {
                throw std::invalid_argument(where + ": duplicate key '" + key + "'");
            }
        }
        static const std::set<std::string> known{"id",           "clean_path", "distorted_path", "snr_db", "rt60_s",
                                                 "smear_frames", "seed",       "noise",          "refined_path"};
        for (const auto& [key, value] : fields) {
            if (!known.count(key)) throw std::invalid_argument(where + ": unknown key '" + key + "'");
        }
        for (const char* key : {"id", "clean_path", "distorted_path"}) {
            if (!fields.count(key) || fields[key].empty()) {
                throw std::invalid_argument(where + ": missing required key '" + key + "'");
            }
        }
        PairRecord r;
        r.id = fields["id"];
        if (!seen.insert(r.id).second) throw std::invalid_argument(where + ": duplicate id '" + r.id + "'");
        r.clean_path = resolve(fields["clean_path"]);
        r.distorted_path = resolve(fields["distorted_path"]);
        if (fields.count("refined_path")) r.refined_path = resolve(fields["refined_path"]);
        if (fields.count("snr_db")) r.spec.snr_db = parse_double(fields["snr_db"], where + " snr_db");
        if (fields.count("rt60_s")) r.spec.rt60_s = parse_double(fields["rt60_s"], where + " rt60_s");
        if (fields.count("smear_frames")) {
            r.spec.smear_frames = parse_u64(fields["smear_frames"], where + " smear_frames");
        }
        if (fields.count("seed")) r.spec.seed = parse_u64(fields["seed"], where + " seed");
        if (fields.count("noise")) r.spec.noise = parse_noise_color(fields["noise"]);
        r.spec.validate();
        manifest.records.push_back(std::move(r));
    }
    return manifest;
}

void PairManifest::save(const std::filesystem::path& path) const {
    // Paths under the manifest directory are stored relative to it.
    const std::filesystem::path dir = path.parent_path();
    PairManifest relative = *this;
    for (auto& r : relative.records) {
        for (auto* p : {&r.clean_path, &r.distorted_path, &r.refined_path}) {
            if (p->empty() || dir.empty()) continue;
            const auto rel = p->lexically_relative(dir);
            if (!rel.empty() && *rel.begin() != "..") *p = rel;
        }
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write manifest " + path.string());
    out << relative.to_text();
    if (!out) throw IoError("failed writing manifest " + path.string());
}

PairManifest PairManifest::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open manifest " + path.string());
    std::ostringstream text;
    text << in.rdbuf();
    return parse(text.str(), path.parent_path());
}

AudioBuffer white_noise(std::size_t length, int sample_rate, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    AudioBuffer out;
    out.sample_rate = sample_rate;
    out.samples.resize(length);
    for (double& v : out.samples) v = normal(rng);
    return out;
}

AudioBuffer pink_noise(std::size_t length, int sample_rate, std::mt19937_64& rng) {
    if (length == 0) return AudioBuffer{{}, sample_rate};
    const std::size_t n = next_pow2(length);
    AudioBuffer white = white_noise(n, sample_rate, rng);
    detail::RealFft fft(n);
    std::vector<std::complex<double>> spectrum(n / 2 + 1);
    fft.forward(white.samples, spectrum);
    // Power falls as 1/f: amplitude scales by 1/sqrt(k); DC removed.
    spectrum[0] = 0.0;
    for (std::size_t k = 1; k < spectrum.size(); ++k) spectrum[k] /= std::sqrt(static_cast<double>(k));
    std::vector<double> shaped(n);
    fft.inverse(spectrum, shaped);
    shaped.resize(length);
    const double r = rms(shaped);
    if (r > 0.0) {
        for (double& v : shaped) v /= r;
    }
    return AudioBuffer{std::move(shaped), sample_rate};
}

AudioBuffer add_noise_at_snr(const AudioBuffer& clean, const AudioBuffer& noise, double snr_db, std::mt19937_64& rng) {
    if (!std::isfinite(snr_db)) throw std::invalid_argument("add_noise_at_snr: snr_db must be finite");
    if (clean.sample_rate != noise.sample_rate) {
        throw std::invalid_argument("add_noise_at_snr: clean at " + std::to_string(clean.sample_rate) +
                                    " Hz, noise at " + std::to_string(noise.sample_rate) + " Hz");
    }
    const double clean_energy = energy(clean.samples);
    if (!(clean_energy > 0.0)) throw std::invalid_argument("add_noise_at_snr: clean signal has zero energy");
    if (noise.samples.empty() || !(energy(noise.samples) > 0.0)) {
        throw std::invalid_argument("add_noise_at_snr: noise has zero energy");
    }
    const std::size_t len = clean.size();
    const std::size_t n = noise.size();
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    const std::size_t offset = pick(rng);
    std::vector<double> segment(len);
    for (std::size_t i = 0; i < len; ++i) segment[i] = noise.samples[(offset + i) % n];
    const double noise_energy = energy(segment);
    if (!(noise_energy > 0.0)) throw std::invalid_argument("add_noise_at_snr: selected noise segment is silent");
    const double gain = std::sqrt(clean_energy / (noise_energy * std::pow(10.0, snr_db / 10.0)));
    AudioBuffer out = clean;
    for (std::size_t i = 0; i < len; ++i) out.samples[i] += gain * segment[i];
    return out;
}

AudioBuffer synth_rir(double rt60_s, int sample_rate, std::mt19937_64& rng) {
    if (!(rt60_s >= 0.0) || !std::isfinite(rt60_s)) throw std::invalid_argument("synth_rir: rt60 must be >= 0");
    if (sample_rate <= 0) throw std::invalid_argument("synth_rir: sample rate must be positive");
    AudioBuffer rir;
    rir.sample_rate = sample_rate;
    const double decay_samples = rt60_s * sample_rate;
    if (decay_samples < 1.0) {
        rir.samples = {1.0};
        return rir;
    }
    const auto length = static_cast<std::size_t>(std::ceil(kRirLengthFactor * decay_samples));
    // Energy envelope exp(-2 a n) reaches -60 dB at n = rt60 * sr.
    const double a = 3.0 * std::log(10.0) / decay_samples;
    const double gain = std::sqrt(2.0 * a * kTailEnergy);
    std::normal_distribution<double> normal(0.0, 1.0);
    rir.samples.assign(length, 0.0);
    rir.samples[0] = 1.0;
    for (std::size_t i = 1; i < length; ++i) {
        rir.samples[i] = gain * normal(rng) * std::exp(-a * static_cast<double>(i));
    }
    return rir;
}

AudioBuffer convolve_truncated(const AudioBuffer& signal, const AudioBuffer& kernel) {
    if (signal.sample_rate != kernel.sample_rate) {
        throw std::invalid_argument("convolve: signal at " + std::to_string(signal.sample_rate) + " Hz, kernel at " +
                                    std::to_string(kernel.sample_rate) + " Hz");
    }
    const std::size_t len = signal.size();
    AudioBuffer out{std::vector<double>(len, 0.0), signal.sample_rate};
    if (len == 0 || kernel.samples.empty()) return out;

    std::vector<std::size_t> taps;
    for (std::size_t k = 0; k < kernel.size(); ++k) {
        if (kernel.samples[k] != 0.0) taps.push_back(k);
    }
    if (taps.size() <= kSparseKernelLimit) {
        for (std::size_t k : taps) {
            const double w = kernel.samples[k];
            for (std::size_t i = k; i < len; ++i) out.samples[i] += w * signal.samples[i - k];
        }
        return out;
    }

    const std::size_t klen = std::min(kernel.size(), len);
    const std::size_t n = next_pow2(len + klen - 1);
    detail::RealFft fft(n);
    std::vector<double> a(n, 0.0), b(n, 0.0), c(n);
    std::copy(signal.samples.begin(), signal.samples.end(), a.begin());
    std::copy_n(kernel.samples.begin(), klen, b.begin());
    std::vector<std::complex<double>> fa(n / 2 + 1), fb(n / 2 + 1);
    fft.forward(a, fa);
    fft.forward(b, fb);
    for (std::size_t k = 0; k < fa.size(); ++k) fa[k] *= fb[k];
    fft.inverse(fa, c);
    std::copy_n(c.begin(), len, out.samples.begin());
    return out;
}

AudioBuffer apply_reverb(const AudioBuffer& clean, const AudioBuffer& rir) {
    AudioBuffer out = convolve_truncated(clean, rir);
    const double target = peak(clean.samples);
    const double current = peak(out.samples);
    if (current > 0.0) {
        const double g = target / current;
        for (double& v : out.samples) v *= g;
    }
    return out;
}

MelSpectrogram spectral_smear(const MelSpectrogram& mel, std::size_t smear_frames) {
    if (smear_frames == 0 || mel.values.size() == 0) return mel;
    const std::size_t frames = mel.frames();
    const std::size_t mels = mel.n_mels();
    const auto count = static_cast<std::int64_t>(frames);
    auto reflect = [count](std::int64_t i) {
        if (count == 1) return std::int64_t{0};
        const std::int64_t period = 2 * (count - 1);
        i %= period;
        if (i < 0) i += period;
        return i < count ? i : period - i;
    };
    const auto s = static_cast<std::int64_t>(smear_frames);
    const double width = static_cast<double>(2 * s + 1);
    MelSpectrogram out = mel;
    for (std::int64_t f = 0; f < count; ++f) {
        for (std::size_t m = 0; m < mels; ++m) {
            double acc = 0.0;
            for (std::int64_t j = f - s; j <= f + s; ++j) {
                acc += mel.values[static_cast<std::size_t>(reflect(j)) * mels + m];
            }
            out.values[static_cast<std::size_t>(f) * mels + m] = acc / width;
        }
    }
    return out;
}

AudioBuffer degrade(const AudioBuffer& clean, const DegradationSpec& spec, const std::vector<AudioBuffer>& noise_bank) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    AudioBuffer reverberant = clean;
    if (spec.rt60_s > 0.0) reverberant = apply_reverb(clean, synth_rir(spec.rt60_s, clean.sample_rate, rng));
    AudioBuffer noise;
    if (noise_bank.empty()) {
        noise = spec.noise == NoiseColor::pink ? pink_noise(clean.size(), clean.sample_rate, rng)
                                               : white_noise(clean.size(), clean.sample_rate, rng);
    } else {
        std::uniform_int_distribution<std::size_t> pick(0, noise_bank.size() - 1);
        noise = resample(noise_bank[pick(rng)], clean.sample_rate);
    }
    return add_noise_at_snr(reverberant, noise, spec.snr_db, rng);
}

PairManifest build_dataset(const DatasetOptions& options) {
    namespace fs = std::filesystem;
    if (options.specs.empty()) throw std::invalid_argument("build_dataset: no degradation specs");
    for (const auto& s : options.specs) s.validate();
    auto list_wavs = [](const fs::path& dir) {
        std::vector<fs::path> files;
        if (!fs::is_directory(dir)) throw IoError("build_dataset: '" + dir.string() + "' is not a directory");
        for (const auto& entry : fs::directory_iterator(dir)) {
            auto ext = entry.path().extension().string();
            std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
            if (entry.is_regular_file() && ext == ".wav") files.push_back(entry.path());
        }
        std::sort(files.begin(), files.end());
        return files;
    };
    const std::vector<fs::path> clean_files = list_wavs(options.clean_dir);
    if (clean_files.empty()) throw IoError("build_dataset: no .wav files in " + options.clean_dir.string());
    std::vector<AudioBuffer> noise_bank;
    if (!options.noise_dir.empty()) {
        for (const auto& p : list_wavs(options.noise_dir)) noise_bank.push_back(load_wav(p));
        if (noise_bank.empty()) throw IoError("build_dataset: no .wav files in " + options.noise_dir.string());
    }

    std::error_code ec;
    fs::create_directories(options.out_dir / "clean", ec);
    fs::create_directories(options.out_dir / "distorted", ec);
    if (ec) throw IoError("build_dataset: cannot create " + options.out_dir.string() + ": " + ec.message());

    PairManifest manifest;
    for (std::size_t i = 0; i < clean_files.size(); ++i) {
        const AudioBuffer clean = resample(load_wav(clean_files[i]), kSampleRate);
        for (std::size_t j = 0; j < options.specs.size(); ++j) {
            PairRecord r;
            r.spec = options.specs[j];
            r.spec.seed = derived_rng(options.seed ^ options.specs[j].seed, 3, i * options.specs.size() + j)();
            r.id = clean_files[i].stem().string() + "_d" + std::to_string(j);
            AudioBuffer reference = clean;
            AudioBuffer distorted = degrade(clean, r.spec, noise_bank);
            const double p = std::max(peak(distorted.samples), peak(reference.samples));
            if (p > kHeadroomPeak) {
                const double g = kHeadroomPeak / p;
                for (double& v : distorted.samples) v *= g;
                for (double& v : reference.samples) v *= g;
            }
            r.clean_path = options.out_dir / "clean" / (r.id + ".wav");
            r.distorted_path = options.out_dir / "distorted" / (r.id + ".wav");
            save_wav(reference, r.clean_path);
            save_wav(distorted, r.distorted_path);
            manifest.records.push_back(std::move(r));
        }
    }
    std::sort(manifest.records.begin(), manifest.records.end(),
              [](const PairRecord& a, const PairRecord& b) { return a.id < b.id; });
    manifest.save(options.out_dir / "manifest.txt");
    return manifest;
}

double measured_snr_db(const AudioBuffer& clean, const AudioBuffer& distorted) {
    if (clean.size() != distorted.size()) throw std::invalid_argument("measured_snr_db: length mismatch");
    double signal = 0.0;
    double residual = 0.0;
    for (std::size_t i = 0; i < clean.size(); ++i) {
        signal += clean.samples[i] * clean.samples[i];
        const double d = distorted.samples[i] - clean.samples[i];
        residual += d * d;
    }
    if (residual == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(signal / residual);
}

}  // namespace melrefine
