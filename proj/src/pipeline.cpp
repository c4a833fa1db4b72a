#include "melrefine/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace melrefine {
namespace {

MelSpectrogram first_frames(const MelSpectrogram& mel, std::size_t frames) {
    if (mel.frames() == frames) return mel;
    MelSpectrogram out;
    out.frame_rate = mel.frame_rate;
    out.values = Tensor(Shape{frames, mel.n_mels()});
    std::copy_n(mel.values.data(), frames * mel.n_mels(), out.values.data());
    return out;
}

std::string lowercase_extension(const std::filesystem::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext;
}

}  // namespace

std::vector<MelPair> load_mel_pairs(const PairManifest& manifest, const DspConfig& dsp) {
    const MelFilterbank fb = dsp.filterbank();
    std::vector<MelPair> pairs;
    for (const auto& r : manifest.records) {
        const AudioBuffer clean = resample(load_wav(r.clean_path), dsp.sample_rate);
        const AudioBuffer distorted = resample(load_wav(r.distorted_path), dsp.sample_rate);
        MelPair p;
        p.id = r.id;
        p.clean = audio_to_logmel(clean, fb, dsp.stft, dsp.log_floor);
        p.distorted = spectral_smear(audio_to_logmel(distorted, fb, dsp.stft, dsp.log_floor), r.spec.smear_frames);
        const std::size_t frames = std::min(p.clean.frames(), p.distorted.frames());
        p.clean = first_frames(p.clean, frames);
        p.distorted = first_frames(p.distorted, frames);
        pairs.push_back(std::move(p));
    }
    return pairs;
}

MelNormalization fit_normalization(const std::vector<MelPair>& pairs) {
    std::vector<const MelSpectrogram*> mels;
    for (const auto& p : pairs) {
        mels.push_back(&p.clean);
        mels.push_back(&p.distorted);
    }
    return MelNormalization::fit(mels);
}

std::vector<TrainingPair> make_training_pairs(const std::vector<MelPair>& pairs, const MelNormalization& norm) {
    std::vector<TrainingPair> out;
    for (const auto& p : pairs) out.push_back({norm.apply(p.clean.values), norm.apply(p.distorted.values)});
    return out;
}

Refiner make_refiner(const TrainedModel& model, const DspConfig& dsp) {
    return Refiner(model, dsp.filterbank(), dsp.stft, dsp.vocoder());
}

PairManifest run_simulate(const AppConfig& config) {
    DatasetOptions options;
    options.clean_dir = config.simulate.clean_dir;
    options.out_dir = config.simulate.out_dir;
    options.noise_dir = config.simulate.noise_dir;
    options.seed = config.simulate.seed;
    options.specs = config.simulate.degradations;
    return build_dataset(options);
}

Checkpoint run_train(const AppConfig& config, const StepLogger& log) {
    if (config.train_io.manifest.empty()) throw ConfigError("train.manifest is not set");
    if (config.train_io.checkpoint.empty()) throw ConfigError("train.checkpoint is not set");
    const PairManifest manifest = PairManifest::load(config.train_io.manifest);
    if (manifest.records.empty()) throw std::invalid_argument("training manifest has no records");
    const std::vector<MelPair> mels = load_mel_pairs(manifest, config.dsp);
    MelNormalization norm = fit_normalization(mels);

    std::optional<Checkpoint> resumed;
    if (config.train_io.resume && std::filesystem::exists(config.train_io.checkpoint)) {
        resumed = load_checkpoint(config.train_io.checkpoint, config.train.model);
        norm = resumed->model.norm;
    }
    Trainer trainer(config.train, make_training_pairs(mels, norm), norm);
    if (resumed) trainer.restore(resumed->model.params, resumed->optimizer, resumed->step);

    auto snapshot = [&trainer] { return Checkpoint{trainer.model(), trainer.optimizer(), trainer.steps_done()}; };
    const std::size_t interval = config.train.checkpoint_interval;
    trainer.run([&](std::uint64_t step, double loss) {
        if (log) log(step, loss);
        if (interval > 0 && step % interval == 0 && step < config.train.total_steps) {
            save_checkpoint(snapshot(), config.train_io.checkpoint);
        }
    });
    Checkpoint final = snapshot();
    save_checkpoint(final, config.train_io.checkpoint);
    return final;
}

AudioBuffer run_refine(const std::filesystem::path& input, const std::filesystem::path& checkpoint,
                       const std::filesystem::path& output, const AppConfig& config) {
    const Checkpoint ck = load_checkpoint(checkpoint);
    if (ck.model.config.n_mels != config.dsp.n_mels) {
        throw ConfigMismatch("checkpoint expects " + std::to_string(ck.model.config.n_mels) + " mel bins, config has " +
                             std::to_string(config.dsp.n_mels));
    }
    const Refiner refiner = make_refiner(ck.model, config.dsp);
    AudioBuffer refined = refiner.refine_wav(load_wav(input), config.refine);
    save_wav(refined, output);
    return refined;
}

std::vector<EvalRecord> run_eval(const std::filesystem::path& manifest_path, const std::filesystem::path& checkpoint,
                                 const std::filesystem::path& report, const AppConfig& config) {
    const PairManifest manifest = PairManifest::load(manifest_path);
    std::optional<Refiner> refiner;
    if (!checkpoint.empty()) refiner.emplace(make_refiner(load_checkpoint(checkpoint).model, config.dsp));
    const auto records =
        evaluate_manifest(manifest, refiner ? &*refiner : nullptr, config.refine, config.dsp.filterbank());
    std::ofstream out(report, std::ios::binary);
    if (!out) throw IoError("cannot write report " + report.string());
    out << format_report(records);
    if (!out) throw IoError("failed writing report " + report.string());
    return records;
}

void run_plot(const std::filesystem::path& input, const std::filesystem::path& output, const DspConfig& dsp) {
    const std::string ext = lowercase_extension(input);
    MelSpectrogram mel;
    if (ext == ".wav") {
        const AudioBuffer audio = resample(load_wav(input), dsp.sample_rate);
        mel = audio_to_logmel(audio, dsp.filterbank(), dsp.stft, dsp.log_floor);
    } else if (ext == ".csv") {
        mel = read_mel_csv(input);
    } else {
        throw std::invalid_argument("plot: expected a .wav or .csv input, got " + input.string());
    }
    render_spectrogram_image(mel, output);
}

MelSpectrogram read_mel_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<double> values;
    std::size_t width = 0;
    std::size_t rows = 0;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        std::istringstream ls(line);
        std::string cell;
        std::size_t count = 0;
        while (std::getline(ls, cell, ',')) {
            std::size_t used = 0;
            double v = 0.0;
            try {
                v = std::stod(cell, &used);
            } catch (const std::exception&) {
                throw FormatError(path.string() + " row " + std::to_string(rows + 1) + ": '" + cell +
                                  "' is not a number");
            }
            values.push_back(v);
            ++count;
        }
        if (rows == 0) width = count;
        if (count != width) {
            throw FormatError(path.string() + " row " + std::to_string(rows + 1) + " has " + std::to_string(count) +
                              " columns, expected " + std::to_string(width));
        }
        ++rows;
    }
    if (rows == 0 || width == 0) throw FormatError(path.string() + " holds no mel values");
    MelSpectrogram mel;
    mel.values = Tensor(Shape{rows, width}, std::move(values));
    return mel;
}

void write_mel_csv(const MelSpectrogram& mel, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out.precision(17);
    for (std::size_t f = 0; f < mel.frames(); ++f) {
        for (std::size_t m = 0; m < mel.n_mels(); ++m) {
            if (m) out << ',';
            out << mel.values[f * mel.n_mels() + m];
        }
        out << '\n';
    }
}

}  // namespace melrefine
