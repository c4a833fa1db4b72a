#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "melrefine/config.hpp"

using namespace melrefine;
namespace fs = std::filesystem;

TEST_CASE("config: empty text yields defaults") {
    const AppConfig c = parse_config("");
    CHECK(c.dsp.sample_rate == 24000);
    CHECK(c.dsp.stft.n_fft == 1024);
    CHECK(c.dsp.stft.hop == 256);
    CHECK(c.dsp.n_mels == 128);
    CHECK(c.train.flow.n_steps == 64);
    CHECK(c.train.flow.sigma_min == 0.0);
    CHECK(c.train.model.n_blocks == 2);
    CHECK(c.train.model.model_dim == 128);
    CHECK(c.train.optim == AdamWConfig{});
    CHECK(c.refine.n_steps == 64);
    CHECK(c.simulate.degradations.size() == 1);
}

TEST_CASE("config: the annotated default file parses to the defaults") {
    const AppConfig d = parse_config(default_config_text(), "/cfg");
    const AppConfig e = parse_config("");
    CHECK(d.dsp.griffin_lim.iterations == e.dsp.griffin_lim.iterations);
    CHECK(d.dsp.griffin_lim.momentum == e.dsp.griffin_lim.momentum);
    CHECK(d.dsp.phase_init == e.dsp.phase_init);
    CHECK(d.dsp.log_floor == e.dsp.log_floor);
    CHECK(d.train.model == e.train.model);
    CHECK(d.train.optim == e.train.optim);
    CHECK(d.train.batch_size == e.train.batch_size);
    CHECK(d.train.total_steps == e.train.total_steps);
    CHECK(d.refine.max_frames == e.refine.max_frames);
    CHECK(d.simulate.degradations.front() == e.simulate.degradations.front());
    CHECK(d.train_io.manifest == fs::path("/cfg/data/manifest.txt"));
    CHECK(d.simulate.noise_dir.empty());
}

TEST_CASE("config: overrides, derived fields and relative paths") {
    const fs::path dir = fs::temp_directory_path() / "melrefine_test_config";
    fs::create_directories(dir);
    {
        std::ofstream out(dir / "run.yaml");
        out << "dsp:\n  n_mels: 40\n  phase_init: zero\n  mel_scale: htk\n"
               "flow:\n  n_steps: 8\n"
               "model:\n  head_channels: 16\n"
               "optim:\n  lr: 2.0e-3\n"
               "train:\n  checkpoint: ck/model.ckpt\n  manifest: /abs/m.txt\n  resume: true\n"
               "simulate:\n  degradations:\n    - {snr_db: 0, rt60_s: 0.4, noise: white, seed: 3}\n"
               "    - {snr_db: 10, smear_frames: 2}\n";
    }
    const AppConfig c = load_config(dir / "run.yaml");
    CHECK(c.dsp.n_mels == 40);
    CHECK(c.train.model.n_mels == 40);
    CHECK(c.dsp.phase_init == PhaseInit::zero);
    CHECK(c.dsp.mel_scale == MelScale::htk);
    CHECK(c.refine.n_steps == 8);
    CHECK(c.train.model.head_channels == 16);
    CHECK(c.train.optim.lr == 2e-3);
    CHECK(c.train_io.checkpoint == dir / "ck/model.ckpt");
    CHECK(c.train_io.manifest == fs::path("/abs/m.txt"));
    CHECK(c.train_io.resume);
    REQUIRE(c.simulate.degradations.size() == 2);
    CHECK(c.simulate.degradations[0] == DegradationSpec{0.0, 0.4, 0, 3, NoiseColor::white});
    CHECK(c.simulate.degradations[1].smear_frames == 2);
    CHECK(c.dsp.filterbank().n_mels() == 40);
}

TEST_CASE("config: errors name the offending key") {
    auto message = [](const std::string& text) {
        try {
            parse_config(text);
        } catch (const ConfigError& e) {
            return std::string(e.what());
        }
        return std::string("no error");
    };
    CHECK(message("model:\n  n_layers: 3\n").find("model.n_layers") != std::string::npos);
    CHECK(message("vocoder:\n  x: 1\n").find("vocoder") != std::string::npos);
    CHECK(message("optim:\n  lr: fast\n").find("optim.lr") != std::string::npos);
    CHECK(message("simulate:\n  degradations:\n    - {snr: 3}\n").find("degradations[0].snr") != std::string::npos);
    CHECK(message("dsp:\n  mel_scale: bark\n") != "no error");
    CHECK(message("dsp:\n  griffin_lim_momentum: 1.0\n") != "no error");
    CHECK(message("model:\n  model_dim: 30\n  n_heads: 4\n") != "no error");
    CHECK(message("train:\n  batch_size: 0\n") != "no error");
    CHECK(message("[1, 2]") != "no error");
    CHECK(message("dsp: [") != "no error");
    CHECK_THROWS_AS(load_config("/nonexistent/melrefine.yaml"), ConfigError);
}
