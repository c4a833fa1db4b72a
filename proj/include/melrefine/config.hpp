#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "melrefine/mel.hpp"
#include "melrefine/refine.hpp"
#include "melrefine/simulate.hpp"
#include "melrefine/stft.hpp"
#include "melrefine/train.hpp"

namespace melrefine {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct DspConfig {
    int sample_rate = kSampleRate;
    StftConfig stft;
    std::size_t n_mels = 128;
    double f_min = 0.0;
    double f_max = 12000.0;
    MelScale mel_scale = MelScale::slaney;
    double log_floor = kLogFloor;
    GriffinLimOptions griffin_lim;
    PhaseInit phase_init = PhaseInit::input;
    double warm_start_momentum = 0.0;

    MelFilterbank filterbank() const;
    VocoderSettings vocoder() const;
};

struct SimulateConfig {
    std::filesystem::path clean_dir;
    std::filesystem::path out_dir;
    std::filesystem::path noise_dir;
    std::uint64_t seed = 0;
    std::vector<DegradationSpec> degradations{DegradationSpec{}};
};

struct TrainIo {
    std::filesystem::path manifest;
    std::filesystem::path checkpoint;
    /// Continue from `checkpoint` when it exists.
    bool resume = false;
};

struct AppConfig {
    DspConfig dsp;
    TrainConfig train;  // also carries the flow, model and optimizer sections
    TrainIo train_io;
    SimulateConfig simulate;
    RefineOptions refine;
};

/// YAML mapping with optional sections dsp, flow, model, train, optim, refine and
/// simulate. Unknown sections or keys are errors naming the key. Relative paths
/// are resolved against `base_dir`.
AppConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {});
AppConfig load_config(const std::filesystem::path& path);

/// Annotated configuration with every key at its default value.
std::string default_config_text();

}  // namespace melrefine
