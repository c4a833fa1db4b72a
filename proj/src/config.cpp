#include "melrefine/config.hpp"

#include <yaml-cpp/yaml.h>

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace melrefine {
namespace {

using Setter = std::function<void(const YAML::Node&)>;

template <typename T>
Setter scalar(T& field) {
    return [&field](const YAML::Node& n) { field = n.as<T>(); };
}

Setter path_field(std::filesystem::path& field, const std::filesystem::path& base) {
    return [&field, base](const YAML::Node& n) {
        std::filesystem::path p(n.as<std::string>());
        field = p.is_relative() && !base.empty() && !p.empty() ? base / p : p;
    };
}

void apply_section(const YAML::Node& node, const std::string& section, const std::map<std::string, Setter>& keys) {
    if (!node.IsMap()) throw ConfigError("config section '" + section + "' must be a mapping");
    for (const auto& kv : node) {
        const std::string key = kv.first.as<std::string>();
        const auto it = keys.find(key);
        if (it == keys.end()) throw ConfigError("unknown config key '" + section + "." + key + "'");
        try {
            it->second(kv.second);
        } catch (const YAML::Exception& e) {
            throw ConfigError("bad value for config key '" + section + "." + key + "': " + e.msg);
        } catch (const std::invalid_argument& e) {
            throw ConfigError("bad value for config key '" + section + "." + key + "': " + e.what());
        }
    }
}

DegradationSpec parse_degradation(const YAML::Node& node, std::size_t index) {
    DegradationSpec spec;
    std::string noise = to_string(spec.noise);
    const std::string name = "simulate.degradations[" + std::to_string(index) + "]";
    apply_section(node, name,
                  {{"snr_db", scalar(spec.snr_db)},
                   {"rt60_s", scalar(spec.rt60_s)},
                   {"smear_frames", scalar(spec.smear_frames)},
                   {"seed", scalar(spec.seed)},
                   {"noise", scalar(noise)}});
    try {
        spec.noise = parse_noise_color(noise);
        spec.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(name + ": " + e.what());
    }
    return spec;
}

}  // namespace

MelFilterbank DspConfig::filterbank() const {
    return build_mel_filterbank(n_mels, stft.n_fft, sample_rate, f_min, f_max, mel_scale);
}

VocoderSettings DspConfig::vocoder() const {
    return VocoderSettings{griffin_lim, phase_init, warm_start_momentum, log_floor};
}

AppConfig parse_config(const std::string& text, const std::filesystem::path& base_dir) {
    YAML::Node root;
    try {
        root = YAML::Load(text);
    } catch (const YAML::Exception& e) {
        throw ConfigError("config is not valid YAML: " + e.msg);
    }
    AppConfig c;
    if (!root || root.IsNull()) return c;
    if (!root.IsMap()) throw ConfigError("config must be a mapping of sections");

    std::string mel_scale = to_string(c.dsp.mel_scale);
    std::string phase_init = to_string(c.dsp.phase_init);
    EstimatorConfig& m = c.train.model;
    AdamWConfig& o = c.train.optim;
    const std::map<std::string, std::map<std::string, Setter>> sections{
        {"dsp",
         {{"sample_rate", scalar(c.dsp.sample_rate)},
          {"n_fft", scalar(c.dsp.stft.n_fft)},
          {"hop", scalar(c.dsp.stft.hop)},
          {"n_mels", scalar(c.dsp.n_mels)},
          {"f_min", scalar(c.dsp.f_min)},
          {"f_max", scalar(c.dsp.f_max)},
          {"mel_scale", scalar(mel_scale)},
          {"log_floor", scalar(c.dsp.log_floor)},
          {"griffin_lim_iterations", scalar(c.dsp.griffin_lim.iterations)},
          {"griffin_lim_momentum", scalar(c.dsp.griffin_lim.momentum)},
          {"phase_init", scalar(phase_init)},
          {"warm_start_momentum", scalar(c.dsp.warm_start_momentum)}}},
        {"flow", {{"sigma_min", scalar(c.train.flow.sigma_min)}, {"n_steps", scalar(c.train.flow.n_steps)}}},
        {"model",
         {{"n_blocks", scalar(m.n_blocks)},
          {"model_dim", scalar(m.model_dim)},
          {"n_heads", scalar(m.n_heads)},
          {"conv_kernel", scalar(m.conv_kernel)},
          {"time_embed_dim", scalar(m.time_embed_dim)},
          {"head_channels", scalar(m.head_channels)},
          {"head_kernel", scalar(m.head_kernel)},
          {"ff_mult", scalar(m.ff_mult)},
          {"leaky_slope", scalar(m.leaky_slope)},
          {"rope_base", scalar(m.rope_base)},
          {"time_embed_max_freq", scalar(m.time_embed_max_freq)}}},
        {"optim",
         {{"lr", scalar(o.lr)},
          {"beta1", scalar(o.beta1)},
          {"beta2", scalar(o.beta2)},
          {"weight_decay", scalar(o.weight_decay)},
          {"eps", scalar(o.eps)}}},
        {"train",
         {{"batch_size", scalar(c.train.batch_size)},
          {"total_steps", scalar(c.train.total_steps)},
          {"seed", scalar(c.train.seed)},
          {"checkpoint_interval", scalar(c.train.checkpoint_interval)},
          {"log_interval", scalar(c.train.log_interval)},
          {"manifest", path_field(c.train_io.manifest, base_dir)},
          {"checkpoint", path_field(c.train_io.checkpoint, base_dir)},
          {"resume", scalar(c.train_io.resume)}}},
        {"refine",
         {{"seed", scalar(c.refine.seed)},
          {"max_frames", scalar(c.refine.max_frames)}}},
        {"simulate",
         {{"clean_dir", path_field(c.simulate.clean_dir, base_dir)},
          {"out_dir", path_field(c.simulate.out_dir, base_dir)},
          {"noise_dir", path_field(c.simulate.noise_dir, base_dir)},
          {"seed", scalar(c.simulate.seed)},
          {"degradations",
           [&c](const YAML::Node& n) {
               if (!n.IsSequence() || n.size() == 0) {
                   throw std::invalid_argument("expected a non-empty list of degradation mappings");
               }
               c.simulate.degradations.clear();
               for (std::size_t i = 0; i < n.size(); ++i) c.simulate.degradations.push_back(parse_degradation(n[i], i));
           }}}},
    };

    for (const auto& kv : root) {
        const std::string name = kv.first.as<std::string>();
        const auto it = sections.find(name);
        if (it == sections.end()) throw ConfigError("unknown config section '" + name + "'");
        if (kv.second.IsNull()) continue;
        apply_section(kv.second, name, it->second);
    }

    try {
        c.dsp.mel_scale = parse_mel_scale(mel_scale);
        c.dsp.phase_init = parse_phase_init(phase_init);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("dsp: ") + e.what());
    }
    m.n_mels = c.dsp.n_mels;
    c.refine.n_steps = c.train.flow.n_steps;
    try {
        c.dsp.stft.validate();
        if (c.dsp.sample_rate <= 0) throw std::invalid_argument("dsp.sample_rate must be positive");
        if (!(c.dsp.log_floor > 0.0)) throw std::invalid_argument("dsp.log_floor must be positive");
        for (double mom : {c.dsp.griffin_lim.momentum, c.dsp.warm_start_momentum}) {
            if (!(mom >= 0.0 && mom < 1.0)) throw std::invalid_argument("Griffin-Lim momentum must lie in [0, 1)");
        }
        c.dsp.filterbank();
        c.train.validate();
        c.refine.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("invalid config: ") + e.what());
    }
    return c;
}

AppConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config " + path.string());
    std::ostringstream text;
    text << in.rdbuf();
    return parse_config(text.str(), path.parent_path());
}

std::string default_config_text() {
    return R"(# melrefine configuration. Every key is optional; values shown are the defaults.
# Relative paths are resolved against the directory holding this file.

dsp:
  sample_rate: 24000        # model sample rate; inputs are resampled to it
  n_fft: 1024               # Hann window and FFT length
  hop: 256
  n_mels: 128
  f_min: 0.0
  f_max: 12000.0
  mel_scale: slaney         # slaney | htk
  log_floor: 1.0e-5         # log(max(mel, floor))
  griffin_lim_iterations: 32
  griffin_lim_momentum: 0.99
  phase_init: input         # refine: start Griffin-Lim from the distorted input's phase (input) or from zero
  warm_start_momentum: 0.0  # momentum replacing griffin_lim_momentum when phase_init is input

flow:
  sigma_min: 0.0
  n_steps: 64               # Euler steps at inference

model:
  n_blocks: 2
  model_dim: 128
  n_heads: 4
  conv_kernel: 7
  time_embed_dim: 64
  head_channels: 32
  head_kernel: 3
  ff_mult: 4
  leaky_slope: 0.01
  rope_base: 10000.0
  time_embed_max_freq: 1000.0

optim:
  lr: 1.0e-4
  beta1: 0.9
  beta2: 0.95
  weight_decay: 0.01
  eps: 1.0e-8

train:
  batch_size: 4
  total_steps: 2000
  seed: 0
  checkpoint_interval: 500
  log_interval: 50
  manifest: data/manifest.txt
  checkpoint: model.ckpt
  resume: false

refine:
  seed: 0
  max_frames: 4096          # longer inputs are rejected

simulate:
  clean_dir: clean
  out_dir: data
  noise_dir: ""             # optional directory of noise WAVs replacing synthetic noise
  seed: 0
  degradations:
    - snr_db: 5.0
      rt60_s: 0.0
      smear_frames: 0
      seed: 0
      noise: pink           # pink | white
)";
}

}  // namespace melrefine
