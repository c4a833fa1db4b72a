#pragma once

// File-level workflows behind the command-line tool.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "melrefine/checkpoint.hpp"
#include "melrefine/config.hpp"
#include "melrefine/eval.hpp"
#include "melrefine/refine.hpp"

namespace melrefine {

struct MelPair {
    std::string id;
    MelSpectrogram clean;
    MelSpectrogram distorted;  // smeared by the record's smear_frames
};

/// Log-mels of every record; the pair is cut to the shorter frame count.
std::vector<MelPair> load_mel_pairs(const PairManifest& manifest, const DspConfig& dsp);

/// Normalization fitted over clean and distorted mels together.
MelNormalization fit_normalization(const std::vector<MelPair>& pairs);

std::vector<TrainingPair> make_training_pairs(const std::vector<MelPair>& pairs, const MelNormalization& norm);

Refiner make_refiner(const TrainedModel& model, const DspConfig& dsp);

PairManifest run_simulate(const AppConfig& config);

using StepLogger = std::function<void(std::uint64_t step, double loss)>;

/// Trains on train_io.manifest and writes train_io.checkpoint every checkpoint_interval
/// steps and at the end. With train_io.resume set, an existing checkpoint is continued.
Checkpoint run_train(const AppConfig& config, const StepLogger& log = {});

AudioBuffer run_refine(const std::filesystem::path& input, const std::filesystem::path& checkpoint,
                       const std::filesystem::path& output, const AppConfig& config);

/// Writes the evaluation report; `checkpoint` may be empty when every record has a refined_path.
std::vector<EvalRecord> run_eval(const std::filesystem::path& manifest, const std::filesystem::path& checkpoint,
                                 const std::filesystem::path& report, const AppConfig& config);

/// Renders a WAV (via its log-mel) or a CSV mel matrix (one frame per row) to PNG.
void run_plot(const std::filesystem::path& input, const std::filesystem::path& output, const DspConfig& dsp);

MelSpectrogram read_mel_csv(const std::filesystem::path& path);
void write_mel_csv(const MelSpectrogram& mel, const std::filesystem::path& path);

}  // namespace melrefine
