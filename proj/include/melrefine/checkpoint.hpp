#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>

#include "melrefine/train.hpp"

namespace melrefine {

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// The file was written for a different estimator architecture.
class ConfigMismatch : public CheckpointError {
public:
    using CheckpointError::CheckpointError;
};

struct Checkpoint {
    TrainedModel model;
    OptimizerState optimizer;
    std::uint64_t step = 0;

    friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

/// Little-endian binary container: magic, version, config fingerprint and fields,
/// step, normalization, parameter table (name, shape, float64 values), optimizer
/// moments and a trailing checksum.
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);

/// When `expected` is given, a checkpoint for any other architecture raises ConfigMismatch.
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           const std::optional<EstimatorConfig>& expected = std::nullopt);

}  // namespace melrefine
