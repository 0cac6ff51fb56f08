#pragma once

#include "fftrain/network.hpp"
#include "fftrain/optim.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace fftrain {

inline constexpr char kCheckpointMagic[8] = {'F', 'F', 'S', 'L', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Everything needed to resume or audit a run.
///
/// File layout (all integers and floats little-endian):
///   8 bytes   magic "FFSLCKPT"
///   u32       format version
///   u64       header length in bytes
///   ...       UTF-8 JSON header: architecture, class names, dtype, epoch,
///             tensor and optimizer tables, free-form `meta`
///   f64[]     tensors in header order, then for each optimizer every first
///             moment followed by every second moment
///
/// Tensor order: for each hidden layer k: hidden.k.{weights, bias, bn_gamma,
/// bn_beta, bn_running_mean, bn_running_var}; then head.weights, head.bias.
struct Checkpoint {
    Network net;
    std::vector<std::string> class_names;
    std::vector<AdamState> optimizers;
    int epoch = 0;
    nlohmann::json meta = nlohmann::json::object();
};

/// Writes to a temporary sibling file and renames it into place.
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
/// Throws CheckpointError on any inconsistency; nothing is returned on failure.
Checkpoint load_checkpoint(const std::filesystem::path& path);

} // namespace fftrain
