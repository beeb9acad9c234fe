#pragma once

// Checkpoint directory layout:
//   manifest.json  format "sni-checkpoint", version, checkpoint_id,
//                  generator / discriminator configs, train run record,
//                  optimizer counters, and a tensor index
//                  [{name, shape, offset, count, sha256}].
//   tensors.bin    the tensors back to back as little-endian float32;
//                  offset and count are in floats.
// Loading validates the whole directory before anything is returned.

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "sni/training.hpp"

namespace sni {

inline constexpr int kCheckpointVersion = 1;

/// Writes into `dir` (created; replaced atomically when it exists).
/// Returns the checkpoint id.
std::string save_checkpoint(const std::filesystem::path& dir, const TrainState& state,
                            const nlohmann::json& extra = nlohmann::json::object());

/// Throws CheckpointError on a missing/corrupt/mismatched-version directory
/// and StructureError when `expected` is given and differs from the stored
/// noise structure.
TrainState load_checkpoint(const std::filesystem::path& dir,
                           const NoiseStructure* expected = nullptr);

struct GeneratorSnapshot {
  GeneratorState generator;  // EMA weights when the checkpoint has them
  std::string id;
  nlohmann::json manifest;
};

GeneratorSnapshot load_generator(const std::filesystem::path& dir,
                                 const NoiseStructure* expected = nullptr);

/// Follows `<dir>/checkpoints/latest` when `dir` is a training output directory.
std::filesystem::path resolve_checkpoint_dir(const std::filesystem::path& dir);

}  // namespace sni
