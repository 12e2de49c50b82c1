#pragma once

#include <filesystem>
#include <string>

#include "dvtk/config.hpp"
#include "dvtk/training.hpp"

DVTK_NAMESPACE_BEGIN

inline constexpr char kCheckpointMagic[4] = {'D', 'V', 'C', 'K'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct CheckpointHeader {
  RunConfig config;
  std::string config_hash;
  int step = 0;
  std::uint64_t seed = 0;
};

/// Serialises model and discriminator weights, both Adam states, the run
/// configuration and the step count. The file is replaced atomically.
void save_checkpoint(const std::filesystem::path& path, const RunConfig& config, Trainer& trainer, int step);

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path);

/// Rebuilds the tokenizer stored in a checkpoint (evaluation mode).
Tokenizer load_tokenizer(const std::filesystem::path& path, CheckpointHeader* header = nullptr);

/// Restores model, discriminator and optimiser state into `trainer`, whose
/// model must have been built from the same configuration. Returns the step.
int restore_trainer(const std::filesystem::path& path, Trainer& trainer);

/// Most recent ckpt_*.dvck in `dir`, or an empty path.
std::filesystem::path latest_checkpoint(const std::filesystem::path& dir);

DVTK_NAMESPACE_END
