#pragma once

#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "dvtk/data.hpp"
#include "dvtk/training.hpp"

DVTK_NAMESPACE_BEGIN

/// Everything a training run needs, as read from a YAML document.
struct RunConfig {
  TokenizerConfig model;
  TrainConfig train;
  LossWeights loss_weights;
  DiscriminatorConfig discriminator;
  DataSpec data;
  std::filesystem::path output_dir = "runs/default";

  /// Cross-field checks (component validation plus clip/compression fit).
  void validate() const;
  bool operator==(const RunConfig&) const = default;
};

/// Parses a RunConfig YAML document. Unknown keys, missing required fields
/// (model.kernels, model.hidden_dims, model.latent_channels,
/// model.quantizer) and bad values raise configuration errors prefixed with
/// "source:line:column".
RunConfig parse_run_config(const std::string& text, const std::string& source = "<config>");
RunConfig load_run_config(const std::filesystem::path& path);

nlohmann::json to_json(const QuantizerSpec& spec);
QuantizerSpec quantizer_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TokenizerConfig& config);
TokenizerConfig tokenizer_config_from_json(const nlohmann::json& j);

/// Canonical form: every field present, keys sorted. The output directory
/// is not part of it.
nlohmann::json to_json(const RunConfig& config);
RunConfig run_config_from_json(const nlohmann::json& j);

/// First 16 hex digits of SHA-256 over the canonical JSON text.
std::string config_hash(const RunConfig& config);
std::string sha256_hex(const std::string& bytes);

struct SweepCell {
  std::string name;
  RunConfig config;
};

struct SweepConfig {
  std::vector<SweepCell> cells;
  std::vector<std::uint64_t> seeds{0};
};

/// Sweep document: `base` (a RunConfig mapping), `seeds`, and `cells`, each
/// with a `name` and a `delta` mapping deep-merged over the base. Cells are
/// parsed independently; a broken cell is reported via `errors` instead of
/// aborting the whole document.
SweepConfig parse_sweep_config(const std::string& text, const std::string& source,
                               std::vector<std::pair<std::string, std::string>>* errors = nullptr);
SweepConfig load_sweep_config(const std::filesystem::path& path,
                              std::vector<std::pair<std::string, std::string>>* errors = nullptr);

DVTK_NAMESPACE_END
