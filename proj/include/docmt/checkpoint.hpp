#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>

#include <json.hpp>

#include "docmt/model.hpp"
#include "docmt/optim.hpp"

namespace docmt {

inline constexpr int kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  ModelParams params;
  std::optional<AdamState> adam;
  /// Free-form metadata (training step, dev BLEU, data paths).
  nlohmann::json meta = nlohmann::json::object();
};

/// Writes <stem>.json (manifest) and <stem>.bin (little-endian float32 blob
/// in manifest order). Returns the manifest path.
std::filesystem::path save_checkpoint(const std::filesystem::path& stem, const ModelParams& params,
                                      const AdamState* adam = nullptr,
                                      const nlohmann::json& meta = nlohmann::json::object());

/// Accepts either the stem or the manifest path.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace docmt
