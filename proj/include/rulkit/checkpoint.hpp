#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"
#include "rulkit/adam.hpp"

namespace rulkit {

// Bump when the on-disk layout changes; load rejects anything else.
inline constexpr int kCheckpointVersion = 1;

// A checkpoint is a flat map from parameter path ("f.conv3.weight") to
// shape + row-major values, plus free-form metadata (architecture
// fingerprint, init seed, training provenance).
struct Checkpoint {
  int version = kCheckpointVersion;
  nlohmann::json meta = nlohmann::json::object();
  ParamMap params;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace rulkit
