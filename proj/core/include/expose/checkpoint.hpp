#pragma once

#include <string>

#include "expose/adapter.hpp"
#include "expose/model.hpp"

namespace expose {

/// Single-file container: "EXPCKPT1", u64 little-endian manifest length, JSON
/// manifest, then little-endian float32 row-major tensor blobs.
inline constexpr int kCheckpointFormatVersion = 1;

struct CheckpointInfo {
  std::string kind;  // "base" or "adapter"
  int format_version = kCheckpointFormatVersion;
  ModelConfig model;
  std::string model_digest;
  std::string experiment;  // config snapshot (JSON text) of the generating run, may be empty
  std::int64_t parameters = 0;
};

void save_base_checkpoint(const std::string& path, const BaseModelParams& params, const ModelConfig& model,
                          const std::string& experiment_json = "");
void save_adapter_checkpoint(const std::string& path, const AdapterParams& adapter, const ModelConfig& model,
                             const std::string& experiment_json = "");

/// Reads only the manifest.
CheckpointInfo read_checkpoint_info(const std::string& path);

/// Loads and verifies every tensor digest. When `expected` is given its model
/// section must match the stored one (CompatibilityError otherwise).
BaseModelParams load_base_checkpoint(const std::string& path, const ModelConfig* expected = nullptr,
                                     CheckpointInfo* info = nullptr);
AdapterParams load_adapter_checkpoint(const std::string& path, const ModelConfig* expected = nullptr,
                                      CheckpointInfo* info = nullptr);

}  // namespace expose
