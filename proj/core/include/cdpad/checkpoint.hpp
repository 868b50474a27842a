#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cdpad/param.hpp"
#include "cdpad/tensor.hpp"

namespace cdpad {

/// Checkpoints are a pair of files: <stem>.json (versioned manifest with
/// parameter names, shapes, byte offsets, a config echo, seed and phase
/// provenance) and <stem>.bin (magic + version header followed by raw
/// little-endian float32 blocks at the recorded offsets).
struct CheckpointMeta {
  std::uint64_t seed = 0;
  std::string phase = "init";
  std::string config_echo_json = "{}";
};

struct CheckpointInfo {
  int format_version = 0;
  std::uint64_t seed = 0;
  std::string phase;
  std::string config_echo_json;
  std::int64_t learnable_total = 0;
  std::int64_t entry_count = 0;
};

using ConstComponents =
    std::vector<std::pair<std::string, const ParamSetT<float>*>>;
using MutComponents = std::vector<std::pair<std::string, ParamSetT<float>*>>;

void save_checkpoint(const std::string& stem, const ConstComponents& components,
                     const CheckpointMeta& meta);

/// Loads parameter values into already-built components by name. Unknown
/// manifest names, missing model parameters, shape mismatches, bad magic,
/// version mismatches and truncated blobs all raise structured errors.
CheckpointInfo load_checkpoint(const std::string& stem,
                               const MutComponents& components);

/// Manifest metadata only (no blob access).
CheckpointInfo peek_checkpoint(const std::string& stem);

}  // namespace cdpad
