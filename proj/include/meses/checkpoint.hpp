#pragma once

// Parameter checkpoints.
//
// Layout (all integers little-endian):
//   "MESESCKP" | u32 version | u64 manifest bytes | manifest JSON
//   u64 tensor count, then per tensor:
//   u32 name bytes | name | u32 rank | u64 dims[rank] | f64 values[numel]
// Tensors are written in registry order, so save -> load -> save is byte-identical.

#include <cstdint>
#include <stdexcept>
#include <string>

#include "json.hpp"
#include "meses/params.hpp"

namespace meses {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void save_checkpoint(const std::string& path, const ParamRegistry& params, const nlohmann::json& manifest);

/// Reads a checkpoint. Tensors whose names already exist in `params` must
/// match in shape and are overwritten; unknown names are added when
/// `add_missing` is set and rejected otherwise. Returns the manifest.
nlohmann::json load_checkpoint(const std::string& path, ParamRegistry& params, bool add_missing = false);

/// Manifest only, without touching any registry.
nlohmann::json read_checkpoint_manifest(const std::string& path);

}  // namespace meses
