#pragma once

#include <cstdint>
#include <string>

#include "bhpeft/model.hpp"

namespace bhpeft {

/// Run information carried alongside the weights. On re-save after a load
/// the original values flow through unchanged, so save -> load -> save is
/// byte-identical.
struct CheckpointMeta {
  std::uint64_t seed = 0;
  std::size_t round_index = 1;
  std::string config_digest;
  std::string command_line;
};

/// File layout: 8-byte magic "BHPEFT01", little-endian u64 manifest length,
/// JSON manifest (config, array names and shapes, seed, round, provenance),
/// then each array's values as little-endian 64-bit floats in manifest order.
void checkpoint_save(const std::string& path, const Model& model, const CheckpointMeta& meta);

struct LoadedCheckpoint {
  ModelConfig config;
  CheckpointMeta meta;
  Model model;
};

LoadedCheckpoint checkpoint_load(const std::string& path);

}  // namespace bhpeft
