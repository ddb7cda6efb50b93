#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "bhpeft/model.hpp"
#include "bhpeft/training.hpp"

namespace bhpeft {

/// Everything a run needs: model shape, training hyperparameters and the
/// master seed. Model initialization and the training loop draw from
/// separate child streams of the master seed.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  std::uint64_t seed = 42;

  std::uint64_t model_seed() const { return Rng(seed).child(100).seed(); }
  std::uint64_t train_seed() const { return Rng(seed).child(200).seed(); }
};

/// Parses a flat `key = value` text file ('#' starts a comment). Unknown
/// keys and malformed values raise config_error with the line number.
RunConfig load_run_config(const std::string& path);

/// Applies `key=value` pairs onto a config (used for file contents and for
/// CLI overrides).
void apply_config_pairs(RunConfig& cfg, const std::map<std::string, std::string>& pairs);

/// Canonical serialization of every key; equal configs produce equal text.
std::string config_text(const RunConfig& cfg);

/// FNV-1a digest of the canonical text, hex-encoded.
std::string config_digest(const RunConfig& cfg);

}  // namespace bhpeft
