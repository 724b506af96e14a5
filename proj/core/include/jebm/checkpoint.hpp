#pragma once

#include <string>
#include <utility>
#include <vector>

#include "jebm/model.hpp"
#include "jebm/training.hpp"

namespace jebm {

/// Thrown on malformed or inconsistent checkpoints.
struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Stable (name, tensor) enumeration of every learnable parameter, in the
/// order they are laid out inside weights.bin.
std::vector<std::pair<std::string, Tensor*>> named_parameters(Models& models);

/// Writes manifest.json (architecture + tensor index + optional trainer
/// state) and weights.bin (flat little-endian values, f32 or f64 per the
/// model dtype) into `dir`, creating it if needed.
void save_checkpoint(const std::string& dir, Models& models,
                     Trainer* trainer = nullptr);

/// Rebuilds the models from the manifest architecture and loads the weights.
/// Shape or index mismatches raise CheckpointError.
Models load_checkpoint(const std::string& dir);

/// True when the manifest carries trainer state.
bool checkpoint_has_trainer(const std::string& dir);

/// Restores optimizer moments and the iteration counter into `trainer`,
/// which must wrap the models loaded from the same checkpoint.
void restore_trainer(const std::string& dir, Models& models, Trainer& trainer);

}  // namespace jebm
