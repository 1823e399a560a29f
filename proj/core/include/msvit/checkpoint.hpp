#pragma once

#include <memory>
#include <string>

#include "msvit/model.hpp"

namespace msvit {

// Binary checkpoint: magic "MSVT", format version, the config's canonical
// text, then every parameter and buffer as (path, shape, f64 data) in store
// order. Little-endian throughout.
inline constexpr uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Model& model, const std::string& file);

// Rebuilds the model from the embedded config and loads the weights.
std::unique_ptr<Model> load_checkpoint(const std::string& file);

// Loads weights into an existing model; the embedded config's canonical
// text must match the model's exactly, else shapes could silently disagree.
void load_checkpoint_into(Model& model, const std::string& file);

// Config stored in a checkpoint without loading tensors.
ModelConfig peek_checkpoint_config(const std::string& file);

}  // namespace msvit
