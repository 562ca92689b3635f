#pragma once

#include <filesystem>

#include "fewshot/model.hpp"

namespace fewshot {

// Versioned little-endian container holding the extractor config, the stage
// reached, and every parameter array with its shape.
void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace fewshot
