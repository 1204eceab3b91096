#pragma once

#include <filesystem>

#include "cobrar/dataset.hpp"
#include "cobrar/models.hpp"
#include "cobrar/training.hpp"

namespace cobrar::models {

struct Checkpoint {
  Model model;
  data::Fingerprint fingerprint;
  train::TrainConfig config;
};

// Self-describing text layout: format header, model kind, dataset
// fingerprint, architecture, training config, then each tensor in row-major
// order as hexadecimal floats (exact round trip).
void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const data::Fingerprint& fingerprint,
                     const train::TrainConfig& config);

Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace cobrar::models
