// SPDX-FileCopyrightText: (c) 2026 The babylab Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>

#include "babylab/model.hpp"

namespace babylab {

/// Checkpoint container layout (all integers little-endian):
///
///   bytes 0..7   magic "BBLCKPT1"
///   bytes 8..15  u64 header length H
///   next H bytes UTF-8 JSON header:
///                  {"config": ModelConfig, "tensors": [{"name", "rows", "cols",
///                   "offset"}...], "metadata": {...}}
///   remainder    float32 tensor blobs, row-major, at the listed byte offsets
///                relative to the start of the blob section
///
/// Tensors whose names start with "optim/" carry optimizer state and are not
/// part of the model.
struct Checkpoint {
  TransformerModel model;
  nlohmann::json metadata = nlohmann::json::object();
  std::map<std::string, Matrix<float>> extra;
};

void save_checkpoint(const std::filesystem::path& path, const TransformerModel& model,
                     const nlohmann::json& metadata,
                     const std::map<std::string, Matrix<float>>& extra = {});

/// Loads and validates a checkpoint: every layout tensor present with the
/// expected shape, and the stored parameter total equal to count_params.
/// Throws IoError or ConfigError.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace babylab
