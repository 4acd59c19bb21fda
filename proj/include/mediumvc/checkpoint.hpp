#pragma once

#include <filesystem>
#include <string>

#include "mediumvc/config.hpp"
#include "mediumvc/nn.hpp"

namespace mvc {

struct AdamState;

/// Directory layout: manifest.json (names, shapes, dtype "f32", byte
/// offsets, config hash, step) + params.bin (float32 LE in manifest order).
struct CheckpointMeta {
  std::string model;  // "singlevc" | "mediumvc"
  ConfigMap config;
  std::string config_hash;
  long long step = 0;
  bool random_init = true;
};

void save_checkpoint(const std::filesystem::path& dir, const nn::ParamStore& params,
                     const CheckpointMeta& meta, const AdamState* optimizer = nullptr);

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& dir);

/// Fills `params` (and `optimizer` when given and present) from disk. Names
/// and shapes must match exactly.
void load_checkpoint_params(const std::filesystem::path& dir, nn::ParamStore& params,
                            AdamState* optimizer = nullptr);

}  // namespace mvc
