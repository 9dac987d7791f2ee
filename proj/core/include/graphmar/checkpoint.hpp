#pragma once

#include <filesystem>
#include <string>

#include "graphmar/network.hpp"

namespace graphmar {

struct CheckpointInfo {
  std::string tag;  // "final", "best", ...
  int epoch = 0;
  double validation_psnr = 0.0;
};

/// Directory layout: manifest.json (config, seed, tensor list) plus one binary
/// tensor per parameter and per batch-norm running statistic. Values round
/// trip bit-exactly.
void save_checkpoint(Network& net, const std::filesystem::path& dir, const CheckpointInfo& info = {});

Network load_checkpoint(const std::filesystem::path& dir, CheckpointInfo* info = nullptr);

/// 16 hex digits identifying the configuration and parameter values.
std::string checkpoint_id(Network& net);

}  // namespace graphmar
