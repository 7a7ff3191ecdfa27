#pragma once

#include <string>

#include "vaxpred/model.hpp"

namespace vaxpred {

struct Checkpoint {
    ModelConfig config;
    ModelParams params;
};

/// Versioned binary checkpoint: magic "VVCK", u32 version, the config fields,
/// then all 16 parameter tensors shape-tagged as little-endian float64.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);

/// Errors: bad magic/version, truncation, tensor name/shape disagreeing with
/// the stored config, non-finite parameter values, trailing bytes.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace vaxpred
