#pragma once

#include <array>

#include "vaxpred/model.hpp"

namespace vaxpred::reference {

/// Serial straight-line forward pass, written independently of the kernel
/// path: plain nested loops, no shared matmul/softmax helpers, no OpenMP.
/// Kept as the correctness oracle for model_forward and as the baseline the
/// benchmark compares against.
std::array<double, 2> forward_logits(const EmbeddingBundle& bundle, const Mat& descriptors,
                                     const ModelParams& p, const ModelConfig& config);

}  // namespace vaxpred::reference
