#pragma once

#include <cstddef>
#include <cstdint>

#include "plm/model.hpp"

namespace plm {

struct GridStepOptions {
    std::size_t batch = 1;
    /// Tokens per row including [CLS] and [SEP].
    std::size_t length = 32;
    std::uint64_t seed = 0;
    /// Models whose parameters plus gradients exceed this run layer by layer.
    std::size_t memory_budget = std::size_t{3} << 29;
    bool force_streamed = false;
};

struct GridStepResult {
    std::size_t parameter_count = 0;
    double loss = 0.0;
    double grad_norm = 0.0;
    bool finite = false;
    bool streamed = false;
};

/// One MLM forward/backward step on a random batch.
///
/// Streamed mode never holds more than one encoder layer: the forward pass
/// keeps only each layer's input, and the backward pass regenerates each layer
/// from its seed, recomputes it on a tape and pulls the upstream gradient
/// through it. Values and gradients match the in-memory path.
GridStepResult grid_step(const ModelConfig& config, const GridStepOptions& options = {});

}  // namespace plm
