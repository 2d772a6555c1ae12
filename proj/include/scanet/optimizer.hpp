#pragma once

#include <cstdint>
#include <vector>

#include "scanet/tensor.hpp"

namespace scanet {

// First/second Adam moment buffers, one pair per parameter tensor.
struct OptimizerState {
    std::vector<std::vector<float>> m;
    std::vector<std::vector<float>> v;
    long step = 0;

    static OptimizerState for_params(const std::vector<Tensor>& params);
};

struct AdamWConfig {
    float lr = 1e-4f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    float weight_decay = 1e-4f;
};

// One AdamW update over all parameters. Decay is decoupled: each weight is
// shrunk by lr * wd * w before the bias-corrected Adam delta is applied.
// Parameters with no accumulated gradient still decay.
void adamw_step(std::vector<Tensor>& params, OptimizerState& state,
                const AdamWConfig& cfg);

}  // namespace scanet
