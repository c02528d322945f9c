#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "optimizer.hpp"
#include "tensor.hpp"

namespace sacreg {

// Checkpoint container (magic "SACK"): iteration counter, config snapshot,
// then named f32 tensors; Adam moments are stored under ".m"/".v" suffixes.
// save -> load -> save is byte-identical.
struct CheckpointData {
    uint64_t iteration = 0;
    std::string config_text;
    std::vector<std::pair<std::string, std::vector<int>>> shapes;
    std::vector<std::vector<float>> buffers;  // aligned with shapes

    const std::vector<float>* find(const std::string& name) const;
};

void save_checkpoint(const std::string& path, uint64_t iteration,
                     const std::string& config_text,
                     const std::vector<std::pair<std::string, Tensor>>& params,
                     const Adam* opt_state);

CheckpointData load_checkpoint(const std::string& path);

// copies matching entries into params (shapes must agree) and, when given,
// restores the optimizer moments and iteration counter
void apply_checkpoint(const CheckpointData& ck,
                      std::vector<std::pair<std::string, Tensor>>& params,
                      Adam* opt_state);

}  // namespace sacreg
