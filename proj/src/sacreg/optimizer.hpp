#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tensor.hpp"

namespace sacreg {

// Bias-corrected Adam over a fixed parameter list, with always-on global-norm
// gradient clipping (matching-based flows can spike gradients early on).
class Adam {
public:
    Adam(const std::vector<std::pair<std::string, Tensor>>& params,
         double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
         double clip_norm = 10.0);

    // consumes the accumulated gradients (missing gradients count as zero),
    // then zeroes them
    void step();

    int64_t iteration() const { return t_; }
    void set_iteration(int64_t t) { t_ = t; }

    // moment buffers exposed for checkpointing, aligned with the param list
    std::vector<std::vector<float>>& first_moments() { return m_; }
    std::vector<std::vector<float>>& second_moments() { return v_; }
    const std::vector<std::pair<std::string, Tensor>>& params() const {
        return params_;
    }

private:
    std::vector<std::pair<std::string, Tensor>> params_;
    std::vector<std::vector<float>> m_, v_;
    double lr_, beta1_, beta2_, eps_, clip_norm_;
    int64_t t_ = 0;
};

}  // namespace sacreg
