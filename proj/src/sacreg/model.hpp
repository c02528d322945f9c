#pragma once

#include <string>
#include <utility>
#include <vector>

#include "config.hpp"
#include "encoder.hpp"
#include "matching.hpp"
#include "sacb.hpp"

namespace sacreg {

struct ScaleDiagnostic {
    int level = 0;        // 5..1, matching order coarse to fine
    double max_norm = 0.0;   // of the per-scale residual flow, scale-i voxels
    double mean_norm = 0.0;
};

struct PyramidResult {
    Tensor flow;  // full-resolution [3,D,H,W]
    std::vector<ScaleDiagnostic> diagnostics;
};

// All learnable state of the registration network plus the forward cascade.
// Parameters are float leaf tensors with requires_grad=true, registered under
// stable names for checkpointing and Adam state.
class RegistrationModel {
public:
    RegistrationModel(const TrainConfig& cfg, uint64_t init_seed);

    // encode both volumes, match coarse-to-fine per the enabled SACB scales,
    // and compose the final full-resolution flow
    PyramidResult register_pair(const Tensor& moving, const Tensor& fixed) const;

    std::vector<std::pair<std::string, Tensor>>& named_parameters() {
        return params_;
    }
    const std::vector<std::pair<std::string, Tensor>>& named_parameters() const {
        return params_;
    }

    const TrainConfig& config() const { return cfg_; }

private:
    const SacbParams* sacb_for(int scale, int stream) const;
    Tensor refine(const Tensor& f, int scale, int stream) const;

    TrainConfig cfg_;
    EncoderParams encoder_;
    // sacb_[scale-2][stream]; stream 0 = fixed, 1 = moving (same index when
    // parameters are shared across streams); -1 when SACB is disabled there
    int sacb_index_[4][2];
    std::vector<SacbParams> sacb_;
    FlowHeadParams head_;
    std::vector<std::pair<std::string, Tensor>> params_;
};

}  // namespace sacreg
