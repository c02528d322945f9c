#pragma once

#include <array>
#include <vector>

#include "tensor.hpp"

namespace sacreg {

// conv3d -> instance_norm -> leaky_relu(0.1)
struct ConvBlockParams {
    Tensor kernel;  // [Cout, Cin, k, k, k]
    Tensor bias;    // [Cout]
    Tensor gamma;   // [Cout]
    Tensor beta;    // [Cout]
};

// One block per scale; identical parameters are used for the moving and the
// fixed image (weight sharing).
struct EncoderParams {
    std::vector<ConvBlockParams> blocks;  // exactly 5
    std::vector<int> channels;            // ch[1..5] as channels[0..4]
    int kernel_size = 3;
};

// Five feature maps; level i (1-based) has extents [D,H,W] / 2^(i-1).
struct FeaturePyramid {
    std::array<Tensor, 5> levels;
};

Tensor conv_block(const Tensor& x, const ConvBlockParams& p);

// level 1 = ConvBlock(volume); level i+1 = ConvBlock(avg_pool3d(level i)).
// Volume extents must be divisible by 16 (four halvings).
FeaturePyramid encode(const Tensor& volume, const EncoderParams& params);

}  // namespace sacreg
