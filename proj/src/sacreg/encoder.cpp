#include "encoder.hpp"

namespace sacreg {

Tensor conv_block(const Tensor& x, const ConvBlockParams& p) {
    const int k = p.kernel.dim(2);
    Tensor y = conv3d(x, p.kernel, p.bias, (k - 1) / 2);
    y = instance_norm(y, p.gamma, p.beta);
    return leaky_relu(y);
}

FeaturePyramid encode(const Tensor& volume, const EncoderParams& params) {
    check(params.blocks.size() == 5, "encode: expected 5 conv blocks");
    check(volume.rank() == 4, "encode: expected a [C,D,H,W] input");
    for (int a = 1; a <= 3; ++a) {
        check(volume.dim(a) % 16 == 0,
              "encode: spatial extents must be divisible by 16, got " +
                  shape_str(volume.shape()));
    }
    FeaturePyramid pyr;
    Tensor x = volume;
    for (int i = 0; i < 5; ++i) {
        if (i > 0) x = avg_pool3d(x);
        x = conv_block(x, params.blocks[static_cast<std::size_t>(i)]);
        pyr.levels[static_cast<std::size_t>(i)] = x;
    }
    return pyr;
}

}  // namespace sacreg
