#pragma once

#include <cstdint>

#include "clustering.hpp"
#include "tensor.hpp"

namespace sacreg {

// Parameters of one Spatial-Awareness Convolution Block. C_out == C_in (the
// residual add requires it). F_w and F_b are two-layer MLPs over centroid
// vectors; their zero-initialized output layers make the block start as a
// plain shared convolution (modulation 1+tanh(0) == 1, bias 0).
struct SacbParams {
    Tensor w;  // global kernel [C, C, k^3]
    Tensor fw_w1, fw_b1, fw_w2, fw_b2;  // centroid -> kernel modulation
    Tensor fb_w1, fb_b1, fb_w2, fb_b2;  // centroid -> bias
    int k = 3;
};

struct SacbConfig {
    int clusters = 7;
    ContextMode mode = ContextMode::spatial;
    int kmeans_max_iter = 25;
    double kmeans_tol = 1e-4;
    bool detach_centroids = false;  // fully detach S^c for comparison runs
};

template <typename T>
struct AdaptiveKernelSetT {
    TensorT<T> weights;  // [N, C*C*k^3]; row n flattens [C_out, C_in*k^3]
    TensorT<T> biases;   // [N, C]
};
using AdaptiveKernelSet = AdaptiveKernelSetT<float>;

// W_n = (1 + tanh(F_w(S_c))) elementwise* W, b_n = F_b(S_c), per centroid row.
template <typename T>
AdaptiveKernelSetT<T> adaptive_kernels(const TensorT<T>& s_c, const TensorT<T>& w,
                                       const TensorT<T>& fw_w1, const TensorT<T>& fw_b1,
                                       const TensorT<T>& fw_w2, const TensorT<T>& fw_b2,
                                       const TensorT<T>& fb_w1, const TensorT<T>& fb_b1,
                                       const TensorT<T>& fb_w2, const TensorT<T>& fb_b2);

AdaptiveKernelSet adaptive_kernels(const Tensor& s_c, const SacbParams& p);

// Region-dependent convolution: each voxel's unfolded patch (replicate
// padding) is convolved with the kernel of its own cluster, plus that
// cluster's bias. Differentiable w.r.t. f, weights, and biases.
template <typename T>
TensorT<T> sac_apply(const TensorT<T>& f, const std::vector<int32_t>& assignments,
                     int n_clusters, const TensorT<T>& weights,
                     const TensorT<T>& biases, int k);

// Full block: spatial_context -> kmeans -> cluster_centroids ->
// adaptive_kernels -> sac_apply -> leaky_relu -> residual add.
Tensor sacb_forward(const Tensor& f, const SacbParams& params,
                    const SacbConfig& cfg, uint64_t kmeans_seed);

}  // namespace sacreg
