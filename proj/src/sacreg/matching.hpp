#pragma once

#include "tensor.hpp"

namespace sacreg {

// k^3 x 3 table of integer window offsets (d',h',w'), lexicographic order.
// Rows sum to zero and the center row is (0,0,0).
template <typename T>
TensorT<T> relative_grid(int k);

// Raw matching logits: row v holds the k^3 inner products between the fixed
// feature at voxel v and the moving features over v's window (replicate
// padding). Differentiable in both feature maps.
template <typename T>
TensorT<T> similarity_logits(const TensorT<T>& f_f, const TensorT<T>& f_m, int k);

// Softmax of the logits; rows sum to 1.
template <typename T>
TensorT<T> similarity_scores(const TensorT<T>& f_f, const TensorT<T>& f_m, int k);

// Expected offset under the score distribution: scores[M,k^3] * G[k^3,3],
// reshaped to [3,D,H,W]. Every component lies in [-floor(k/2), floor(k/2)].
template <typename T>
TensorT<T> flow_from_scores(const TensorT<T>& scores, const TensorT<T>& grid,
                            int d, int h, int w);

// output(x) = input(x + flow(x)), trilinear with border clamp. Differentiable
// in both input values and flow (flow gradient is zero where sampling is
// clamped to the border).
template <typename T>
TensorT<T> warp(const TensorT<T>& input, const TensorT<T>& flow);

// Trilinear upsampling of a [3,d,h,w] flow to exactly doubled extents, with
// displacement values multiplied by 2 (voxel units halve in size).
template <typename T>
TensorT<T> upsample_flow2x(const TensorT<T>& flow);

// phi_out(x) = delta(x) + phi_hat(x + delta(x)): apply the fine correction
// first, then the coarse flow sampled where the correction lands.
template <typename T>
TensorT<T> compose(const TensorT<T>& phi_hat, const TensorT<T>& delta);

// Final-scale flow estimator: concat on channels -> conv3d -> leaky_relu ->
// conv3d to 3 channels (zero-initialized, so the initial output is zero).
struct FlowHeadParams {
    Tensor k1, b1;  // [hidden, 2*C, 3,3,3], [hidden]
    Tensor k2, b2;  // [3, hidden, 3,3,3], [3]
};

Tensor conv_flow_head(const Tensor& f_fixed, const Tensor& f_moving_warped,
                      const FlowHeadParams& p);

}  // namespace sacreg
