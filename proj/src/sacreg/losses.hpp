#pragma once

#include <utility>

#include "tensor.hpp"

namespace sacreg {

// Negative local normalized cross-correlation, summed over all voxels whose
// window fits entirely inside the volume. Per-window value lies in [-1, 1]
// (eps=1e-5 inside the square root guards zero variance). Differentiable in
// both volumes. mean_normalize divides by the number of contributing windows
// so the weight of the regularizer is comparable across volume sizes.
template <typename T>
TensorT<T> ncc_loss(const TensorT<T>& fixed, const TensorT<T>& warped,
                    int window = 9, bool mean_normalize = false);

// Mean over all existing forward differences (3 components x 3 axes) of the
// squared difference — a unit slope along one axis in one component
// contributes exactly 1/9.
template <typename T>
TensorT<T> smoothness(const TensorT<T>& flow);

struct LossReport {
    double total = 0.0;
    double sim = 0.0;
    double reg = 0.0;
    double lambda = 0.0;
};

// ncc_loss(fixed, warp(moving, flow)) + lambda * smoothness(flow)
std::pair<Tensor, LossReport> total_loss(const Tensor& moving,
                                         const Tensor& fixed, const Tensor& flow,
                                         double lambda, int ncc_window = 9,
                                         bool ncc_mean = false);

}  // namespace sacreg
